//! Architecture shorthand and receptive-field geometry.
//!
//! Networks are written as dash-joined tokens: `Ck` (convolution with k
//! filters), `Fk` (fully-connected with k units), `P` (max pool), `D`
//! (dropout), `Op` (output). ReLU follows every convolutional and
//! fully-connected layer except the output, so it is not spelled out.
//! Example: `C96-P-F500-D`.
//!
//! The shorthand carries no kernel sizes or strides; those come from a
//! [`GeometryProfile`] chosen when the string is parsed.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// One parsed layer. Convolution kernel/stride/padding are filled in from
/// the geometry profile, not from the shorthand.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerSpec {
    Conv {
        width: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        relu_after: bool,
    },
    Pool {
        kernel: usize,
        stride: usize,
    },
    Fc {
        width: usize,
        relu_after: bool,
    },
    Dropout,
    /// Fully-connected output layer; its width is task-dependent and fixed
    /// at model-build time. No ReLU after it.
    Output,
}

impl LayerSpec {
    fn token(&self) -> String {
        match self {
            LayerSpec::Conv { width, .. } => format!("C{width}"),
            LayerSpec::Pool { .. } => "P".to_string(),
            LayerSpec::Fc { width, .. } => format!("F{width}"),
            LayerSpec::Dropout => "D".to_string(),
            LayerSpec::Output => "Op".to_string(),
        }
    }

    pub fn is_spatial(&self) -> bool {
        matches!(self, LayerSpec::Conv { .. } | LayerSpec::Pool { .. })
    }
}

/// Kernel/stride/padding assignments for the tokens of a shorthand string.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeometryProfile {
    /// Per conv occurrence, in order; the last entry repeats for any
    /// further convolutions.
    pub conv: Vec<ConvGeom>,
    pub pool_kernel: usize,
    pub pool_stride: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl GeometryProfile {
    /// Digit-scale nets: 5x5 convolutions, stride 1, no padding; 2x2 pooling
    /// with stride 2. Keeps a 28x28 input alive through two conv/pool pairs.
    pub fn mnist() -> Self {
        GeometryProfile {
            conv: vec![ConvGeom {
                kernel: 5,
                stride: 1,
                pad: 0,
            }],
            pool_kernel: 2,
            pool_stride: 2,
        }
    }

    /// The conventional five-conv-layer table for 227x227 inputs: 11x11/4,
    /// then 5x5 pad 2, then 3x3 pad 1 for the rest; 3x3 stride-2 pooling.
    pub fn alexnet() -> Self {
        GeometryProfile {
            conv: vec![
                ConvGeom {
                    kernel: 11,
                    stride: 4,
                    pad: 0,
                },
                ConvGeom {
                    kernel: 5,
                    stride: 1,
                    pad: 2,
                },
                ConvGeom {
                    kernel: 3,
                    stride: 1,
                    pad: 1,
                },
            ],
            pool_kernel: 3,
            pool_stride: 2,
        }
    }

    fn conv_geom(&self, occurrence: usize) -> ConvGeom {
        *self
            .conv
            .get(occurrence)
            .unwrap_or_else(|| self.conv.last().expect("profile has no conv geometry"))
    }
}

/// An ordered layer list parsed from the shorthand. At most one `Op` layer,
/// and only in final position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// Appends another spec (e.g. a classifier head onto a feature trunk).
    pub fn concat(&self, head: &NetworkSpec) -> Result<NetworkSpec> {
        if self.layers.iter().any(|l| matches!(l, LayerSpec::Output)) {
            return Err(Error::Config(
                "cannot append layers after an output layer".into(),
            ));
        }
        let mut layers = self.layers.clone();
        layers.extend(head.layers.iter().cloned());
        Ok(NetworkSpec { layers })
    }

    /// The dash-joined shorthand; inverse of [`parse_arch`].
    pub fn print(&self) -> String {
        self.layers
            .iter()
            .map(LayerSpec::token)
            .collect::<Vec<_>>()
            .join("-")
    }

    /// Layer count of the leading conv/pool section.
    pub fn spatial_prefix_len(&self) -> usize {
        self.layers
            .iter()
            .take_while(|l| l.is_spatial())
            .count()
    }
}

/// Parses the shorthand with digit-scale geometry defaults.
pub fn parse_arch(shorthand: &str) -> Result<NetworkSpec> {
    parse_arch_with(shorthand, &GeometryProfile::mnist())
}

/// Parses the shorthand, assigning kernels/strides from `profile`.
///
/// The grammar is case-sensitive and whitespace is rejected. Errors carry
/// the byte offset of the offending token.
pub fn parse_arch_with(shorthand: &str, profile: &GeometryProfile) -> Result<NetworkSpec> {
    if shorthand.is_empty() {
        return Err(Error::parse(0, "empty architecture string"));
    }
    let mut layers = Vec::new();
    let mut conv_count = 0usize;
    let mut pos = 0usize;
    for token in shorthand.split('-') {
        if layers
            .last()
            .is_some_and(|l| matches!(l, LayerSpec::Output))
        {
            return Err(Error::parse(pos, "output layer must be last"));
        }
        let layer = match token {
            "" => return Err(Error::parse(pos, "empty token")),
            "P" => LayerSpec::Pool {
                kernel: profile.pool_kernel,
                stride: profile.pool_stride,
            },
            "D" => LayerSpec::Dropout,
            "Op" => LayerSpec::Output,
            _ => {
                let (kind, digits) = token.split_at(1);
                let width: usize = digits.parse().map_err(|_| {
                    Error::parse(
                        pos,
                        format!("token `{token}` is not one of Ck, Fk, P, D, Op"),
                    )
                })?;
                if width == 0 {
                    return Err(Error::parse(pos, format!("token `{token}` has width 0")));
                }
                match kind {
                    "C" => {
                        let g = profile.conv_geom(conv_count);
                        conv_count += 1;
                        LayerSpec::Conv {
                            width,
                            kernel: g.kernel,
                            stride: g.stride,
                            pad: g.pad,
                            relu_after: true,
                        }
                    }
                    "F" => LayerSpec::Fc {
                        width,
                        relu_after: true,
                    },
                    _ => {
                        return Err(Error::parse(
                            pos,
                            format!("unknown token `{token}`"),
                        ))
                    }
                }
            }
        };
        layers.push(layer);
        pos += token.len() + 1;
    }
    Ok(NetworkSpec { layers })
}

// ---------------------------------------------------------------------------
// receptive fields
// ---------------------------------------------------------------------------

/// Geometry of one layer's cells in input-pixel coordinates: the cell grid
/// has spacing `stride`, each cell sees a `size`-pixel square, and the center
/// of cell (0,0) sits at pixel `(offset, offset)` (fractional for even
/// kernels; negative when padding pulls it off-canvas).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReceptiveField {
    pub size: usize,
    pub stride: usize,
    pub offset: f64,
}

impl ReceptiveField {
    /// Input pixel of this receptive field's identity map.
    pub fn input() -> Self {
        ReceptiveField {
            size: 1,
            stride: 1,
            offset: 0.0,
        }
    }

    /// Center of grid cell (row, col) in input-pixel coordinates, (y, x).
    pub fn center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.offset + row as f64 * self.stride as f64,
            self.offset + col as f64 * self.stride as f64,
        )
    }

    fn compose(&self, kernel: usize, stride: usize, pad: usize) -> Self {
        ReceptiveField {
            size: self.size + (kernel - 1) * self.stride,
            stride: self.stride * stride,
            offset: self.offset + ((kernel - 1) as f64 / 2.0 - pad as f64) * self.stride as f64,
        }
    }
}

/// Per-layer receptive fields for the conv/pool prefix of `spec`, in layer
/// order. Entry `l` describes the feature grid *after* layer `l`.
pub fn receptive_fields(spec: &NetworkSpec) -> Vec<ReceptiveField> {
    let mut rf = ReceptiveField::input();
    let mut out = Vec::new();
    for layer in &spec.layers {
        match layer {
            LayerSpec::Conv {
                kernel,
                stride,
                pad,
                ..
            } => rf = rf.compose(*kernel, *stride, *pad),
            LayerSpec::Pool { kernel, stride } => rf = rf.compose(*kernel, *stride, 0),
            _ => break,
        }
        out.push(rf);
    }
    out
}

/// Receptive field after layer `layer` (0-based). Layers past the spatial
/// prefix have no pixel geometry and yield a geometry error.
pub fn receptive_field_at(spec: &NetworkSpec, layer: usize) -> Result<ReceptiveField> {
    let fields = receptive_fields(spec);
    fields.get(layer).copied().ok_or_else(|| {
        Error::Geometry(format!(
            "layer {layer} has no spatial structure (conv/pool prefix is {} layers)",
            fields.len()
        ))
    })
}

/// Spatial output shapes (C, H, W) after each conv/pool prefix layer for the
/// given input shape.
pub fn spatial_shapes(
    spec: &NetworkSpec,
    input: (usize, usize, usize),
) -> Result<Vec<(usize, usize, usize)>> {
    let (mut c, mut h, mut w) = input;
    let mut out = Vec::new();
    for layer in &spec.layers {
        match layer {
            LayerSpec::Conv {
                width,
                kernel,
                stride,
                pad,
                ..
            } => {
                if h + 2 * pad < *kernel || w + 2 * pad < *kernel {
                    return Err(Error::dimension(
                        "height",
                        format!("{h}x{w} input too small for {kernel}x{kernel} convolution"),
                    ));
                }
                h = (h + 2 * pad - kernel) / stride + 1;
                w = (w + 2 * pad - kernel) / stride + 1;
                c = *width;
            }
            LayerSpec::Pool { kernel, stride } => {
                if h < *kernel || w < *kernel {
                    return Err(Error::dimension(
                        "height",
                        format!("{h}x{w} input too small for {kernel}x{kernel} pool"),
                    ));
                }
                h = (h - kernel) / stride + 1;
                w = (w - kernel) / stride + 1;
            }
            _ => break,
        }
        out.push((c, h, w));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_two_conv_two_pool() {
        let spec = parse_arch("C96-P-C256-P").unwrap();
        assert_eq!(spec.layers.len(), 4);
        assert!(matches!(
            spec.layers[0],
            LayerSpec::Conv {
                width: 96,
                relu_after: true,
                ..
            }
        ));
        assert!(matches!(spec.layers[1], LayerSpec::Pool { .. }));
        assert!(matches!(
            spec.layers[2],
            LayerSpec::Conv { width: 256, .. }
        ));
        assert!(matches!(spec.layers[3], LayerSpec::Pool { .. }));
    }

    #[test]
    fn parses_head_with_output() {
        let spec = parse_arch("F1000-D-Op").unwrap();
        assert_eq!(
            spec.layers,
            vec![
                LayerSpec::Fc {
                    width: 1000,
                    relu_after: true
                },
                LayerSpec::Dropout,
                LayerSpec::Output,
            ]
        );
    }

    #[test]
    fn empty_string_fails_at_position_zero() {
        match parse_arch("") {
            Err(Error::Parse { pos: 0, .. }) => {}
            other => panic!("expected parse error at 0, got {other:?}"),
        }
    }

    #[test]
    fn error_positions_point_at_the_bad_token() {
        match parse_arch("C96-Q-P") {
            Err(Error::Parse { pos, .. }) => assert_eq!(pos, 4),
            other => panic!("{other:?}"),
        }
        match parse_arch("C96-C-P") {
            Err(Error::Parse { pos, .. }) => assert_eq!(pos, 4),
            other => panic!("{other:?}"),
        }
        match parse_arch("Op-C96") {
            Err(Error::Parse { pos, .. }) => assert_eq!(pos, 3),
            other => panic!("{other:?}"),
        }
        // whitespace is rejected, grammar is case-sensitive
        assert!(parse_arch("C96 - P").is_err());
        assert!(parse_arch("c96-P").is_err());
        assert!(parse_arch("C0-P").is_err());
    }

    #[test]
    fn round_trips_known_strings() {
        for s in [
            "C96-P-C256-P",
            "F1000-D-Op",
            "C96-P-C256-P-C384-C384-C256-P",
            "C256-C128-F500-D-Op",
            "C96-P-F500-D",
        ] {
            assert_eq!(parse_arch(s).unwrap().print(), s);
        }
    }

    #[test]
    fn concat_composes_trunk_and_head() {
        let bcnn = parse_arch("C96-P-C256-P").unwrap();
        let head = parse_arch("F500-D-Op").unwrap();
        let full = bcnn.concat(&head).unwrap();
        assert_eq!(full.print(), "C96-P-C256-P-F500-D-Op");
        assert_eq!(parse_arch(&full.print()).unwrap(), full);
        assert!(full.concat(&head).is_err());
    }

    #[test]
    fn single_conv_receptive_field() {
        let spec = parse_arch("C8").unwrap();
        let rf = receptive_field_at(&spec, 0).unwrap();
        assert_eq!(rf.size, 5);
        assert_eq!(rf.stride, 1);
        assert_eq!(rf.center(0, 0), (2.0, 2.0));
    }

    #[test]
    fn conv_then_pool_composes() {
        let spec = parse_arch("C8-P").unwrap();
        let rf = receptive_field_at(&spec, 1).unwrap();
        // size = 5 + (2-1)*1, stride = 1*2
        assert_eq!(rf.size, 6);
        assert_eq!(rf.stride, 2);
    }

    #[test]
    fn alexnet_conv3_has_stride_16() {
        let spec = parse_arch_with(
            "C96-P-C256-P-C384-C384-C256-P",
            &GeometryProfile::alexnet(),
        )
        .unwrap();
        let rfs = receptive_fields(&spec);
        // layers: conv1 pool1 conv2 pool2 conv3 ...
        assert_eq!(rfs[2].stride, 8); // after conv2
        assert_eq!(rfs[4].stride, 16); // after conv3
        assert_eq!(rfs[5].stride, 16); // conv4
        assert_eq!(rfs[6].stride, 16); // conv5
    }

    #[test]
    fn querying_past_fc_is_a_geometry_error() {
        let spec = parse_arch("C8-P-F10-Op").unwrap();
        assert!(receptive_field_at(&spec, 1).is_ok());
        assert!(matches!(
            receptive_field_at(&spec, 2),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn spatial_shapes_on_digit_input() {
        let spec = parse_arch("C16-P-C32-P").unwrap();
        let shapes = spatial_shapes(&spec, (1, 28, 28)).unwrap();
        assert_eq!(
            shapes,
            vec![(16, 24, 24), (16, 12, 12), (32, 8, 8), (32, 4, 4)]
        );
    }

    /// Brute-force dependency-cone tracing: computes, for a cell index along
    /// one spatial axis, the inclusive input-pixel interval it depends on
    /// (borders ignored, matching the recurrence's infinite-canvas view).
    fn cone(layers: &[(usize, usize, usize)], level: usize, cell: isize) -> (isize, isize) {
        if level == 0 {
            return (cell, cell);
        }
        let (k, s, p) = layers[level - 1];
        let lo = cell * s as isize - p as isize;
        let hi = lo + k as isize - 1;
        (
            cone(layers, level - 1, lo).0,
            cone(layers, level - 1, hi).1,
        )
    }

    #[test]
    fn recurrence_matches_cone_tracing_oracle() {
        let mut stream = crate::rng::Stream::named(99, crate::rng::StreamKind::Init);
        for _ in 0..50 {
            let depth = stream.next_i32_in(1, 4) as usize;
            let mut layers = Vec::new();
            let mut spec_layers = Vec::new();
            for _ in 0..depth {
                let k = stream.next_i32_in(1, 5) as usize;
                let s = stream.next_i32_in(1, 3) as usize;
                let p = stream.next_i32_in(0, 2) as usize;
                layers.push((k, s, p));
                spec_layers.push(LayerSpec::Conv {
                    width: 4,
                    kernel: k,
                    stride: s,
                    pad: p,
                    relu_after: true,
                });
            }
            let spec = NetworkSpec {
                layers: spec_layers,
            };
            let rfs = receptive_fields(&spec);
            for (level, rf) in rfs.iter().enumerate() {
                for cell in [0isize, 1, 3] {
                    let (lo, hi) = cone(&layers, level + 1, cell);
                    assert_eq!(rf.size as isize, hi - lo + 1, "size at level {level}");
                    let center = (lo + hi) as f64 / 2.0;
                    let want = rf.offset + cell as f64 * rf.stride as f64;
                    assert!((center - want).abs() < 1e-9, "center at level {level}");
                }
            }
        }
    }
}
