//! Intra-class keypoint matching evaluation.
//!
//! Pipeline, per annotated object pair of the same class: crop the bounding
//! box, pad 30 pixels, scale so the short side is 227 pixels (keypoints ride
//! the same affine map); assign each keypoint of the first image to the
//! feature-grid cell whose receptive-field center is nearest; find the cell
//! of the second image's map with the closest feature vector; convert it back
//! to pixels through the receptive-field center and normalize the distance to
//! the true location by the second image's diagonal. Pair errors aggregate to
//! instance, class, and cumulative viewpoint-binned means.
//!
//! Any feature extractor satisfying [`FeatureMapProvider`] plugs in: raw
//! pixels or any spatial layer of a trained network.

use crate::arch::{LayerSpec, ReceptiveField};
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const PAD_PIXELS: usize = 30;
pub const TARGET_MIN_SIDE: usize = 227;
pub const VIEWPOINT_BINS: usize = 10;
pub const VIEWPOINT_BIN_DEG: f64 = 18.0;
const ROTATION_TOL: f64 = 1e-6;

// ---------------------------------------------------------------------------
// images and annotations
// ---------------------------------------------------------------------------

/// Row-major H x W x C real image (interleaved channels).
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePlane {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<f32>,
}

impl ImagePlane {
    pub fn new(h: usize, w: usize, c: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != h * w * c {
            return Err(Error::dimension(
                "image",
                format!("{h}x{w}x{c} image needs {} values, got {}", h * w * c, data.len()),
            ));
        }
        Ok(ImagePlane { h, w, c, data })
    }

    pub fn at(&self, y: usize, x: usize, ch: usize) -> f32 {
        self.data[(y * self.w + x) * self.c + ch]
    }

    pub fn diagonal(&self) -> f64 {
        ((self.h * self.h + self.w * self.w) as f64).sqrt()
    }
}

/// Pixel-rectangle bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

/// One annotated object instance: image (typically the full frame), its
/// bounding box, named keypoints in image coordinates, the instance's
/// orientation as a rotation matrix, and its class.
#[derive(Debug, Clone)]
pub struct AnnotatedBox {
    pub image: ImagePlane,
    pub bbox: BBox,
    pub keypoints: Vec<(String, f64, f64)>,
    pub rotation: [[f64; 3]; 3],
    pub class_id: String,
}

/// On-disk annotation record (JSON): image path, bbox, class, row-major
/// rotation matrix, and named keypoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub image: String,
    pub bbox: [u32; 4],
    pub class: String,
    pub rotation: [f64; 9],
    pub keypoints: BTreeMap<String, [f64; 2]>,
}

impl AnnotationRecord {
    pub fn rotation_matrix(&self) -> [[f64; 3]; 3] {
        let r = &self.rotation;
        [
            [r[0], r[1], r[2]],
            [r[3], r[4], r[5]],
            [r[6], r[7], r[8]],
        ]
    }

    pub fn into_annotated(self, image: ImagePlane) -> Result<AnnotatedBox> {
        let rotation = self.rotation_matrix();
        validate_rotation(&rotation)?;
        Ok(AnnotatedBox {
            image,
            bbox: BBox {
                x: self.bbox[0] as usize,
                y: self.bbox[1] as usize,
                w: self.bbox[2] as usize,
                h: self.bbox[3] as usize,
            },
            keypoints: self
                .keypoints
                .into_iter()
                .map(|(name, [x, y])| (name, x, y))
                .collect(),
            rotation,
            class_id: self.class,
        })
    }
}

pub fn validate_rotation(r: &[[f64; 3]; 3]) -> Result<()> {
    if r.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Input("rotation matrix has non-finite entries".into()));
    }
    let rt_r = mat_mul(&transpose(r), r);
    let mut dev = 0.0;
    for (i, row) in rt_r.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let want = if i == j { 1.0 } else { 0.0 };
            dev += (v - want) * (v - want);
        }
    }
    if dev.sqrt() > ROTATION_TOL {
        return Err(Error::Input(format!(
            "matrix is not orthonormal (deviation {:.2e})",
            dev.sqrt()
        )));
    }
    if (det3(r) - 1.0).abs() > ROTATION_TOL {
        return Err(Error::Input(format!(
            "matrix determinant {} is not +1",
            det3(r)
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// preprocessing
// ---------------------------------------------------------------------------

/// Crop -> pad -> scale map applied to both pixels and keypoints:
/// `p_out = (p - bbox_origin + pad) * scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreprocessMap {
    pub bbox: BBox,
    pub scale: f64,
}

impl PreprocessMap {
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (x - self.bbox.x as f64 + PAD_PIXELS as f64) * self.scale,
            (y - self.bbox.y as f64 + PAD_PIXELS as f64) * self.scale,
        )
    }
}

/// A box after preprocessing: the resized crop, mapped keypoints, and the
/// metadata needed downstream.
#[derive(Debug, Clone)]
pub struct PreparedBox {
    pub image: ImagePlane,
    pub keypoints: Vec<(String, f64, f64)>,
    pub rotation: [[f64; 3]; 3],
    pub class_id: String,
    pub map: PreprocessMap,
}

/// Crops the bounding box, pads 30 zero pixels per side, and rescales so the
/// short side is exactly 227 pixels (aspect preserved, bilinear).
pub fn preprocess(image: &ImagePlane, bbox: BBox) -> Result<(ImagePlane, PreprocessMap)> {
    if bbox.w == 0 || bbox.h == 0 {
        return Err(Error::Input(format!(
            "degenerate bounding box {}x{}",
            bbox.w, bbox.h
        )));
    }
    if bbox.x + bbox.w > image.w || bbox.y + bbox.h > image.h {
        return Err(Error::Input(format!(
            "bounding box ({},{}) {}x{} exceeds {}x{} image",
            bbox.x, bbox.y, bbox.w, bbox.h, image.w, image.h
        )));
    }
    let (ph, pw) = (bbox.h + 2 * PAD_PIXELS, bbox.w + 2 * PAD_PIXELS);
    let scale = TARGET_MIN_SIDE as f64 / ph.min(pw) as f64;
    let (oh, ow) = if ph <= pw {
        (
            TARGET_MIN_SIDE,
            ((pw as f64 * scale).round() as usize).max(TARGET_MIN_SIDE),
        )
    } else {
        (
            ((ph as f64 * scale).round() as usize).max(TARGET_MIN_SIDE),
            TARGET_MIN_SIDE,
        )
    };
    let c = image.c;
    let mut out = vec![0.0f32; oh * ow * c];
    // padded-image sample: zero outside the crop
    let padded_at = |y: isize, x: isize, ch: usize| -> f64 {
        let (cy, cx) = (y - PAD_PIXELS as isize, x - PAD_PIXELS as isize);
        if cy < 0 || cx < 0 || cy >= bbox.h as isize || cx >= bbox.w as isize {
            0.0
        } else {
            image.at(bbox.y + cy as usize, bbox.x + cx as usize, ch) as f64
        }
    };
    for oy in 0..oh {
        let sy = oy as f64 / scale;
        let y0 = sy.floor();
        let fy = sy - y0;
        for ox in 0..ow {
            let sx = ox as f64 / scale;
            let x0 = sx.floor();
            let fx = sx - x0;
            for ch in 0..c {
                let v = (1.0 - fx) * (1.0 - fy) * padded_at(y0 as isize, x0 as isize, ch)
                    + fx * (1.0 - fy) * padded_at(y0 as isize, x0 as isize + 1, ch)
                    + (1.0 - fx) * fy * padded_at(y0 as isize + 1, x0 as isize, ch)
                    + fx * fy * padded_at(y0 as isize + 1, x0 as isize + 1, ch);
                out[(oy * ow + ox) * c + ch] = v as f32;
            }
        }
    }
    Ok((
        ImagePlane::new(oh, ow, c, out)?,
        PreprocessMap { bbox, scale },
    ))
}

/// Preprocesses a whole annotated box; keypoints must land inside the padded
/// canvas.
pub fn preprocess_box(b: &AnnotatedBox) -> Result<PreparedBox> {
    validate_rotation(&b.rotation)?;
    let (image, map) = preprocess(&b.image, b.bbox)?;
    let mut keypoints = Vec::with_capacity(b.keypoints.len());
    for (name, x, y) in &b.keypoints {
        let (px, py) = map.apply(*x, *y);
        if px < 0.0 || py < 0.0 || px >= image.w as f64 || py >= image.h as f64 {
            return Err(Error::Input(format!(
                "keypoint `{name}` falls outside the padded canvas"
            )));
        }
        keypoints.push((name.clone(), px, py));
    }
    Ok(PreparedBox {
        image,
        keypoints,
        rotation: b.rotation,
        class_id: b.class_id.clone(),
        map,
    })
}

// ---------------------------------------------------------------------------
// feature maps
// ---------------------------------------------------------------------------

/// A spatial feature map, [channels][rows][cols].
#[derive(Debug, Clone)]
pub struct FeatureMap {
    pub channels: usize,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn component(&self, ch: usize, i: usize, j: usize) -> f32 {
        self.data[(ch * self.rows + i) * self.cols + j]
    }

    pub fn vector_at(&self, i: usize, j: usize) -> Vec<f32> {
        (0..self.channels).map(|ch| self.component(ch, i, j)).collect()
    }
}

/// Anything that can turn an image into a named layer's feature map plus the
/// receptive-field geometry of that layer.
pub trait FeatureMapProvider {
    fn layer_names(&self) -> Vec<String>;
    fn extract(&self, image: &ImagePlane, layer: &str) -> Result<(FeatureMap, ReceptiveField)>;
}

/// The identity extractor: the image itself is the feature map (one cell per
/// pixel, receptive field of a single pixel).
pub struct PixelFeatures;

impl FeatureMapProvider for PixelFeatures {
    fn layer_names(&self) -> Vec<String> {
        vec!["pixels".into()]
    }

    fn extract(&self, image: &ImagePlane, layer: &str) -> Result<(FeatureMap, ReceptiveField)> {
        if layer != "pixels" {
            return Err(Error::Config(format!("unknown layer `{layer}`")));
        }
        let mut data = vec![0.0f32; image.c * image.h * image.w];
        for y in 0..image.h {
            for x in 0..image.w {
                for ch in 0..image.c {
                    data[(ch * image.h + y) * image.w + x] = image.at(y, x, ch);
                }
            }
        }
        Ok((
            FeatureMap {
                channels: image.c,
                rows: image.h,
                cols: image.w,
                data,
            },
            ReceptiveField::input(),
        ))
    }
}

/// Spatial layers of a convolutional network as feature maps. Layer names
/// enumerate the conv/pool prefix: `conv0`, `pool0`, `conv1`, ...
pub struct NetworkFeatures<'a> {
    net: &'a Network<f32>,
}

impl<'a> NetworkFeatures<'a> {
    pub fn new(net: &'a Network<f32>) -> Self {
        NetworkFeatures { net }
    }

    fn names(&self) -> Vec<String> {
        let mut names = Vec::new();
        let (mut conv, mut pool) = (0usize, 0usize);
        for layer in &self.net.spec().layers {
            match layer {
                LayerSpec::Conv { .. } => {
                    names.push(format!("conv{conv}"));
                    conv += 1;
                }
                LayerSpec::Pool { .. } => {
                    names.push(format!("pool{pool}"));
                    pool += 1;
                }
                _ => break,
            }
        }
        names
    }
}

impl<'a> FeatureMapProvider for NetworkFeatures<'a> {
    fn layer_names(&self) -> Vec<String> {
        self.names()
    }

    fn extract(&self, image: &ImagePlane, layer: &str) -> Result<(FeatureMap, ReceptiveField)> {
        let idx = self
            .names()
            .iter()
            .position(|n| n == layer)
            .ok_or_else(|| Error::Config(format!("unknown layer `{layer}`")))?;
        // HWC -> [1, C, H, W]
        let mut t = Tensor::zeros(vec![1, image.c, image.h, image.w]);
        for ch in 0..image.c {
            for y in 0..image.h {
                for x in 0..image.w {
                    t.data_mut()[(ch * image.h + y) * image.w + x] = image.at(y, x, ch);
                }
            }
        }
        let (map, rf) = self.net.spatial_features(&t, idx)?;
        let (c, h, w) = (map.shape()[1], map.shape()[2], map.shape()[3]);
        Ok((
            FeatureMap {
                channels: c,
                rows: h,
                cols: w,
                data: map.into_data(),
            },
            rf,
        ))
    }
}

// ---------------------------------------------------------------------------
// assignment and matching
// ---------------------------------------------------------------------------

/// Nearest-center grid cell for a keypoint at (x, y): independent per axis;
/// exact half-way ties go to the lower index; clamped to the grid.
pub fn assign_to_grid(
    x: f64,
    y: f64,
    rf: &ReceptiveField,
    grid_rows: usize,
    grid_cols: usize,
) -> (usize, usize) {
    let coord = |v: f64, cells: usize| -> usize {
        let raw = (v - rf.offset) / rf.stride as f64;
        // round half down so equidistant points pick the lower index
        let idx = (raw - 0.5).ceil();
        (idx.max(0.0) as usize).min(cells - 1)
    };
    (coord(y, grid_rows), coord(x, grid_cols))
}

/// Cell of `map` whose feature vector is nearest (L2) to `query`; first cell
/// in row-major order wins ties.
pub fn match_feature(query: &[f32], map: &FeatureMap) -> Result<(usize, usize)> {
    if query.len() != map.channels {
        return Err(Error::dimension(
            "features",
            format!(
                "query has {} components, map has {} channels",
                query.len(),
                map.channels
            ),
        ));
    }
    let plane = map.rows * map.cols;
    let mut best = (0usize, 0usize);
    let mut best_d = f64::INFINITY;
    for i in 0..map.rows {
        for j in 0..map.cols {
            let mut d = 0.0f64;
            let base = i * map.cols + j;
            for (ch, &q) in query.iter().enumerate() {
                let v = map.data[ch * plane + base];
                let diff = v as f64 - q as f64;
                d += diff * diff;
            }
            if d < best_d {
                best_d = d;
                best = (i, j);
            }
        }
    }
    Ok(best)
}

/// One matched keypoint: predicted and true locations in the second image's
/// pixels, and the diagonal-normalized error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointMatchRecord {
    pub name: String,
    pub predicted: (f64, f64),
    pub ground_truth: (f64, f64),
    pub error: f64,
}

/// Matches the shared keypoints of `a` into `b` and scores them.
pub fn match_pair(
    a: &PreparedBox,
    b: &PreparedBox,
    provider: &dyn FeatureMapProvider,
    layer: &str,
) -> Result<Vec<KeypointMatchRecord>> {
    let (fa, rf) = provider.extract(&a.image, layer)?;
    let (fb, _) = provider.extract(&b.image, layer)?;
    let diag = b.image.diagonal();
    let mut records = Vec::new();
    for (name, ax, ay) in &a.keypoints {
        let Some((_, bx, by)) = b.keypoints.iter().find(|(n, _, _)| n == name) else {
            continue;
        };
        let (ai, aj) = assign_to_grid(*ax, *ay, &rf, fa.rows, fa.cols);
        let query = fa.vector_at(ai, aj);
        let (mi, mj) = match_feature(&query, &fb)?;
        let (py, px) = rf.center(mi, mj);
        let error = ((px - bx).powi(2) + (py - by).powi(2)).sqrt() / diag;
        records.push(KeypointMatchRecord {
            name: name.clone(),
            predicted: (px, py),
            ground_truth: (*bx, *by),
            error,
        });
    }
    Ok(records)
}

// ---------------------------------------------------------------------------
// aggregation
// ---------------------------------------------------------------------------

/// Pairwise (cascade) summation: order-stable and accurate for long means.
pub fn stable_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2 => values[0] + values[1],
        n => stable_sum(&values[..n / 2]) + stable_sum(&values[n / 2..]),
    }
}

pub fn stable_mean(values: &[f64]) -> f64 {
    stable_sum(values) / values.len() as f64
}

/// Mean keypoint error of one instance pair.
pub fn instance_error(records: &[KeypointMatchRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Input("no shared keypoints".into()));
    }
    let errors: Vec<f64> = records.iter().map(|r| r.error).collect();
    Ok(stable_mean(&errors))
}

/// Mean instance error over all pairs of one class.
pub fn class_error(instance_errors: &[f64]) -> Result<f64> {
    if instance_errors.is_empty() {
        return Err(Error::Input("no instance pairs".into()));
    }
    Ok(stable_mean(instance_errors))
}

// ---------------------------------------------------------------------------
// viewpoint distance
// ---------------------------------------------------------------------------

fn transpose(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut t = [[0.0; 3]; 3];
    for (i, row) in m.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            t[j][i] = *v;
        }
    }
    t
}

fn mat_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Riemannian distance between two rotations: the Frobenius norm of
/// `log(R_i R_j^T)`, computed in closed form as `sqrt(2) * theta` with the
/// relative angle recovered from the trace and the skew part (`atan2` keeps
/// it accurate at both ends of [0, pi]).
pub fn viewpoint_distance(r_i: &[[f64; 3]; 3], r_j: &[[f64; 3]; 3]) -> Result<f64> {
    validate_rotation(r_i)?;
    validate_rotation(r_j)?;
    let m = mat_mul(r_i, &transpose(r_j));
    let trace = m[0][0] + m[1][1] + m[2][2];
    let cos = ((trace - 1.0) / 2.0).clamp(-1.0, 1.0);
    // |sin(theta)| from the skew-symmetric part
    let sx = (m[2][1] - m[1][2]) / 2.0;
    let sy = (m[0][2] - m[2][0]) / 2.0;
    let sz = (m[1][0] - m[0][1]) / 2.0;
    let sin = (sx * sx + sy * sy + sz * sz).sqrt();
    let theta = sin.atan2(cos);
    Ok(std::f64::consts::SQRT_2 * theta)
}

/// Matrix-logarithm oracle for [`viewpoint_distance`]: inverse scaling and
/// squaring (repeated Denman-Beavers square roots until the log series on
/// `R - I` converges), then the Frobenius norm of the series sum. Verification
/// support; independent of the closed-form route.
pub fn matrix_log_frobenius_series(r: &[[f64; 3]; 3]) -> f64 {
    let identity = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let frob = |m: &[[f64; 3]; 3]| -> f64 {
        m.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    };
    let sub = |a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]| -> [[f64; 3]; 3] {
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = a[i][j] - b[i][j];
            }
        }
        out
    };
    let inv = |m: &[[f64; 3]; 3]| -> [[f64; 3]; 3] {
        let d = det3(m);
        let mut adj = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let (r0, r1) = (((i + 1) % 3), ((i + 2) % 3));
                let (c0, c1) = (((j + 1) % 3), ((j + 2) % 3));
                adj[j][i] = (m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]) / d;
            }
        }
        adj
    };

    // square-root until the series is safely convergent
    let mut m = *r;
    let mut doublings = 0u32;
    while frob(&sub(&m, &identity)) > 0.5 {
        // Denman-Beavers iteration for the principal square root
        let mut y = m;
        let mut z = identity;
        for _ in 0..60 {
            let yn = scale_add(&y, &inv(&z), 0.5);
            let zn = scale_add(&z, &inv(&y), 0.5);
            y = yn;
            z = zn;
        }
        m = y;
        doublings += 1;
    }
    // log(I + X) = sum (-1)^{k+1} X^k / k
    let x = sub(&m, &identity);
    let mut term = x;
    let mut log = [[0.0; 3]; 3];
    for k in 1..=48 {
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        for i in 0..3 {
            for j in 0..3 {
                log[i][j] += sign * term[i][j] / k as f64;
            }
        }
        term = mat_mul(&term, &x);
    }
    frob(&log) * f64::powi(2.0, doublings as i32)
}

fn scale_add(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3], s: f64) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = s * (a[i][j] + b[i][j]);
        }
    }
    out
}

/// Rotation about a unit axis by `angle` radians (test/fixture helper).
pub fn rotation_about(axis: [f64; 3], angle: f64) -> [[f64; 3]; 3] {
    let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    let (x, y, z) = (axis[0] / n, axis[1] / n, axis[2] / n);
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

// ---------------------------------------------------------------------------
// viewpoint binning
// ---------------------------------------------------------------------------

/// One cumulative bin: every pair with viewpoint distance at most
/// `upper_deg` contributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinStat {
    pub upper_deg: f64,
    pub mean_error: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewpointBinnedError {
    pub bins: Vec<BinStat>,
}

/// Cumulative 18-degree bins over pair (distance, error) observations;
/// distances arrive in radians.
pub fn bin_by_viewpoint(pairs: &[(f64, f64)]) -> ViewpointBinnedError {
    let bins = (1..=VIEWPOINT_BINS)
        .map(|k| {
            let upper_deg = k as f64 * VIEWPOINT_BIN_DEG;
            let errors: Vec<f64> = pairs
                .iter()
                .filter(|(rad, _)| rad.to_degrees() <= upper_deg)
                .map(|&(_, e)| e)
                .collect();
            BinStat {
                upper_deg,
                mean_error: if errors.is_empty() {
                    None
                } else {
                    Some(stable_mean(&errors))
                },
                count: errors.len(),
            }
        })
        .collect();
    ViewpointBinnedError { bins }
}

// ---------------------------------------------------------------------------
// whole-set evaluation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairOutcome {
    pub class_id: String,
    pub index_a: usize,
    pub index_b: usize,
    pub shared_keypoints: usize,
    pub viewpoint_distance_rad: f64,
    pub instance_error: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatchingEvaluation {
    pub layer: String,
    pub pairs: Vec<PairOutcome>,
    /// Same-class pairs skipped for lack of shared keypoints.
    pub skipped_pairs: Vec<(usize, usize)>,
    pub class_errors: Vec<(String, f64)>,
    /// Mean of the per-class means.
    pub mean_class_error: Option<f64>,
    pub binned: ViewpointBinnedError,
}

/// Runs the full protocol over a set of annotated boxes: every unordered
/// same-class pair once, first-image keypoints matched into the second.
pub fn evaluate_matching(
    boxes: &[AnnotatedBox],
    provider: &dyn FeatureMapProvider,
    layer: &str,
) -> Result<MatchingEvaluation> {
    let prepared: Vec<PreparedBox> = boxes.iter().map(preprocess_box).collect::<Result<_>>()?;
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, p) in prepared.iter().enumerate() {
        by_class.entry(p.class_id.as_str()).or_default().push(i);
    }
    let mut pairs = Vec::new();
    let mut skipped = Vec::new();
    for members in by_class.values() {
        for (a_pos, &ia) in members.iter().enumerate() {
            for &ib in &members[a_pos + 1..] {
                let records = match_pair(&prepared[ia], &prepared[ib], provider, layer)?;
                if records.is_empty() {
                    skipped.push((ia, ib));
                    continue;
                }
                pairs.push(PairOutcome {
                    class_id: prepared[ia].class_id.clone(),
                    index_a: ia,
                    index_b: ib,
                    shared_keypoints: records.len(),
                    viewpoint_distance_rad: viewpoint_distance(
                        &prepared[ia].rotation,
                        &prepared[ib].rotation,
                    )?,
                    instance_error: instance_error(&records)?,
                });
            }
        }
    }
    let mut class_errors = Vec::new();
    for (class, _) in by_class.iter() {
        let errs: Vec<f64> = pairs
            .iter()
            .filter(|p| p.class_id == *class)
            .map(|p| p.instance_error)
            .collect();
        if !errs.is_empty() {
            class_errors.push((class.to_string(), class_error(&errs)?));
        }
    }
    let mean_class_error = if class_errors.is_empty() {
        None
    } else {
        let means: Vec<f64> = class_errors.iter().map(|(_, e)| *e).collect();
        Some(stable_mean(&means))
    };
    let binned = bin_by_viewpoint(
        &pairs
            .iter()
            .map(|p| (p.viewpoint_distance_rad, p.instance_error))
            .collect::<Vec<_>>(),
    );
    Ok(MatchingEvaluation {
        layer: layer.to_string(),
        pairs,
        skipped_pairs: skipped,
        class_errors,
        mean_class_error,
        binned,
    })
}
