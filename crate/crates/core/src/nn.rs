//! Sequential network execution over a parsed architecture.
//!
//! A [`Network`] owns one parameter store. Weight sharing between siamese
//! streams falls out of that: running the same `Network` on two inputs uses
//! the identical parameters, and both backward passes accumulate into the
//! same gradient buffers.
//!
//! A spec trunk ends either without an output layer (feature extractor) or
//! with `Op`, which materializes as one fully-connected head per requested
//! output width (several binned-transform tasks share the trunk).

use crate::arch::{receptive_field_at, LayerSpec, NetworkSpec, ReceptiveField};
use crate::error::{Error, Result};
use crate::ops;
use crate::optim::{sgd_step, SgdSchedule};
use crate::rng::Stream;
use crate::tensor::{Scalar, Tensor};

pub const DROPOUT_KEEP_PROB: f64 = 0.5;

/// How the input arrives: a C×H×W map for conv-first nets, or a flat feature
/// vector for fully-connected trunks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputShape {
    Map(usize, usize, usize),
    Flat(usize),
}

impl InputShape {
    fn volume(&self) -> usize {
        match *self {
            InputShape::Map(c, h, w) => c * h * w,
            InputShape::Flat(d) => d,
        }
    }
}

/// Weight initialization scheme. Biases are always zero.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum WeightInit {
    /// Zero-mean Gaussian with a fixed standard deviation.
    Gaussian { std: f64 },
    /// Zero-mean Gaussian with std sqrt(2 / fan_in), per layer.
    ScaledByFanIn,
}

#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
}

#[derive(Debug, Clone, Copy)]
enum Exec {
    Conv {
        w: usize,
        b: usize,
        stride: usize,
        pad: usize,
        relu: bool,
    },
    Pool {
        kernel: usize,
        stride: usize,
    },
    Fc {
        w: usize,
        b: usize,
        relu: bool,
    },
    Dropout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub struct Network<T> {
    spec: NetworkSpec,
    input_shape: InputShape,
    exec: Vec<Exec>,
    /// (weight id, bias id, width) per output head.
    heads: Vec<(usize, usize, usize)>,
    params: Vec<Param<T>>,
}

/// Everything the backward pass needs from one forward pass.
pub struct Forward<T> {
    input: Tensor<T>,
    outputs: Vec<Tensor<T>>,
    aux: Vec<Aux<T>>,
    /// Logits per head; empty for trunks without an output layer.
    pub head_outputs: Vec<Tensor<T>>,
}

enum Aux<T> {
    Conv(ops::ConvCache<T>),
    Pool(ops::PoolCache),
    Fc { flat_input: Tensor<T> },
    Dropout(Option<ops::DropoutMask<T>>),
}

impl<T: Scalar> Forward<T> {
    /// Output of the last trunk layer (before any heads).
    pub fn trunk_output(&self) -> &Tensor<T> {
        self.outputs.last().unwrap_or(&self.input)
    }
}

impl<T: Scalar> Network<T> {
    /// Instantiates `spec` with freshly initialized parameters. `head_widths`
    /// gives the width of each output head and must be non-empty exactly
    /// when the spec ends in an output layer.
    pub fn build(
        spec: &NetworkSpec,
        input_shape: InputShape,
        head_widths: &[usize],
        init: WeightInit,
        stream: &mut Stream,
    ) -> Result<Self> {
        let has_output = spec
            .layers
            .iter()
            .any(|l| matches!(l, LayerSpec::Output));
        if has_output != !head_widths.is_empty() {
            return Err(Error::Config(format!(
                "spec `{}` {} an output layer but {} head widths were given",
                spec.print(),
                if has_output { "has" } else { "lacks" },
                head_widths.len()
            )));
        }
        let mut net = Network {
            spec: spec.clone(),
            input_shape,
            exec: Vec::new(),
            heads: Vec::new(),
            params: Vec::new(),
        };
        let mut cur = input_shape;
        let mut conv_idx = 0usize;
        let mut fc_idx = 0usize;
        for layer in &spec.layers {
            match layer {
                LayerSpec::Conv {
                    width,
                    kernel,
                    stride,
                    pad,
                    relu_after,
                } => {
                    let (c, h, w) = match cur {
                        InputShape::Map(c, h, w) => (c, h, w),
                        InputShape::Flat(_) => {
                            return Err(Error::Geometry(format!(
                                "convolution in `{}` after spatial structure was lost",
                                spec.print()
                            )))
                        }
                    };
                    if h + 2 * pad < *kernel || w + 2 * pad < *kernel {
                        return Err(Error::dimension(
                            "height",
                            format!("{h}x{w} input too small for {kernel}x{kernel} convolution"),
                        ));
                    }
                    let wid = net.add_param(
                        format!("conv{conv_idx}.w"),
                        vec![*width, c, *kernel, *kernel],
                        init,
                        stream,
                    );
                    let bid = net.add_bias(format!("conv{conv_idx}.b"), *width);
                    net.exec.push(Exec::Conv {
                        w: wid,
                        b: bid,
                        stride: *stride,
                        pad: *pad,
                        relu: *relu_after,
                    });
                    cur = InputShape::Map(
                        *width,
                        (h + 2 * pad - kernel) / stride + 1,
                        (w + 2 * pad - kernel) / stride + 1,
                    );
                    conv_idx += 1;
                }
                LayerSpec::Pool { kernel, stride } => {
                    let (c, h, w) = match cur {
                        InputShape::Map(c, h, w) => (c, h, w),
                        InputShape::Flat(_) => {
                            return Err(Error::Geometry(format!(
                                "pool in `{}` after spatial structure was lost",
                                spec.print()
                            )))
                        }
                    };
                    if h < *kernel || w < *kernel {
                        return Err(Error::dimension(
                            "height",
                            format!("{h}x{w} input too small for {kernel}x{kernel} pool"),
                        ));
                    }
                    net.exec.push(Exec::Pool {
                        kernel: *kernel,
                        stride: *stride,
                    });
                    cur =
                        InputShape::Map(c, (h - kernel) / stride + 1, (w - kernel) / stride + 1);
                }
                LayerSpec::Fc { width, relu_after } => {
                    let din = cur.volume();
                    let wid = net.add_param(
                        format!("fc{fc_idx}.w"),
                        vec![din, *width],
                        init,
                        stream,
                    );
                    let bid = net.add_bias(format!("fc{fc_idx}.b"), *width);
                    net.exec.push(Exec::Fc {
                        w: wid,
                        b: bid,
                        relu: *relu_after,
                    });
                    cur = InputShape::Flat(*width);
                    fc_idx += 1;
                }
                LayerSpec::Dropout => net.exec.push(Exec::Dropout),
                LayerSpec::Output => {
                    let din = cur.volume();
                    for (hi, &width) in head_widths.iter().enumerate() {
                        let wid = net.add_param(
                            format!("out{hi}.w"),
                            vec![din, width],
                            init,
                            stream,
                        );
                        let bid = net.add_bias(format!("out{hi}.b"), width);
                        net.heads.push((wid, bid, width));
                    }
                }
            }
        }
        Ok(net)
    }

    fn add_param(
        &mut self,
        name: String,
        shape: Vec<usize>,
        init: WeightInit,
        stream: &mut Stream,
    ) -> usize {
        let std = match init {
            WeightInit::Gaussian { std } => std,
            WeightInit::ScaledByFanIn => {
                let fan_in = match shape.len() {
                    2 => shape[0],                          // fc: [in, out]
                    4 => shape[1] * shape[2] * shape[3],    // conv: [k, c, kh, kw]
                    _ => shape.iter().product(),
                };
                (2.0 / fan_in as f64).sqrt()
            }
        };
        let value = Tensor::from_fn(shape, |_| T::from_f64(stream.next_gaussian() * std));
        self.params.push(Param { name, value });
        self.params.len() - 1
    }

    fn add_bias(&mut self, name: String, width: usize) -> usize {
        self.params.push(Param {
            name,
            value: Tensor::zeros(vec![width]),
        });
        self.params.len() - 1
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn input_shape(&self) -> InputShape {
        self.input_shape
    }

    pub fn head_widths(&self) -> Vec<usize> {
        self.heads.iter().map(|&(_, _, w)| w).collect()
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Replaces parameter values by name (checkpoint loading).
    pub fn load_values(&mut self, mut lookup: impl FnMut(&str) -> Option<Vec<T>>) -> Result<()> {
        for p in &mut self.params {
            let vals = lookup(&p.name)
                .ok_or_else(|| Error::Config(format!("missing parameter `{}`", p.name)))?;
            if vals.len() != p.value.len() {
                return Err(Error::dimension(
                    "param",
                    format!(
                        "parameter `{}` expects {} values, got {}",
                        p.name,
                        p.value.len(),
                        vals.len()
                    ),
                ));
            }
            p.value.data_mut().copy_from_slice(&vals);
        }
        Ok(())
    }

    /// FNV-1a over the parameter bit patterns, in declaration order. Used to
    /// assert that frozen parameters stay untouched.
    pub fn param_fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for p in &self.params {
            for &v in p.value.data() {
                for byte in v.to_f64().to_bits().to_le_bytes() {
                    h ^= byte as u64;
                    h = h.wrapping_mul(0x100000001b3);
                }
            }
        }
        h
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.value.grad_mut();
            p.value.zero_grad();
        }
    }

    /// One SGD update over every parameter, consuming the accumulated grads.
    /// `velocity` must be the running momentum state parallel to `params`.
    pub fn sgd_update(
        &mut self,
        velocity: &mut [Vec<T>],
        schedule: &SgdSchedule,
        iteration: u64,
    ) -> Result<()> {
        debug_assert_eq!(velocity.len(), self.params.len());
        for (p, v) in self.params.iter_mut().zip(velocity.iter_mut()) {
            let n = p.value.len();
            let grad = p
                .value
                .grad()
                .ok_or_else(|| Error::Value(format!("parameter `{}` has no gradient", p.name)))?
                .to_vec();
            debug_assert_eq!(v.len(), n);
            sgd_step(p.value.data_mut(), &grad, v, schedule, iteration)?;
        }
        Ok(())
    }

    pub fn new_velocity(&self) -> Vec<Vec<T>> {
        self.params
            .iter()
            .map(|p| vec![T::zero(); p.value.len()])
            .collect()
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<usize> {
        let want: Vec<usize> = match self.input_shape {
            InputShape::Map(c, h, w) => vec![c, h, w],
            InputShape::Flat(d) => vec![d],
        };
        if input.shape().len() != want.len() + 1 || input.shape()[1..] != want[..] {
            return Err(Error::dimension(
                "input",
                format!(
                    "expected [B, {want:?}] input, got {:?}",
                    input.shape()
                ),
            ));
        }
        Ok(input.shape()[0])
    }

    /// Runs the trunk and heads. In training mode a dropout stream must be
    /// supplied; evaluation applies no dropout at all.
    pub fn forward(
        &self,
        input: &Tensor<T>,
        mode: Mode,
        mut dropout: Option<&mut Stream>,
    ) -> Result<Forward<T>> {
        let batch = self.check_input(input)?;
        if mode == Mode::Train && self.exec.iter().any(|e| matches!(e, Exec::Dropout)) {
            if dropout.is_none() {
                return Err(Error::Config(
                    "training forward through dropout needs an RNG stream".into(),
                ));
            }
        }
        let mut outputs: Vec<Tensor<T>> = Vec::with_capacity(self.exec.len());
        let mut aux: Vec<Aux<T>> = Vec::with_capacity(self.exec.len());
        for (li, e) in self.exec.iter().enumerate() {
            let cur = if li == 0 { input } else { &outputs[li - 1] };
            match *e {
                Exec::Conv {
                    w,
                    b,
                    stride,
                    pad,
                    relu,
                } => {
                    let (mut out, cache) = ops::conv2d_forward(
                        cur,
                        &self.params[w].value,
                        &self.params[b].value,
                        stride,
                        pad,
                    )?;
                    if relu {
                        ops::relu_forward(out.data_mut());
                    }
                    aux.push(Aux::Conv(cache));
                    outputs.push(out);
                }
                Exec::Pool { kernel, stride } => {
                    let (out, cache) = ops::maxpool_forward(cur, kernel, stride)?;
                    aux.push(Aux::Pool(cache));
                    outputs.push(out);
                }
                Exec::Fc { w, b, relu } => {
                    let flat = flatten(cur)?;
                    let mut out =
                        ops::fc_forward(&flat, &self.params[w].value, &self.params[b].value)?;
                    if relu {
                        ops::relu_forward(out.data_mut());
                    }
                    aux.push(Aux::Fc { flat_input: flat });
                    outputs.push(out);
                }
                Exec::Dropout => {
                    let mut out = cur.clone();
                    let mask = match mode {
                        Mode::Train => {
                            let stream = dropout.as_deref_mut().expect("checked above");
                            Some(ops::dropout_forward(
                                out.data_mut(),
                                DROPOUT_KEEP_PROB,
                                stream,
                            ))
                        }
                        Mode::Eval => None,
                    };
                    aux.push(Aux::Dropout(mask));
                    outputs.push(out);
                }
            }
        }
        let trunk_out = outputs.last().unwrap_or(input);
        let mut head_outputs = Vec::with_capacity(self.heads.len());
        if !self.heads.is_empty() {
            let flat = flatten(trunk_out)?;
            for &(w, b, _) in &self.heads {
                head_outputs.push(ops::fc_forward(
                    &flat,
                    &self.params[w].value,
                    &self.params[b].value,
                )?);
            }
        }
        let _ = batch;
        Ok(Forward {
            input: input.clone(),
            outputs,
            aux,
            head_outputs,
        })
    }

    /// Backward from per-head logit gradients. Accumulates parameter grads
    /// and returns the gradient w.r.t. the network input.
    pub fn backward_heads(
        &mut self,
        fwd: &Forward<T>,
        head_grads: &[Tensor<T>],
    ) -> Result<Tensor<T>> {
        if head_grads.len() != self.heads.len() {
            return Err(Error::dimension(
                "heads",
                format!(
                    "{} head gradients for {} heads",
                    head_grads.len(),
                    self.heads.len()
                ),
            ));
        }
        let trunk_out = fwd.trunk_output();
        let flat = flatten(trunk_out)?;
        let mut grad_flat = Tensor::zeros(flat.shape().to_vec());
        let heads = self.heads.clone();
        for (&(w, b, _), g) in heads.iter().zip(head_grads) {
            let grads = ops::fc_backward(&flat, &self.params[w].value, g)?;
            accumulate(&mut self.params[w].value, grads.weights.data());
            accumulate(&mut self.params[b].value, grads.bias.data());
            for (acc, &v) in grad_flat.data_mut().iter_mut().zip(grads.input.data()) {
                *acc = *acc + v;
            }
        }
        let grad_trunk = grad_flat.reshaped(trunk_out.shape().to_vec())?;
        self.backward_trunk(fwd, grad_trunk)
    }

    /// Backward from a gradient on the trunk output (feature-level loss).
    pub fn backward_trunk(&mut self, fwd: &Forward<T>, grad_out: Tensor<T>) -> Result<Tensor<T>> {
        let mut grad = grad_out;
        for li in (0..self.exec.len()).rev() {
            let out = &fwd.outputs[li];
            match self.exec[li] {
                Exec::Conv { w, b, relu, .. } => {
                    if relu {
                        ops::relu_backward(out.data(), grad.data_mut());
                    }
                    let cache = match &fwd.aux[li] {
                        Aux::Conv(c) => c,
                        _ => unreachable!(),
                    };
                    let grads = ops::conv2d_backward(cache, &self.params[w].value, &grad)?;
                    accumulate(&mut self.params[w].value, grads.weights.data());
                    accumulate(&mut self.params[b].value, grads.bias.data());
                    grad = grads.input;
                }
                Exec::Pool { .. } => {
                    let cache = match &fwd.aux[li] {
                        Aux::Pool(c) => c,
                        _ => unreachable!(),
                    };
                    grad = ops::maxpool_backward(cache, &grad)?;
                }
                Exec::Fc { w, b, relu } => {
                    if relu {
                        ops::relu_backward(out.data(), grad.data_mut());
                    }
                    let flat_input = match &fwd.aux[li] {
                        Aux::Fc { flat_input } => flat_input,
                        _ => unreachable!(),
                    };
                    let grads = ops::fc_backward(flat_input, &self.params[w].value, &grad)?;
                    accumulate(&mut self.params[w].value, grads.weights.data());
                    accumulate(&mut self.params[b].value, grads.bias.data());
                    let prev_shape = if li == 0 {
                        fwd.input.shape().to_vec()
                    } else {
                        fwd.outputs[li - 1].shape().to_vec()
                    };
                    grad = grads.input.reshaped(prev_shape)?;
                }
                Exec::Dropout => {
                    if let Aux::Dropout(Some(mask)) = &fwd.aux[li] {
                        ops::dropout_backward(mask, grad.data_mut());
                    }
                }
            }
        }
        Ok(grad)
    }

    /// Evaluation-mode forward through the spatial prefix only, returning the
    /// [B,C,H,W] feature map after `layer` together with its receptive-field
    /// geometry. Convolutional weights apply at any resolution, so only the
    /// channel count must match the build-time input shape.
    pub fn spatial_features(
        &self,
        input: &Tensor<T>,
        layer: usize,
    ) -> Result<(Tensor<T>, ReceptiveField)> {
        let rf = receptive_field_at(&self.spec, layer)?;
        let want_c = match self.input_shape {
            InputShape::Map(c, _, _) => c,
            InputShape::Flat(_) => {
                return Err(Error::Geometry(
                    "network input has no spatial structure".into(),
                ))
            }
        };
        if input.shape().len() != 4 || input.shape()[1] != want_c {
            return Err(Error::dimension(
                "input",
                format!(
                    "expected [B, {want_c}, H, W] input, got {:?}",
                    input.shape()
                ),
            ));
        }
        let mut cur = input.clone();
        for e in self.exec.iter().take(layer + 1) {
            cur = match *e {
                Exec::Conv {
                    w,
                    b,
                    stride,
                    pad,
                    relu,
                } => {
                    let (mut out, _) = ops::conv2d_forward(
                        &cur,
                        &self.params[w].value,
                        &self.params[b].value,
                        stride,
                        pad,
                    )?;
                    if relu {
                        ops::relu_forward(out.data_mut());
                    }
                    out
                }
                Exec::Pool { kernel, stride } => ops::maxpool_forward(&cur, kernel, stride)?.0,
                _ => unreachable!("receptive_field_at bounds the prefix"),
            };
        }
        Ok((cur, rf))
    }
}

fn flatten<T: Scalar>(t: &Tensor<T>) -> Result<Tensor<T>> {
    let b = t.shape()[0];
    let rest: usize = t.shape()[1..].iter().product();
    t.clone().reshaped(vec![b, rest])
}

fn accumulate<T: Scalar>(param: &mut Tensor<T>, grad: &[T]) {
    for (g, &v) in param.grad_mut().iter_mut().zip(grad) {
        *g = *g + v;
    }
}
