//! Finite-difference gradient verification.
//!
//! Test-support module: compares the analytic backward pass of every layer
//! primitive against central finite differences in double precision. The
//! numeric side only ever calls the forward pass, so it stays independent of
//! the backward code it is checking.

use crate::error::{Error, Result};
use crate::ops;
use crate::rng::{Stream, StreamKind};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOL: f64 = 1e-4;
/// Inputs this close to a ReLU/pool decision boundary are skipped.
pub const KINK_SKIP: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct LayerReport {
    pub layer: &'static str,
    pub cases: usize,
    pub elements_checked: usize,
    pub elements_skipped: usize,
    pub max_rel_err: f64,
}

/// Central difference of a scalar function at `x`, one element at a time.
pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let up = f(&probe);
        probe[i] = orig - step;
        let down = f(&probe);
        probe[i] = orig;
        grad[i] = (up - down) / (2.0 * step);
    }
    grad
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

struct Tally {
    checked: usize,
    skipped: usize,
    max_rel: f64,
}

impl Tally {
    fn new() -> Self {
        Tally {
            checked: 0,
            skipped: 0,
            max_rel: 0.0,
        }
    }

    fn compare(
        &mut self,
        layer: &str,
        analytic: &[f64],
        numeric: &[f64],
        tol: f64,
        skip: impl Fn(usize) -> bool,
    ) -> Result<()> {
        for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
            if skip(i) {
                self.skipped += 1;
                continue;
            }
            let rel = rel_err(a, n);
            self.max_rel = self.max_rel.max(rel);
            self.checked += 1;
            if rel > tol {
                return Err(Error::Value(format!(
                    "{layer}: gradient mismatch at element {i}: analytic {a} vs numeric {n} (rel {rel:.3e})"
                )));
            }
        }
        Ok(())
    }
}

fn rand_vec(n: usize, s: &mut Stream) -> Vec<f64> {
    (0..n).map(|_| s.next_f64_in(-1.0, 1.0)).collect()
}

/// Loss = sum(projection * output); its gradient w.r.t. the output is the
/// projection itself, which exercises the backward pass with a dense,
/// non-trivial upstream gradient.
fn project(out: &[f64], pi: &[f64]) -> f64 {
    out.iter().zip(pi).map(|(o, p)| o * p).sum()
}

pub fn check_conv2d(cases: usize, seed: u64, step: f64, tol: f64) -> Result<LayerReport> {
    let mut s = Stream::indexed(seed, StreamKind::Init, 101);
    let mut tally = Tally::new();
    for _ in 0..cases {
        let b = s.next_i32_in(1, 2) as usize;
        let c = s.next_i32_in(1, 3) as usize;
        let h = s.next_i32_in(3, 6) as usize;
        let w = s.next_i32_in(3, 6) as usize;
        let k = s.next_i32_in(1, 3) as usize;
        let kh = s.next_i32_in(1, h.min(3) as i32) as usize;
        let kw = s.next_i32_in(1, w.min(3) as i32) as usize;
        let stride = s.next_i32_in(1, 2) as usize;
        let pad = s.next_i32_in(0, 1) as usize;

        let input = rand_vec(b * c * h * w, &mut s);
        let weights = rand_vec(k * c * kh * kw, &mut s);
        let bias = rand_vec(k, &mut s);
        let (tin, tw, tb) = (
            Tensor::new(vec![b, c, h, w], input.clone())?,
            Tensor::new(vec![k, c, kh, kw], weights.clone())?,
            Tensor::new(vec![k], bias.clone())?,
        );
        let (out, cache) = ops::conv2d_forward(&tin, &tw, &tb, stride, pad)?;
        let pi = rand_vec(out.len(), &mut s);
        let grad_out = Tensor::new(out.shape().to_vec(), pi.clone())?;
        let grads = ops::conv2d_backward(&cache, &tw, &grad_out)?;

        let mut f_input = |x: &[f64]| {
            let t = Tensor::new(vec![b, c, h, w], x.to_vec()).unwrap();
            let (o, _) = ops::conv2d_forward(&t, &tw, &tb, stride, pad).unwrap();
            project(o.data(), &pi)
        };
        tally.compare(
            "conv2d/input",
            grads.input.data(),
            &central_diff(&mut f_input, &input, step),
            tol,
            |_| false,
        )?;

        let mut f_weights = |x: &[f64]| {
            let t = Tensor::new(vec![k, c, kh, kw], x.to_vec()).unwrap();
            let (o, _) = ops::conv2d_forward(&tin, &t, &tb, stride, pad).unwrap();
            project(o.data(), &pi)
        };
        tally.compare(
            "conv2d/weights",
            grads.weights.data(),
            &central_diff(&mut f_weights, &weights, step),
            tol,
            |_| false,
        )?;

        let mut f_bias = |x: &[f64]| {
            let t = Tensor::new(vec![k], x.to_vec()).unwrap();
            let (o, _) = ops::conv2d_forward(&tin, &tw, &t, stride, pad).unwrap();
            project(o.data(), &pi)
        };
        tally.compare(
            "conv2d/bias",
            grads.bias.data(),
            &central_diff(&mut f_bias, &bias, step),
            tol,
            |_| false,
        )?;
    }
    Ok(LayerReport {
        layer: "conv2d",
        cases,
        elements_checked: tally.checked,
        elements_skipped: tally.skipped,
        max_rel_err: tally.max_rel,
    })
}

pub fn check_maxpool(cases: usize, seed: u64, step: f64, tol: f64) -> Result<LayerReport> {
    let mut s = Stream::indexed(seed, StreamKind::Init, 102);
    let mut tally = Tally::new();
    for _ in 0..cases {
        let b = s.next_i32_in(1, 2) as usize;
        let c = s.next_i32_in(1, 2) as usize;
        let h = s.next_i32_in(2, 6) as usize;
        let w = s.next_i32_in(2, 6) as usize;
        let kernel = s.next_i32_in(1, h.min(w).min(3) as i32) as usize;
        let stride = s.next_i32_in(1, 2) as usize;

        let input = rand_vec(b * c * h * w, &mut s);
        let tin = Tensor::new(vec![b, c, h, w], input.clone())?;
        let (out, cache) = ops::maxpool_forward(&tin, kernel, stride)?;
        let pi = rand_vec(out.len(), &mut s);
        let grad_out = Tensor::new(out.shape().to_vec(), pi.clone())?;
        let gi = ops::maxpool_backward(&cache, &grad_out)?;

        // Input elements that sit within KINK_SKIP of a window maximum can
        // flip the argmax under the probe step; skip those.
        let near_tie: Vec<bool> = {
            let mut flag = vec![false; input.len()];
            for (oidx, &win_max) in out.data().iter().enumerate() {
                let bc = oidx / (out.shape()[2] * out.shape()[3]);
                let rest = oidx % (out.shape()[2] * out.shape()[3]);
                let (oi, oj) = (rest / out.shape()[3], rest % out.shape()[3]);
                for ki in 0..kernel {
                    for kj in 0..kernel {
                        let at = bc * h * w + (oi * stride + ki) * w + oj * stride + kj;
                        if (input[at] - win_max).abs() < KINK_SKIP && input[at] != win_max {
                            flag[at] = true;
                        }
                    }
                }
            }
            flag
        };

        let mut f = |x: &[f64]| {
            let t = Tensor::new(vec![b, c, h, w], x.to_vec()).unwrap();
            let (o, _) = ops::maxpool_forward(&t, kernel, stride).unwrap();
            project(o.data(), &pi)
        };
        tally.compare(
            "maxpool/input",
            gi.data(),
            &central_diff(&mut f, &input, step),
            tol,
            |i| near_tie[i],
        )?;
    }
    Ok(LayerReport {
        layer: "maxpool",
        cases,
        elements_checked: tally.checked,
        elements_skipped: tally.skipped,
        max_rel_err: tally.max_rel,
    })
}

pub fn check_relu(cases: usize, seed: u64, step: f64, tol: f64) -> Result<LayerReport> {
    let mut s = Stream::indexed(seed, StreamKind::Init, 103);
    let mut tally = Tally::new();
    for _ in 0..cases {
        let n = s.next_i32_in(4, 24) as usize;
        let input = rand_vec(n, &mut s);
        let pi = rand_vec(n, &mut s);
        let mut out = input.clone();
        ops::relu_forward(&mut out);
        let mut analytic = pi.clone();
        ops::relu_backward(&out, &mut analytic);
        let mut f = |x: &[f64]| {
            let mut o = x.to_vec();
            ops::relu_forward(&mut o);
            project(&o, &pi)
        };
        let numeric = central_diff(&mut f, &input, step);
        tally.compare("relu/input", &analytic, &numeric, tol, |i| {
            input[i].abs() < KINK_SKIP
        })?;
    }
    Ok(LayerReport {
        layer: "relu",
        cases,
        elements_checked: tally.checked,
        elements_skipped: tally.skipped,
        max_rel_err: tally.max_rel,
    })
}

pub fn check_dropout(cases: usize, seed: u64, step: f64, tol: f64) -> Result<LayerReport> {
    let mut s = Stream::indexed(seed, StreamKind::Init, 104);
    let mut tally = Tally::new();
    for case in 0..cases {
        let n = s.next_i32_in(4, 24) as usize;
        let input = rand_vec(n, &mut s);
        let pi = rand_vec(n, &mut s);
        // Fixed mask: the check differentiates the masked-scale map itself.
        let mut mask_stream = Stream::indexed(seed, StreamKind::Dropout, case as u64);
        let mask = ops::DropoutMask::<f64>::sample(n, 0.5, &mut mask_stream);
        let mut analytic = pi.clone();
        ops::dropout_backward(&mask, &mut analytic);
        let mut f = |x: &[f64]| {
            let mut o = x.to_vec();
            mask.apply(&mut o);
            project(&o, &pi)
        };
        let numeric = central_diff(&mut f, &input, step);
        tally.compare("dropout/input", &analytic, &numeric, tol, |_| false)?;
    }
    Ok(LayerReport {
        layer: "dropout",
        cases,
        elements_checked: tally.checked,
        elements_skipped: tally.skipped,
        max_rel_err: tally.max_rel,
    })
}

pub fn check_fc(cases: usize, seed: u64, step: f64, tol: f64) -> Result<LayerReport> {
    let mut s = Stream::indexed(seed, StreamKind::Init, 105);
    let mut tally = Tally::new();
    for _ in 0..cases {
        let b = s.next_i32_in(1, 3) as usize;
        let din = s.next_i32_in(2, 6) as usize;
        let dout = s.next_i32_in(1, 5) as usize;
        let input = rand_vec(b * din, &mut s);
        let weights = rand_vec(din * dout, &mut s);
        let bias = rand_vec(dout, &mut s);
        let (tin, tw, tb) = (
            Tensor::new(vec![b, din], input.clone())?,
            Tensor::new(vec![din, dout], weights.clone())?,
            Tensor::new(vec![dout], bias.clone())?,
        );
        let out = ops::fc_forward(&tin, &tw, &tb)?;
        let pi = rand_vec(out.len(), &mut s);
        let grad_out = Tensor::new(out.shape().to_vec(), pi.clone())?;
        let grads = ops::fc_backward(&tin, &tw, &grad_out)?;

        let mut f_input = |x: &[f64]| {
            let t = Tensor::new(vec![b, din], x.to_vec()).unwrap();
            project(ops::fc_forward(&t, &tw, &tb).unwrap().data(), &pi)
        };
        tally.compare(
            "fc/input",
            grads.input.data(),
            &central_diff(&mut f_input, &input, step),
            tol,
            |_| false,
        )?;
        let mut f_weights = |x: &[f64]| {
            let t = Tensor::new(vec![din, dout], x.to_vec()).unwrap();
            project(ops::fc_forward(&tin, &t, &tb).unwrap().data(), &pi)
        };
        tally.compare(
            "fc/weights",
            grads.weights.data(),
            &central_diff(&mut f_weights, &weights, step),
            tol,
            |_| false,
        )?;
        let mut f_bias = |x: &[f64]| {
            let t = Tensor::new(vec![dout], x.to_vec()).unwrap();
            project(ops::fc_forward(&tin, &tw, &t).unwrap().data(), &pi)
        };
        tally.compare(
            "fc/bias",
            grads.bias.data(),
            &central_diff(&mut f_bias, &bias, step),
            tol,
            |_| false,
        )?;
    }
    Ok(LayerReport {
        layer: "fc",
        cases,
        elements_checked: tally.checked,
        elements_skipped: tally.skipped,
        max_rel_err: tally.max_rel,
    })
}

pub fn check_softmax_xent(cases: usize, seed: u64, step: f64, tol: f64) -> Result<LayerReport> {
    let mut s = Stream::indexed(seed, StreamKind::Init, 106);
    let mut tally = Tally::new();
    for _ in 0..cases {
        let b = s.next_i32_in(1, 4) as usize;
        let c = s.next_i32_in(2, 10) as usize;
        let logits = rand_vec(b * c, &mut s);
        let labels: Vec<usize> = (0..b)
            .map(|_| s.next_i32_in(0, c as i32 - 1) as usize)
            .collect();
        let t = Tensor::new(vec![b, c], logits.clone())?;
        let r = ops::softmax_xent(&t, &labels)?;
        let mut f = |x: &[f64]| {
            let t = Tensor::new(vec![b, c], x.to_vec()).unwrap();
            ops::softmax_xent(&t, &labels).unwrap().loss
        };
        let numeric = central_diff(&mut f, &logits, step);
        tally.compare("softmax_xent/logits", r.grad.data(), &numeric, tol, |_| {
            false
        })?;
    }
    Ok(LayerReport {
        layer: "softmax_xent",
        cases,
        elements_checked: tally.checked,
        elements_skipped: tally.skipped,
        max_rel_err: tally.max_rel,
    })
}

/// Runs every layer check with the default step and tolerance.
pub fn run_full_check(cases_per_layer: usize, seed: u64) -> Result<Vec<LayerReport>> {
    Ok(vec![
        check_conv2d(cases_per_layer, seed, DEFAULT_STEP, DEFAULT_TOL)?,
        check_maxpool(cases_per_layer, seed, DEFAULT_STEP, DEFAULT_TOL)?,
        check_relu(cases_per_layer, seed, DEFAULT_STEP, DEFAULT_TOL)?,
        check_dropout(cases_per_layer, seed, DEFAULT_STEP, DEFAULT_TOL)?,
        check_fc(cases_per_layer, seed, DEFAULT_STEP, DEFAULT_TOL)?,
        check_softmax_xent(cases_per_layer, seed, DEFAULT_STEP, DEFAULT_TOL)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_layers_pass_a_quick_check() {
        for report in run_full_check(10, 2024).unwrap() {
            assert!(report.elements_checked > 0, "{}", report.layer);
            assert!(
                report.max_rel_err <= DEFAULT_TOL,
                "{}: {}",
                report.layer,
                report.max_rel_err
            );
        }
    }
}
