//! Layer primitives: forward and backward passes.
//!
//! Exactly the layer set the networks here need: 2-d cross-correlation,
//! max-pooling, ReLU, inverted dropout, fully-connected, and softmax
//! cross-entropy. Everything is single-threaded and deterministic; the
//! forward paths accumulate sums in a fixed element-sequential order, so
//! outputs are bit-identical across builds and vector widths.

use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::tensor::{Scalar, Tensor};

// ---------------------------------------------------------------------------
// small GEMM kernels (row-major)
// ---------------------------------------------------------------------------

/// c[m*n] += a[m*k] * b[k*n]
///
/// Two output rows share each streamed row of `b`; within a row, sums
/// accumulate element-sequentially over `p`, so results do not depend on the
/// vector width the compiler picks.
fn gemm_acc<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let mut i = 0;
    while i + 2 <= m {
        let (head, tail) = c[i * n..].split_at_mut(n);
        let crow0 = head;
        let crow1 = &mut tail[..n];
        let arow0 = &a[i * k..(i + 1) * k];
        let arow1 = &a[(i + 1) * k..(i + 2) * k];
        for p in 0..k {
            let (a0, a1) = (arow0[p], arow1[p]);
            if a0 == T::zero() && a1 == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for ((c0, c1), &bv) in crow0.iter_mut().zip(crow1.iter_mut()).zip(brow.iter()) {
                *c0 = *c0 + a0 * bv;
                *c1 = *c1 + a1 * bv;
            }
        }
        i += 2;
    }
    if i < m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &apk) in arow.iter().enumerate() {
            if apk == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow.iter()) {
                *cv = *cv + apk * bv;
            }
        }
    }
}

/// c[n*p] += a[m*n]^T * b[m*p]
fn gemm_atb_acc<T: Scalar>(m: usize, n: usize, p: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), m * p);
    debug_assert_eq!(c.len(), n * p);
    for mm in 0..m {
        let arow = &a[mm * n..(mm + 1) * n];
        let brow = &b[mm * p..(mm + 1) * p];
        for (i, &av) in arow.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let crow = &mut c[i * p..(i + 1) * p];
            for (cv, &bv) in crow.iter_mut().zip(brow.iter()) {
                *cv = *cv + av * bv;
            }
        }
    }
}

/// c[m*n] += a[m*l] * b[n*l]^T  (rows of `a` dotted with rows of `b`)
fn gemm_abt_acc<T: Scalar>(m: usize, l: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), m * l);
    debug_assert_eq!(b.len(), n * l);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let arow = &a[i * l..(i + 1) * l];
        let crow = &mut c[i * n..(i + 1) * n];
        for (j, cv) in crow.iter_mut().enumerate() {
            *cv = *cv + dot(arow, &b[j * l..(j + 1) * l]);
        }
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 4];
    let mut ia = a.chunks_exact(4);
    let mut ib = b.chunks_exact(4);
    for (ca, cb) in (&mut ia).zip(&mut ib) {
        acc[0] = acc[0] + ca[0] * cb[0];
        acc[1] = acc[1] + ca[1] * cb[1];
        acc[2] = acc[2] + ca[2] * cb[2];
        acc[3] = acc[3] + ca[3] * cb[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (&x, &y) in ia.remainder().iter().zip(ib.remainder()) {
        s = s + x * y;
    }
    s
}

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

/// Patch matrix layout: col[(c*kh*kw + ki*kw + kj) * (oh*ow) + (oi*ow + oj)].
#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(
    input: &[T],
    (c, h, w): (usize, usize, usize),
    (kh, kw): (usize, usize),
    stride: usize,
    pad: usize,
    (oh, ow): (usize, usize),
    col: &mut [T],
) {
    let area = oh * ow;
    for cc in 0..c {
        let plane = &input[cc * h * w..(cc + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let crow = &mut col[(cc * kh * kw + ki * kw + kj) * area..][..area];
                for oi in 0..oh {
                    let iy = (oi * stride + ki) as isize - pad as isize;
                    let dst = &mut crow[oi * ow..(oi + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        dst.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (oj, d) in dst.iter_mut().enumerate() {
                        let ix = (oj * stride + kj) as isize - pad as isize;
                        *d = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-add of a patch-matrix gradient back onto the input plane.
#[allow(clippy::too_many_arguments)]
fn col2im_acc<T: Scalar>(
    col: &[T],
    (c, h, w): (usize, usize, usize),
    (kh, kw): (usize, usize),
    stride: usize,
    pad: usize,
    (oh, ow): (usize, usize),
    input_grad: &mut [T],
) {
    let area = oh * ow;
    for cc in 0..c {
        let plane = &mut input_grad[cc * h * w..(cc + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let crow = &col[(cc * kh * kw + ki * kw + kj) * area..][..area];
                for oi in 0..oh {
                    let iy = (oi * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for (oj, &g) in crow[oi * ow..(oi + 1) * ow].iter().enumerate() {
                        let ix = (oj * stride + kj) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] = dst[ix as usize] + g;
                        }
                    }
                }
            }
        }
    }
}

/// Forward state kept for the backward pass.
pub struct ConvCache<T> {
    cols: Vec<Vec<T>>, // per batch image
    input_shape: [usize; 4],
    out_shape: [usize; 4],
    kernel: (usize, usize),
    stride: usize,
    pad: usize,
}

pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

/// 2-d cross-correlation of `input` [B,C,H,W] with `weights` [K,C,kh,kw]
/// plus `bias` [K]. Output is [B,K,H',W'] with
/// H' = (H + 2*pad - kh)/stride + 1 (floor), likewise W'.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<(Tensor<T>, ConvCache<T>)> {
    let [b, c, h, w] = dims4(input, "input")?;
    let [k, wc, kh, kw] = dims4(weights, "weights")?;
    if stride == 0 {
        return Err(Error::dimension("stride", "stride must be >= 1"));
    }
    if wc != c {
        return Err(Error::dimension(
            "channel",
            format!("input has {c} channels, weights expect {wc}"),
        ));
    }
    if bias.shape() != [k] {
        return Err(Error::dimension(
            "bias",
            format!("bias shape {:?} does not match {k} filters", bias.shape()),
        ));
    }
    if h + 2 * pad < kh {
        return Err(Error::dimension(
            "height",
            format!("input height {h} (+pad {pad}) smaller than kernel {kh}"),
        ));
    }
    if w + 2 * pad < kw {
        return Err(Error::dimension(
            "width",
            format!("input width {w} (+pad {pad}) smaller than kernel {kw}"),
        ));
    }
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let area = oh * ow;
    let ckk = c * kh * kw;

    let mut out = Tensor::zeros(vec![b, k, oh, ow]);
    let mut cols = Vec::with_capacity(b);
    for bi in 0..b {
        let mut col = vec![T::zero(); ckk * area];
        im2col(
            &input.data()[bi * c * h * w..(bi + 1) * c * h * w],
            (c, h, w),
            (kh, kw),
            stride,
            pad,
            (oh, ow),
            &mut col,
        );
        let ob = &mut out.data_mut()[bi * k * area..(bi + 1) * k * area];
        gemm_acc(k, ckk, area, weights.data(), &col, ob);
        for ki in 0..k {
            let bv = bias.data()[ki];
            ob[ki * area..(ki + 1) * area]
                .iter_mut()
                .for_each(|v| *v = *v + bv);
        }
        cols.push(col);
    }
    Ok((
        out,
        ConvCache {
            cols,
            input_shape: [b, c, h, w],
            out_shape: [b, k, oh, ow],
            kernel: (kh, kw),
            stride,
            pad,
        },
    ))
}

/// Gradients of conv2d w.r.t. input, weights, and bias.
pub fn conv2d_backward<T: Scalar>(
    cache: &ConvCache<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let [b, c, h, w] = cache.input_shape;
    let [_, k, oh, ow] = cache.out_shape;
    if grad_out.shape() != cache.out_shape {
        return Err(Error::dimension(
            "grad",
            format!(
                "grad shape {:?} does not match output {:?}",
                grad_out.shape(),
                cache.out_shape
            ),
        ));
    }
    let (kh, kw) = cache.kernel;
    let area = oh * ow;
    let ckk = c * kh * kw;

    let mut gi = Tensor::zeros(vec![b, c, h, w]);
    let mut gw = Tensor::zeros(weights.shape().to_vec());
    let mut gb = Tensor::zeros(vec![k]);
    let mut col_grad = vec![T::zero(); ckk * area];
    for bi in 0..b {
        let go = &grad_out.data()[bi * k * area..(bi + 1) * k * area];
        // bias: row sums
        for ki in 0..k {
            let mut s = T::zero();
            for &g in &go[ki * area..(ki + 1) * area] {
                s = s + g;
            }
            gb.data_mut()[ki] = gb.data_mut()[ki] + s;
        }
        // weights: grad_out [K,area] x col [CKK,area]^T
        gemm_abt_acc(k, area, ckk, go, &cache.cols[bi], gw.data_mut());
        // input: W^T [CKK,K] x grad_out [K,area], then scatter back
        col_grad.iter_mut().for_each(|v| *v = T::zero());
        gemm_atb_acc(k, ckk, area, weights.data(), go, &mut col_grad);
        col2im_acc(
            &col_grad,
            (c, h, w),
            (kh, kw),
            cache.stride,
            cache.pad,
            (oh, ow),
            &mut gi.data_mut()[bi * c * h * w..(bi + 1) * c * h * w],
        );
    }
    Ok(ConvGrads {
        input: gi,
        weights: gw,
        bias: gb,
    })
}

fn dims4<T: Scalar>(t: &Tensor<T>, what: &str) -> Result<[usize; 4]> {
    match t.shape() {
        [a, b, c, d] => Ok([*a, *b, *c, *d]),
        other => Err(Error::dimension(
            what,
            format!("expected 4 dims, got {other:?}"),
        )),
    }
}

// ---------------------------------------------------------------------------
// max pooling
// ---------------------------------------------------------------------------

pub struct PoolCache {
    input_shape: [usize; 4],
    out_shape: [usize; 4],
    /// Flat input index of the window maximum, per output element. Ties go to
    /// the first (row-major) element of the window.
    argmax: Vec<u32>,
}

/// Windowed maximum over [B,C,H,W] spatial planes.
pub fn maxpool_forward<T: Scalar>(
    input: &Tensor<T>,
    kernel: usize,
    stride: usize,
) -> Result<(Tensor<T>, PoolCache)> {
    let [b, c, h, w] = dims4(input, "input")?;
    if stride == 0 {
        return Err(Error::dimension("stride", "stride must be >= 1"));
    }
    if kernel > h {
        return Err(Error::dimension(
            "height",
            format!("pool kernel {kernel} exceeds input height {h}"),
        ));
    }
    if kernel > w {
        return Err(Error::dimension(
            "width",
            format!("pool kernel {kernel} exceeds input width {w}"),
        ));
    }
    let oh = (h - kernel) / stride + 1;
    let ow = (w - kernel) / stride + 1;
    let mut out = Tensor::zeros(vec![b, c, oh, ow]);
    let mut argmax = vec![0u32; b * c * oh * ow];
    let data = input.data();
    let mut oidx = 0;
    for bc in 0..b * c {
        let plane = &data[bc * h * w..(bc + 1) * h * w];
        for oi in 0..oh {
            for oj in 0..ow {
                let (y0, x0) = (oi * stride, oj * stride);
                let mut best = plane[y0 * w + x0];
                let mut best_at = y0 * w + x0;
                for ki in 0..kernel {
                    let row = (y0 + ki) * w;
                    for kj in 0..kernel {
                        let at = row + x0 + kj;
                        if plane[at] > best {
                            best = plane[at];
                            best_at = at;
                        }
                    }
                }
                out.data_mut()[oidx] = best;
                argmax[oidx] = (bc * h * w + best_at) as u32;
                oidx += 1;
            }
        }
    }
    Ok((
        out,
        PoolCache {
            input_shape: [b, c, h, w],
            out_shape: [b, c, oh, ow],
            argmax,
        },
    ))
}

/// Routes each output gradient to the input element that won the max.
pub fn maxpool_backward<T: Scalar>(cache: &PoolCache, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if grad_out.shape() != cache.out_shape {
        return Err(Error::dimension(
            "grad",
            format!(
                "grad shape {:?} does not match output {:?}",
                grad_out.shape(),
                cache.out_shape
            ),
        ));
    }
    let mut gi = Tensor::zeros(cache.input_shape.to_vec());
    let gid = gi.data_mut();
    for (&src, &g) in cache.argmax.iter().zip(grad_out.data()) {
        gid[src as usize] = gid[src as usize] + g;
    }
    Ok(gi)
}

// ---------------------------------------------------------------------------
// relu
// ---------------------------------------------------------------------------

pub fn relu_forward<T: Scalar>(values: &mut [T]) {
    for v in values {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Masks the gradient by the post-activation output (relu'(0) taken as 0).
pub fn relu_backward<T: Scalar>(output: &[T], grad: &mut [T]) {
    for (g, &o) in grad.iter_mut().zip(output) {
        if o <= T::zero() {
            *g = T::zero();
        }
    }
}

// ---------------------------------------------------------------------------
// dropout
// ---------------------------------------------------------------------------

/// Element factors for one dropout application: 0 for dropped units,
/// 1/keep_prob for kept ones (inverted dropout, so evaluation is identity).
pub struct DropoutMask<T> {
    factors: Vec<T>,
}

impl<T: Scalar> DropoutMask<T> {
    pub fn sample(len: usize, keep_prob: f64, stream: &mut Stream) -> Self {
        assert!(keep_prob > 0.0 && keep_prob <= 1.0);
        let scale = T::from_f64(1.0 / keep_prob);
        let factors = (0..len)
            .map(|_| {
                if stream.next_f64() < keep_prob {
                    scale
                } else {
                    T::zero()
                }
            })
            .collect();
        Self { factors }
    }

    pub fn factors(&self) -> &[T] {
        &self.factors
    }

    pub fn apply(&self, values: &mut [T]) {
        debug_assert_eq!(values.len(), self.factors.len());
        for (v, &f) in values.iter_mut().zip(&self.factors) {
            *v = *v * f;
        }
    }
}

pub fn dropout_forward<T: Scalar>(
    values: &mut [T],
    keep_prob: f64,
    stream: &mut Stream,
) -> DropoutMask<T> {
    let mask = DropoutMask::sample(values.len(), keep_prob, stream);
    mask.apply(values);
    mask
}

pub fn dropout_backward<T: Scalar>(mask: &DropoutMask<T>, grad: &mut [T]) {
    mask.apply(grad);
}

// ---------------------------------------------------------------------------
// fully connected
// ---------------------------------------------------------------------------

pub struct FcGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

/// input [B,Din] x weights [Din,Dout] + bias [Dout] -> [B,Dout].
pub fn fc_forward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (b, din) = dims2(input, "input")?;
    let (wdin, dout) = dims2(weights, "weights")?;
    if din != wdin {
        return Err(Error::dimension(
            "features",
            format!("input has {din} features, weights expect {wdin}"),
        ));
    }
    if bias.shape() != [dout] {
        return Err(Error::dimension(
            "bias",
            format!("bias shape {:?} does not match {dout} units", bias.shape()),
        ));
    }
    let mut out = Tensor::zeros(vec![b, dout]);
    gemm_acc(b, din, dout, input.data(), weights.data(), out.data_mut());
    for bi in 0..b {
        let row = &mut out.data_mut()[bi * dout..(bi + 1) * dout];
        for (v, &bv) in row.iter_mut().zip(bias.data()) {
            *v = *v + bv;
        }
    }
    Ok(out)
}

pub fn fc_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<FcGrads<T>> {
    let (b, din) = dims2(input, "input")?;
    let (_, dout) = dims2(weights, "weights")?;
    if grad_out.shape() != [b, dout] {
        return Err(Error::dimension(
            "grad",
            format!(
                "grad shape {:?} does not match output [{b}, {dout}]",
                grad_out.shape()
            ),
        ));
    }
    let mut gi = Tensor::zeros(vec![b, din]);
    let mut gw = Tensor::zeros(vec![din, dout]);
    let mut gb = Tensor::zeros(vec![dout]);
    gemm_abt_acc(
        b,
        dout,
        din,
        grad_out.data(),
        weights.data(),
        gi.data_mut(),
    );
    gemm_atb_acc(b, din, dout, input.data(), grad_out.data(), gw.data_mut());
    for bi in 0..b {
        let row = &grad_out.data()[bi * dout..(bi + 1) * dout];
        for (gbv, &g) in gb.data_mut().iter_mut().zip(row) {
            *gbv = *gbv + g;
        }
    }
    Ok(FcGrads {
        input: gi,
        weights: gw,
        bias: gb,
    })
}

fn dims2<T: Scalar>(t: &Tensor<T>, what: &str) -> Result<(usize, usize)> {
    match t.shape() {
        [a, b] => Ok((*a, *b)),
        other => Err(Error::dimension(
            what,
            format!("expected 2 dims, got {other:?}"),
        )),
    }
}

// ---------------------------------------------------------------------------
// softmax cross-entropy
// ---------------------------------------------------------------------------

pub struct SoftmaxXent<T> {
    /// Mean negative log-likelihood over the batch.
    pub loss: T,
    /// d loss / d logits, already divided by the batch size.
    pub grad: Tensor<T>,
    /// Row-wise softmax probabilities.
    pub probs: Tensor<T>,
}

/// Softmax over the last axis of [B,C] logits, mean NLL against `labels`.
pub fn softmax_xent<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<SoftmaxXent<T>> {
    let (b, c) = dims2(logits, "logits")?;
    if labels.len() != b {
        return Err(Error::dimension(
            "batch",
            format!("{} labels for batch of {b}", labels.len()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::Label {
            label: bad,
            classes: c,
        });
    }
    let mut probs = Tensor::zeros(vec![b, c]);
    let mut grad = Tensor::zeros(vec![b, c]);
    let inv_b = T::from_f64(1.0 / b as f64);
    let mut loss = T::zero();
    for bi in 0..b {
        let row = &logits.data()[bi * c..(bi + 1) * c];
        let mut maxv = row[0];
        for &v in &row[1..] {
            if v > maxv {
                maxv = v;
            }
        }
        let prow = &mut probs.data_mut()[bi * c..(bi + 1) * c];
        let mut denom = T::zero();
        for (p, &v) in prow.iter_mut().zip(row) {
            *p = (v - maxv).exp();
            denom = denom + *p;
        }
        let inv = T::one() / denom;
        prow.iter_mut().for_each(|p| *p = *p * inv);
        let p_label = prow[labels[bi]];
        loss = loss - p_label.max(T::min_positive_value()).ln();
        let grow = &mut grad.data_mut()[bi * c..(bi + 1) * c];
        for (g, &p) in grow.iter_mut().zip(prow.iter()) {
            *g = p * inv_b;
        }
        grow[labels[bi]] = grow[labels[bi]] - inv_b;
    }
    Ok(SoftmaxXent {
        loss: loss * inv_b,
        grad,
        probs,
    })
}
