//! Layer kernels. Images are NHWC; convolution weights are `[k, k, cin, cout]`
//! so that an im2col row `(ky, kx, c)` lines up with a weight row.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::{gemm, Array, Element, Op};

/// Probabilities are clamped to `[LOSS_EPSILON, 1]` before taking the log.
pub const LOSS_EPSILON: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub fn relu<T: Element>(x: &Array<T>) -> Array<T> {
    x.map(|v| v.max(T::zero()))
}

/// Softmax over the last axis, with max subtraction.
pub fn softmax<T: Element>(logits: &Array<T>) -> Array<T> {
    let mut out = logits.clone();
    let c = *logits.shape().last().expect("arrays have at least one axis");
    out.data_mut().chunks_exact_mut(c).for_each(softmax_row);
    out
}

pub(crate) fn softmax_row<T: Element>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!("dropout rate must be in [0,1), got {rate}")));
    }
    Ok(())
}

/// Inverted-dropout multipliers: 0 with probability `rate`, else `1/(1-rate)`.
pub fn dropout_mask<T: Element>(len: usize, rate: f64, seed: u64) -> Result<Vec<T>> {
    check_rate(rate)?;
    let keep = T::from_f64(1.0 / (1.0 - rate));
    let mut rng = seed::rng(seed);
    Ok((0..len)
        .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
        .collect())
}

pub fn dropout_forward<T: Element>(x: &Array<T>, rate: f64, mode: Mode, seed: u64) -> Result<Array<T>> {
    check_rate(rate)?;
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(x.clone());
    }
    let mask = dropout_mask::<T>(x.len(), rate, seed)?;
    let mut out = x.clone();
    out.data_mut().iter_mut().zip(&mask).for_each(|(v, &m)| *v = *v * m);
    Ok(out)
}

/// Mean sparse categorical cross-entropy and its gradient with respect to the
/// pre-softmax logits, `(probs - onehot) / B`.
pub fn sparse_ce_loss<T: Element>(probs: &Array<T>, labels: &[usize]) -> Result<(T, Array<T>)> {
    let &[b, c] = probs.shape() else {
        return Err(Error::invalid(format!("loss expects [B, classes], got {:?}", probs.shape())));
    };
    if labels.len() != b {
        return Err(Error::ShapeMismatch {
            op: "sparse_ce_loss",
            left: probs.shape().to_vec(),
            right: vec![labels.len()],
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::invalid(format!("label {bad} out of range for {c} classes")));
    }
    let eps = T::from_f64(LOSS_EPSILON);
    let inv_b = T::one() / T::from_f64(b as f64);
    let mut grad = probs.clone();
    let mut total = T::zero();
    for (row, (g, &label)) in probs.data().chunks_exact(c).zip(grad.data_mut().chunks_exact_mut(c).zip(labels)) {
        total = total - row[label].max(eps).min(T::one()).ln();
        g[label] = g[label] - T::one();
        g.iter_mut().for_each(|v| *v = *v * inv_b);
    }
    Ok((total * inv_b, grad))
}

/// Copies every k×k×cin patch of one image into a row of `cols`.
fn im2col<T: Copy>(x: &[T], h: usize, w: usize, cin: usize, k: usize, cols: &mut [T]) {
    let (ho, wo) = (h - k + 1, w - k + 1);
    let span = k * cin;
    let row_len = k * span;
    for oy in 0..ho {
        for ox in 0..wo {
            let dst = &mut cols[(oy * wo + ox) * row_len..][..row_len];
            for ky in 0..k {
                let src = ((oy + ky) * w + ox) * cin;
                dst[ky * span..(ky + 1) * span].copy_from_slice(&x[src..src + span]);
            }
        }
    }
}

fn col2im_add<T: Element>(cols: &[T], h: usize, w: usize, cin: usize, k: usize, dx: &mut [T]) {
    let (ho, wo) = (h - k + 1, w - k + 1);
    let span = k * cin;
    let row_len = k * span;
    for oy in 0..ho {
        for ox in 0..wo {
            let src = &cols[(oy * wo + ox) * row_len..][..row_len];
            for ky in 0..k {
                let dst = ((oy + ky) * w + ox) * cin;
                for (d, &s) in dx[dst..dst + span].iter_mut().zip(&src[ky * span..(ky + 1) * span]) {
                    *d = *d + s;
                }
            }
        }
    }
}

/// Geometry of a valid, stride-1 convolution over a batch.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub k: usize,
    pub cout: usize,
}

impl ConvGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        (self.h - self.k + 1, self.w - self.k + 1)
    }

    fn in_len(&self) -> usize {
        self.h * self.w * self.cin
    }

    fn out_len(&self) -> usize {
        let (ho, wo) = self.out_hw();
        ho * wo * self.cout
    }

    fn patch_len(&self) -> usize {
        self.k * self.k * self.cin
    }
}

/// Input depth from which convolutions skip im2col and instead sum one
/// GEMM per kernel tap over a shifted view of the input.
const SHIFTED_MIN_CIN: usize = 8;

impl ConvGeom {
    fn shifted(&self) -> bool {
        self.cin >= SHIFTED_MIN_CIN
    }

    /// Rows of the full-width output grid touched by the shifted GEMMs:
    /// row `oy * w + ox` covers every `ox < w`, the tail past the last valid
    /// output is dropped so shifted views stay inside the image.
    fn shifted_rows(&self) -> usize {
        let (ho, _) = self.out_hw();
        ho * self.w - (self.k - 1)
    }

    fn tap_offset(&self, ky: usize, kx: usize) -> usize {
        (ky * self.w + kx) * self.cin
    }

    fn tap_weights<'a, T>(&self, weights: &'a [T], ky: usize, kx: usize) -> &'a [T] {
        let len = self.cin * self.cout;
        &weights[(ky * self.k + kx) * len..][..len]
    }
}

fn conv_forward_image<T: Element>(
    xi: &[T],
    g: ConvGeom,
    weights: &[T],
    bias: &[T],
    apply_relu: bool,
    scratch: &mut Vec<T>,
    y: &mut [T],
) {
    let (ho, wo) = g.out_hw();
    if g.shifted() {
        let m = g.shifted_rows();
        scratch.clear();
        scratch.resize(m * g.cout, T::zero());
        for ky in 0..g.k {
            for kx in 0..g.k {
                let a = &xi[g.tap_offset(ky, kx)..][..m * g.cin];
                let b = g.tap_weights(weights, ky, kx);
                gemm(Op::N, Op::N, m, g.cin, g.cout, T::one(), a, b, T::one(), scratch);
            }
        }
        for oy in 0..ho {
            let src = &scratch[oy * g.w * g.cout..][..wo * g.cout];
            y[oy * wo * g.cout..][..wo * g.cout].copy_from_slice(src);
        }
    } else {
        scratch.resize(ho * wo * g.patch_len(), T::zero());
        im2col(xi, g.h, g.w, g.cin, g.k, scratch);
        gemm(Op::N, Op::N, ho * wo, g.patch_len(), g.cout, T::one(), scratch, weights, T::zero(), y);
    }
    for px in y.chunks_exact_mut(g.cout) {
        for (v, &b) in px.iter_mut().zip(bias) {
            let z = *v + b;
            *v = if apply_relu { z.max(T::zero()) } else { z };
        }
    }
}

/// Batched convolution plus bias, optionally followed by ReLU. Images are
/// processed independently, so the result does not depend on the pool size.
pub(crate) fn conv_forward_batch<T: Element>(
    x: &[T],
    g: ConvGeom,
    weights: &[T],
    bias: &[T],
    apply_relu: bool,
) -> Vec<T> {
    let batch = x.len() / g.in_len();
    let mut out = vec![T::zero(); batch * g.out_len()];
    out.par_chunks_mut(g.out_len())
        .zip(x.par_chunks(g.in_len()))
        .for_each_init(Vec::new, |scratch, (y, xi)| {
            conv_forward_image(xi, g, weights, bias, apply_relu, scratch, y)
        });
    out
}

pub(crate) struct ConvGrads<T> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
    pub input: Option<Vec<T>>,
}

type ImageGrads<T> = (Vec<T>, Vec<T>, Option<Vec<T>>);

fn conv_backward_image<T: Element>(
    xi: &[T],
    g: ConvGeom,
    weights: &[T],
    dyi: &[T],
    need_input_grad: bool,
    scratch: &mut Vec<T>,
) -> ImageGrads<T> {
    let (ho, wo) = g.out_hw();
    let patch = g.patch_len();
    let mut db = vec![T::zero(); g.cout];
    for px in dyi.chunks_exact(g.cout) {
        add_assign(&mut db, px);
    }
    let mut dw = vec![T::zero(); patch * g.cout];
    let mut dx = need_input_grad.then(|| vec![T::zero(); g.in_len()]);
    if g.shifted() {
        // dy on the full-width grid, zero where the output column is invalid
        let m = g.shifted_rows();
        scratch.clear();
        scratch.resize(m * g.cout, T::zero());
        for oy in 0..ho {
            scratch[oy * g.w * g.cout..][..wo * g.cout].copy_from_slice(&dyi[oy * wo * g.cout..][..wo * g.cout]);
        }
        let tap = g.cin * g.cout;
        for ky in 0..g.k {
            for kx in 0..g.k {
                let off = g.tap_offset(ky, kx);
                let a = &xi[off..][..m * g.cin];
                let dwt = &mut dw[(ky * g.k + kx) * tap..][..tap];
                gemm(Op::T, Op::N, g.cin, m, g.cout, T::one(), a, scratch, T::zero(), dwt);
                if let Some(dx) = dx.as_mut() {
                    let b = g.tap_weights(weights, ky, kx);
                    gemm(Op::N, Op::T, m, g.cout, g.cin, T::one(), scratch, b, T::one(), &mut dx[off..][..m * g.cin]);
                }
            }
        }
    } else {
        let rows = ho * wo;
        scratch.resize(rows * patch, T::zero());
        im2col(xi, g.h, g.w, g.cin, g.k, scratch);
        gemm(Op::T, Op::N, patch, rows, g.cout, T::one(), scratch, dyi, T::zero(), &mut dw);
        if let Some(dx) = dx.as_mut() {
            gemm(Op::N, Op::T, rows, g.cout, patch, T::one(), dyi, weights, T::zero(), scratch);
            col2im_add(scratch, g.h, g.w, g.cin, g.k, dx);
        }
    }
    (dw, db, dx)
}

pub(crate) fn add_assign<T: Element>(acc: &mut [T], v: &[T]) {
    for (a, &b) in acc.iter_mut().zip(v) {
        *a = *a + b;
    }
}

fn pool_image<T: Element>(xi: &[T], h: usize, w: usize, c: usize, o: &mut [T], ix: &mut [u32]) {
    let (ph, pw) = (h / 2, w / 2);
    for py in 0..ph {
        for px in 0..pw {
            for ch in 0..c {
                let mut best = ((2 * py) * w + 2 * px) * c + ch;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let cand = ((2 * py + dy) * w + 2 * px + dx) * c + ch;
                    if xi[cand] > xi[best] {
                        best = cand;
                    }
                }
                let o_i = (py * pw + px) * c + ch;
                o[o_i] = xi[best];
                ix[o_i] = best as u32;
            }
        }
    }
}

/// 2×2 max pooling, stride 2, over `[batch, h, w, c]`. Returns the pooled
/// values and, per output, the flat index of the winning input element
/// within its image (first maximum in row-major window order).
pub(crate) fn pool_forward_batch<T: Element>(
    x: &[T],
    h: usize,
    w: usize,
    c: usize,
) -> (Vec<T>, Vec<u32>) {
    let in_len = h * w * c;
    let out_len = (h / 2) * (w / 2) * c;
    let batch = x.len() / in_len;
    let mut out = vec![T::zero(); batch * out_len];
    let mut idx = vec![0u32; batch * out_len];
    out.par_chunks_mut(out_len)
        .zip(idx.par_chunks_mut(out_len))
        .zip(x.par_chunks(in_len))
        .for_each(|((o, ix), xi)| pool_image(xi, h, w, c, o, ix));
    (out, idx)
}

pub(crate) struct ConvPool<T> {
    /// Post-ReLU convolution output, present only when requested.
    pub conv: Option<Vec<T>>,
    pub pool: Vec<T>,
    pub argmax: Vec<u32>,
}

/// Convolution, ReLU and 2×2 max pooling fused per image, so the full-size
/// convolution output of the batch is only materialized when `keep_conv`.
pub(crate) fn conv_pool_forward_batch<T: Element>(
    x: &[T],
    g: ConvGeom,
    weights: &[T],
    bias: &[T],
    keep_conv: bool,
) -> ConvPool<T> {
    let (ho, wo) = g.out_hw();
    let pool_len = (ho / 2) * (wo / 2) * g.cout;
    let per_image: Vec<(Vec<T>, Vec<u32>, Option<Vec<T>>)> = x
        .par_chunks(g.in_len())
        .map_init(
            || (Vec::new(), Vec::new()),
            |(scratch, y), xi| {
                y.clear();
                y.resize(g.out_len(), T::zero());
                conv_forward_image(xi, g, weights, bias, true, scratch, y);
                let mut o = vec![T::zero(); pool_len];
                let mut ix = vec![0u32; pool_len];
                pool_image(y, ho, wo, g.cout, &mut o, &mut ix);
                (o, ix, keep_conv.then(|| y.clone()))
            },
        )
        .collect();
    let batch = per_image.len();
    let mut out = ConvPool {
        conv: keep_conv.then(|| Vec::with_capacity(batch * g.out_len())),
        pool: Vec::with_capacity(batch * pool_len),
        argmax: Vec::with_capacity(batch * pool_len),
    };
    for (o, ix, y) in per_image {
        out.pool.extend_from_slice(&o);
        out.argmax.extend_from_slice(&ix);
        if let (Some(all), Some(y)) = (out.conv.as_mut(), y) {
            all.extend_from_slice(&y);
        }
    }
    out
}

/// Backward through pool, ReLU and convolution for one fused block. A pooled
/// value of 0 means its winning convolution output was clipped by the ReLU,
/// so no gradient flows through it.
pub(crate) fn conv_pool_backward_batch<T: Element>(
    x: &[T],
    g: ConvGeom,
    weights: &[T],
    d_pool: &[T],
    pool: &[T],
    argmax: &[u32],
    need_input_grad: bool,
) -> ConvGrads<T> {
    let (ho, wo) = g.out_hw();
    let pool_len = (ho / 2) * (wo / 2) * g.cout;
    let per_image: Vec<ImageGrads<T>> = x
        .par_chunks(g.in_len())
        .zip(d_pool.par_chunks(pool_len).zip(pool.par_chunks(pool_len)).zip(argmax.par_chunks(pool_len)))
        .map_init(
            || (Vec::new(), Vec::new()),
            |(scratch, dy), (xi, ((dp, p), ix))| {
                dy.clear();
                dy.resize(g.out_len(), T::zero());
                for ((&d, &v), &i) in dp.iter().zip(p).zip(ix) {
                    if v > T::zero() {
                        dy[i as usize] = dy[i as usize] + d;
                    }
                }
                conv_backward_image(xi, g, weights, dy, need_input_grad, scratch)
            },
        )
        .collect();
    reduce_conv_grads(per_image, g, need_input_grad, x.len())
}

fn reduce_conv_grads<T: Element>(per_image: Vec<ImageGrads<T>>, g: ConvGeom, need_input_grad: bool, in_total: usize) -> ConvGrads<T> {
    let mut weights_grad = vec![T::zero(); g.patch_len() * g.cout];
    let mut bias_grad = vec![T::zero(); g.cout];
    let mut input_grad = need_input_grad.then(|| Vec::with_capacity(in_total));
    for (dw, db, dx) in per_image {
        add_assign(&mut weights_grad, &dw);
        add_assign(&mut bias_grad, &db);
        if let (Some(all), Some(dx)) = (input_grad.as_mut(), dx) {
            all.extend_from_slice(&dx);
        }
    }
    ConvGrads {
        weights: weights_grad,
        bias: bias_grad,
        input: input_grad,
    }
}

/// Dense layer over a batch: `[b, n] x [n, m] + bias`.
pub(crate) fn dense_forward_batch<T: Element>(x: &[T], n: usize, w: &[T], bias: &[T], apply_relu: bool) -> Vec<T> {
    let m = bias.len();
    let b = x.len() / n;
    let mut out = vec![T::zero(); b * m];
    gemm(Op::N, Op::N, b, n, m, T::one(), x, w, T::zero(), &mut out);
    for row in out.chunks_exact_mut(m) {
        for (v, &bb) in row.iter_mut().zip(bias) {
            let z = *v + bb;
            *v = if apply_relu { z.max(T::zero()) } else { z };
        }
    }
    out
}

/// Returns `(dW, db, dX)` for a dense layer with upstream gradient `dz` `[b, m]`.
pub(crate) fn dense_backward_batch<T: Element>(x: &[T], n: usize, w: &[T], dz: &[T], m: usize) -> (Vec<T>, Vec<T>, Vec<T>) {
    let b = x.len() / n;
    let mut dw = vec![T::zero(); n * m];
    gemm(Op::T, Op::N, n, b, m, T::one(), x, dz, T::zero(), &mut dw);
    let mut db = vec![T::zero(); m];
    for row in dz.chunks_exact(m) {
        add_assign(&mut db, row);
    }
    let mut dx = vec![T::zero(); b * n];
    gemm(Op::N, Op::T, b, m, n, T::one(), dz, w, T::zero(), &mut dx);
    (dw, db, dx)
}

/// Single-image valid cross-correlation, stride 1, bias added, no activation.
pub fn conv2d_forward<T: Element>(x: &Array<T>, w: &Array<T>, b: &Array<T>) -> Result<Array<T>> {
    let (&[h, wd, cin], &[k, k2, wcin, cout]) = (x.shape(), w.shape()) else {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            left: x.shape().to_vec(),
            right: w.shape().to_vec(),
        });
    };
    if k != k2 || wcin != cin || b.shape() != [cout] {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            left: x.shape().to_vec(),
            right: w.shape().to_vec(),
        });
    }
    if h < k || wd < k {
        return Err(Error::invalid(format!("kernel {k}x{k} larger than input {h}x{wd}")));
    }
    let g = ConvGeom { h, w: wd, cin, k, cout };
    let (ho, wo) = g.out_hw();
    let out = conv_forward_batch(x.data(), g, w.data(), b.data(), false);
    Array::from_vec([ho, wo, cout], out)
}

pub fn maxpool2d_forward<T: Element>(x: &Array<T>) -> Result<(Array<T>, Vec<u32>)> {
    let &[h, w, c] = x.shape() else {
        return Err(Error::invalid(format!("maxpool expects [H, W, C], got {:?}", x.shape())));
    };
    if h < 2 || w < 2 {
        return Err(Error::invalid(format!("maxpool needs at least 2x2 input, got {h}x{w}")));
    }
    let (out, idx) = pool_forward_batch(x.data(), h, w, c);
    Ok((Array::from_vec([h / 2, w / 2, c], out)?, idx))
}

pub fn dense_forward<T: Element>(x: &Array<T>, w: &Array<T>, b: &Array<T>) -> Result<Array<T>> {
    match (x.shape(), w.shape(), b.shape()) {
        (&[n], &[n2, m], &[m2]) if n == n2 && m == m2 => {
            Array::from_vec([m], dense_forward_batch(x.data(), n, w.data(), b.data(), false))
        }
        _ => Err(Error::ShapeMismatch {
            op: "dense",
            left: x.shape().to_vec(),
            right: w.shape().to_vec(),
        }),
    }
}
