//! Layer kinds and their forward/backward kernels.
//!
//! Tensors are NCHW with the batch dimension leading. Convolutions run as
//! per-sample im2col + matmul; im2col buffers are recomputed in the backward
//! pass instead of cached, which keeps traces small.
//!
//! Gradient accumulation over the batch is chunked into a fixed number of
//! chunks reduced in index order, so results are bitwise identical no matter
//! how many threads rayon uses.

use crate::error::{Error, Result};
use crate::tensor::{matmul, matmul_at, matmul_bt, Tensor};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Fixed chunk count for batch-gradient reduction (not tied to thread count).
const GRAD_CHUNKS: usize = 8;

pub const BN_EPS: f32 = 1e-5;
/// Running statistics decay: run = BN_DECAY * run + (1 - BN_DECAY) * batch.
pub const BN_DECAY: f32 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Padding {
    /// TensorFlow-style: output = ceil(in / stride), zeros split low/high.
    Same,
    /// No padding; output = floor((in - kernel) / stride) + 1.
    Valid,
}

/// Output extent and low-side padding for one spatial dimension.
pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, padding: Padding) -> (usize, usize) {
    match padding {
        Padding::Valid => ((input - kernel) / stride + 1, 0),
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(input);
            (out, total / 2)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerSpec {
    Dense { in_dim: usize, out_dim: usize },
    Conv2d { in_ch: usize, out_ch: usize, kernel: usize, stride: usize, padding: Padding, bias: bool },
    Relu,
    MaxPool { kernel: usize, stride: usize, padding: Padding },
    AvgPool { kernel: usize, stride: usize },
    Flatten,
    BatchNorm { channels: usize },
    /// Two 3x3 conv + batchnorm stages with an identity shortcut
    /// (subsampled and zero-padded on channel growth).
    Residual { in_ch: usize, out_ch: usize, stride: usize },
}

impl LayerSpec {
    /// Output shape (without batch) for a given input shape; errors when the
    /// layers are not shape-compatible.
    pub fn out_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = |msg: String| Err(Error::Shape(msg));
        match *self {
            LayerSpec::Dense { in_dim, out_dim } => {
                if input != [in_dim] {
                    return bad(format!("dense expects [{in_dim}], got {input:?}"));
                }
                Ok(vec![out_dim])
            }
            LayerSpec::Conv2d { in_ch, out_ch, kernel, stride, padding, .. } => {
                let [c, h, w] = spatial3(input)?;
                if c != in_ch {
                    return bad(format!("conv expects {in_ch} channels, got {c}"));
                }
                if matches!(padding, Padding::Valid) && (h < kernel || w < kernel) {
                    return bad(format!("conv kernel {kernel} exceeds input {h}x{w}"));
                }
                let (oh, _) = conv_out_dim(h, kernel, stride, padding);
                let (ow, _) = conv_out_dim(w, kernel, stride, padding);
                Ok(vec![out_ch, oh, ow])
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::MaxPool { kernel, stride, padding } => {
                let [c, h, w] = spatial3(input)?;
                let (oh, _) = conv_out_dim(h, kernel, stride, padding);
                let (ow, _) = conv_out_dim(w, kernel, stride, padding);
                Ok(vec![c, oh, ow])
            }
            LayerSpec::AvgPool { kernel, stride } => {
                let [c, h, w] = spatial3(input)?;
                if h < kernel || w < kernel {
                    return bad(format!("avgpool kernel {kernel} exceeds input {h}x{w}"));
                }
                Ok(vec![c, (h - kernel) / stride + 1, (w - kernel) / stride + 1])
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::BatchNorm { channels } => {
                let [c, _, _] = spatial3(input)?;
                if c != channels {
                    return bad(format!("batchnorm expects {channels} channels, got {c}"));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Residual { in_ch, out_ch, stride } => {
                let [c, h, w] = spatial3(input)?;
                if c != in_ch {
                    return bad(format!("residual expects {in_ch} channels, got {c}"));
                }
                let (oh, _) = conv_out_dim(h, 3, stride, Padding::Same);
                let (ow, _) = conv_out_dim(w, 3, stride, Padding::Same);
                Ok(vec![out_ch, oh, ow])
            }
        }
    }
}

fn spatial3(shape: &[usize]) -> Result<[usize; 3]> {
    if shape.len() != 3 {
        return Err(Error::Shape(format!("expected [C,H,W], got {shape:?}")));
    }
    Ok([shape[0], shape[1], shape[2]])
}

// ---------------------------------------------------------------------------
// Dense

pub fn dense_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let batch = x.batch();
    let in_dim = x.row_len();
    let out_dim = w.shape()[0];
    debug_assert_eq!(w.shape()[1], in_dim);
    let mut y = matmul_bt(x.data(), w.data(), batch, in_dim, out_dim);
    for row in y.chunks_mut(out_dim) {
        for (v, &bi) in row.iter_mut().zip(b.data().iter()) {
            *v += bi;
        }
    }
    Tensor::new(y, vec![batch, out_dim]).expect("dense output shape")
}

pub struct DenseGrads {
    pub dw: Tensor,
    pub db: Tensor,
}

pub fn dense_backward(
    x: &Tensor,
    w: &Tensor,
    d_out: &Tensor,
    need_params: bool,
) -> (Tensor, Option<DenseGrads>) {
    let batch = x.batch();
    let in_dim = x.row_len();
    let out_dim = w.shape()[0];
    let dx = matmul(d_out.data(), w.data(), batch, out_dim, in_dim);
    let dx = Tensor::new(dx, x.shape().to_vec()).expect("dense dx shape");
    if !need_params {
        return (dx, None);
    }
    let dw = matmul_at(d_out.data(), x.data(), out_dim, batch, in_dim);
    let mut db = vec![0.0f32; out_dim];
    for row in d_out.data().chunks(out_dim) {
        for (s, &v) in db.iter_mut().zip(row.iter()) {
            *s += v;
        }
    }
    let dw = Tensor::new(dw, w.shape().to_vec()).expect("dense dw shape");
    let db = Tensor::new(db, vec![out_dim]).expect("dense db shape");
    (dx, Some(DenseGrads { dw, db }))
}

// ---------------------------------------------------------------------------
// Conv2d

struct ConvDims {
    in_ch: usize,
    h: usize,
    w: usize,
    out_ch: usize,
    kernel: usize,
    stride: usize,
    oh: usize,
    ow: usize,
    pad_h: usize,
    pad_w: usize,
}

fn conv_dims(x_shape: &[usize], w_shape: &[usize], stride: usize, padding: Padding) -> ConvDims {
    let (in_ch, h, w) = (x_shape[1], x_shape[2], x_shape[3]);
    let (out_ch, kernel) = (w_shape[0], w_shape[2]);
    debug_assert_eq!(w_shape[1], in_ch);
    let (oh, pad_h) = conv_out_dim(h, kernel, stride, padding);
    let (ow, pad_w) = conv_out_dim(w, kernel, stride, padding);
    ConvDims { in_ch, h, w, out_ch, kernel, stride, oh, ow, pad_h, pad_w }
}

/// Lower one sample into a (in_ch*k*k) x (oh*ow) patch matrix.
fn im2col(sample: &[f32], d: &ConvDims, col: &mut [f32]) {
    let osp = d.oh * d.ow;
    debug_assert_eq!(col.len(), d.in_ch * d.kernel * d.kernel * osp);
    let mut r = 0usize;
    for c in 0..d.in_ch {
        let plane = &sample[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ki in 0..d.kernel {
            for kj in 0..d.kernel {
                let dst = &mut col[r * osp..(r + 1) * osp];
                r += 1;
                let mut o = 0usize;
                for oh in 0..d.oh {
                    let ih = (oh * d.stride + ki) as isize - d.pad_h as isize;
                    if ih < 0 || ih >= d.h as isize {
                        dst[o..o + d.ow].fill(0.0);
                        o += d.ow;
                        continue;
                    }
                    let src_row = &plane[ih as usize * d.w..(ih as usize + 1) * d.w];
                    for ow in 0..d.ow {
                        let iw = (ow * d.stride + kj) as isize - d.pad_w as isize;
                        dst[o] = if iw < 0 || iw >= d.w as isize {
                            0.0
                        } else {
                            src_row[iw as usize]
                        };
                        o += 1;
                    }
                }
            }
        }
    }
}

/// Scatter-add a patch-matrix gradient back onto an input sample.
fn col2im(dcol: &[f32], d: &ConvDims, dx: &mut [f32]) {
    let osp = d.oh * d.ow;
    let mut r = 0usize;
    for c in 0..d.in_ch {
        let plane_off = c * d.h * d.w;
        for ki in 0..d.kernel {
            for kj in 0..d.kernel {
                let src = &dcol[r * osp..(r + 1) * osp];
                r += 1;
                let mut o = 0usize;
                for oh in 0..d.oh {
                    let ih = (oh * d.stride + ki) as isize - d.pad_h as isize;
                    if ih < 0 || ih >= d.h as isize {
                        o += d.ow;
                        continue;
                    }
                    let row_off = plane_off + ih as usize * d.w;
                    for ow in 0..d.ow {
                        let iw = (ow * d.stride + kj) as isize - d.pad_w as isize;
                        if iw >= 0 && iw < d.w as isize {
                            dx[row_off + iw as usize] += src[o];
                        }
                        o += 1;
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward(
    x: &Tensor,
    w: &Tensor,
    b: Option<&Tensor>,
    stride: usize,
    padding: Padding,
) -> Tensor {
    let d = conv_dims(x.shape(), w.shape(), stride, padding);
    let batch = x.batch();
    let k_len = d.in_ch * d.kernel * d.kernel;
    let osp = d.oh * d.ow;
    let out_row = d.out_ch * osp;
    let mut out = vec![0.0f32; batch * out_row];
    out.par_chunks_mut(out_row)
        .enumerate()
        .for_each(|(s, out_s)| {
            let mut col = vec![0.0f32; k_len * osp];
            im2col(x.row(s), &d, &mut col);
            let y = matmul(w.data(), &col, d.out_ch, k_len, osp);
            out_s.copy_from_slice(&y);
            if let Some(b) = b {
                for (c, &bc) in b.data().iter().enumerate() {
                    for v in &mut out_s[c * osp..(c + 1) * osp] {
                        *v += bc;
                    }
                }
            }
        });
    Tensor::new(out, vec![batch, d.out_ch, d.oh, d.ow]).expect("conv output shape")
}

pub struct ConvGrads {
    pub dw: Tensor,
    pub db: Option<Tensor>,
}

pub fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    d_out: &Tensor,
    stride: usize,
    padding: Padding,
    has_bias: bool,
    need_params: bool,
) -> (Tensor, Option<ConvGrads>) {
    let d = conv_dims(x.shape(), w.shape(), stride, padding);
    let batch = x.batch();
    let k_len = d.in_ch * d.kernel * d.kernel;
    let osp = d.oh * d.ow;
    let in_row = d.in_ch * d.h * d.w;

    let mut dx = vec![0.0f32; batch * in_row];
    dx.par_chunks_mut(in_row)
        .enumerate()
        .for_each(|(s, dx_s)| {
            let dcol = matmul_at(w.data(), d_out.row(s), k_len, d.out_ch, osp);
            col2im(&dcol, &d, dx_s);
        });
    let dx = Tensor::new(dx, x.shape().to_vec()).expect("conv dx shape");

    if !need_params {
        return (dx, None);
    }

    // Per-chunk partial sums reduced in chunk order keep accumulation
    // deterministic under any thread count.
    let chunk = batch.div_ceil(GRAD_CHUNKS).max(1);
    let partials: Vec<(Vec<f32>, Vec<f32>)> = (0..batch)
        .collect::<Vec<_>>()
        .par_chunks(chunk)
        .map(|samples| {
            let mut dw = vec![0.0f32; d.out_ch * k_len];
            let mut db = vec![0.0f32; d.out_ch];
            let mut col = vec![0.0f32; k_len * osp];
            for &s in samples {
                im2col(x.row(s), &d, &mut col);
                let dw_s = matmul_bt(d_out.row(s), &col, d.out_ch, osp, k_len);
                for (a, &v) in dw.iter_mut().zip(dw_s.iter()) {
                    *a += v;
                }
                if has_bias {
                    for c in 0..d.out_ch {
                        let mut acc = 0.0f32;
                        for &v in &d_out.row(s)[c * osp..(c + 1) * osp] {
                            acc += v;
                        }
                        db[c] += acc;
                    }
                }
            }
            (dw, db)
        })
        .collect();

    let mut dw = vec![0.0f32; d.out_ch * k_len];
    let mut db = vec![0.0f32; d.out_ch];
    for (pw, pb) in partials {
        for (a, v) in dw.iter_mut().zip(pw) {
            *a += v;
        }
        for (a, v) in db.iter_mut().zip(pb) {
            *a += v;
        }
    }
    let dw = Tensor::new(dw, w.shape().to_vec()).expect("conv dw shape");
    let db = has_bias.then(|| Tensor::new(db, vec![d.out_ch]).expect("conv db shape"));
    (dx, Some(ConvGrads { dw, db }))
}

// ---------------------------------------------------------------------------
// Activations and pooling

pub fn relu_forward(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

pub fn relu_backward(x: &Tensor, d_y: &Tensor) -> Tensor {
    x.zip_map(d_y, |xi, di| if xi > 0.0 { di } else { 0.0 })
        .expect("relu grad shape")
}

pub fn maxpool_forward(
    x: &Tensor,
    kernel: usize,
    stride: usize,
    padding: Padding,
) -> (Tensor, Vec<u32>) {
    let (batch, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (oh, pad_h) = conv_out_dim(h, kernel, stride, padding);
    let (ow, pad_w) = conv_out_dim(w, kernel, stride, padding);
    let out_row = c * oh * ow;
    let mut out = vec![0.0f32; batch * out_row];
    let mut idx = vec![0u32; batch * out_row];
    out.chunks_mut(out_row)
        .zip(idx.chunks_mut(out_row))
        .enumerate()
        .for_each(|(s, (out_s, idx_s))| {
            let sample = x.row(s);
            let mut o = 0usize;
            for ci in 0..c {
                let plane = &sample[ci * h * w..(ci + 1) * h * w];
                for ohi in 0..oh {
                    for owi in 0..ow {
                        let mut best = f32::NEG_INFINITY;
                        let mut best_i = 0usize;
                        for ki in 0..kernel {
                            let ih = (ohi * stride + ki) as isize - pad_h as isize;
                            if ih < 0 || ih >= h as isize {
                                continue;
                            }
                            for kj in 0..kernel {
                                let iw = (owi * stride + kj) as isize - pad_w as isize;
                                if iw < 0 || iw >= w as isize {
                                    continue;
                                }
                                let fi = ih as usize * w + iw as usize;
                                if plane[fi] > best {
                                    best = plane[fi];
                                    best_i = ci * h * w + fi;
                                }
                            }
                        }
                        out_s[o] = best;
                        idx_s[o] = best_i as u32;
                        o += 1;
                    }
                }
            }
        });
    (
        Tensor::new(out, vec![batch, c, oh, ow]).expect("maxpool output shape"),
        idx,
    )
}

pub fn maxpool_backward(indices: &[u32], in_shape: &[usize], d_out: &Tensor) -> Tensor {
    let mut dx = Tensor::zeros(in_shape);
    let in_row = dx.row_len();
    let out_row = d_out.row_len();
    for s in 0..in_shape[0] {
        let idx_s = &indices[s * out_row..(s + 1) * out_row];
        let d_s = d_out.row(s);
        let dx_s = &mut dx.data_mut()[s * in_row..(s + 1) * in_row];
        for (&i, &d) in idx_s.iter().zip(d_s.iter()) {
            dx_s[i as usize] += d;
        }
    }
    dx
}

pub fn avgpool_forward(x: &Tensor, kernel: usize, stride: usize) -> Tensor {
    let (batch, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let oh = (h - kernel) / stride + 1;
    let ow = (w - kernel) / stride + 1;
    let norm = 1.0 / (kernel * kernel) as f32;
    let mut out = vec![0.0f32; batch * c * oh * ow];
    let mut o = 0usize;
    for s in 0..batch {
        let sample = x.row(s);
        for ci in 0..c {
            let plane = &sample[ci * h * w..(ci + 1) * h * w];
            for ohi in 0..oh {
                for owi in 0..ow {
                    let mut acc = 0.0f32;
                    for ki in 0..kernel {
                        let row = &plane[(ohi * stride + ki) * w..];
                        for kj in 0..kernel {
                            acc += row[owi * stride + kj];
                        }
                    }
                    out[o] = acc * norm;
                    o += 1;
                }
            }
        }
    }
    Tensor::new(out, vec![batch, c, oh, ow]).expect("avgpool output shape")
}

pub fn avgpool_backward(x_shape: &[usize], kernel: usize, stride: usize, d_out: &Tensor) -> Tensor {
    let (batch, c, h, w) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
    let (oh, ow) = (d_out.shape()[2], d_out.shape()[3]);
    let norm = 1.0 / (kernel * kernel) as f32;
    let mut dx = Tensor::zeros(x_shape);
    let in_row = c * h * w;
    let mut o = 0usize;
    for s in 0..batch {
        let dx_s = &mut dx.data_mut()[s * in_row..(s + 1) * in_row];
        for ci in 0..c {
            for ohi in 0..oh {
                for owi in 0..ow {
                    let g = d_out.data()[o] * norm;
                    o += 1;
                    for ki in 0..kernel {
                        let base = ci * h * w + (ohi * stride + ki) * w;
                        for kj in 0..kernel {
                            dx_s[base + owi * stride + kj] += g;
                        }
                    }
                }
            }
        }
    }
    dx
}

// ---------------------------------------------------------------------------
// Batch normalization

#[derive(Debug, Clone)]
pub struct BnAux {
    pub x_hat: Tensor,
    pub inv_std: Vec<f32>,
    pub train_mode: bool,
}

pub struct BnForward {
    pub y: Tensor,
    pub aux: BnAux,
    /// Batch statistics to fold into the running estimates (train mode only).
    pub batch_stats: Option<(Vec<f32>, Vec<f32>)>,
}

pub fn batchnorm_forward(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    run_mean: &Tensor,
    run_var: &Tensor,
    train: bool,
) -> BnForward {
    let (batch, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let plane = h * w;
    let count = (batch * plane) as f32;

    let (mean, var) = if train {
        let mut mean = vec![0.0f32; c];
        let mut var = vec![0.0f32; c];
        for s in 0..batch {
            let sample = x.row(s);
            for ci in 0..c {
                let mut acc = 0.0f32;
                for &v in &sample[ci * plane..(ci + 1) * plane] {
                    acc += v;
                }
                mean[ci] += acc;
            }
        }
        for m in &mut mean {
            *m /= count;
        }
        for s in 0..batch {
            let sample = x.row(s);
            for ci in 0..c {
                let m = mean[ci];
                let mut acc = 0.0f32;
                for &v in &sample[ci * plane..(ci + 1) * plane] {
                    let d = v - m;
                    acc += d * d;
                }
                var[ci] += acc;
            }
        }
        for v in &mut var {
            *v /= count;
        }
        (mean, var)
    } else {
        (run_mean.data().to_vec(), run_var.data().to_vec())
    };

    let inv_std: Vec<f32> = var.iter().map(|&v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut x_hat = vec![0.0f32; x.len()];
    let mut y = vec![0.0f32; x.len()];
    let row = c * plane;
    for s in 0..batch {
        let sample = x.row(s);
        for ci in 0..c {
            let (m, istd) = (mean[ci], inv_std[ci]);
            let (g, b) = (gamma.data()[ci], beta.data()[ci]);
            let off = s * row + ci * plane;
            for i in 0..plane {
                let xh = (sample[ci * plane + i] - m) * istd;
                x_hat[off + i] = xh;
                y[off + i] = g * xh + b;
            }
        }
    }

    BnForward {
        y: Tensor::new(y, x.shape().to_vec()).expect("bn output shape"),
        aux: BnAux {
            x_hat: Tensor::new(x_hat, x.shape().to_vec()).expect("bn xhat shape"),
            inv_std,
            train_mode: train,
        },
        batch_stats: train.then_some((mean, var)),
    }
}

pub struct BnGrads {
    pub d_gamma: Tensor,
    pub d_beta: Tensor,
}

pub fn batchnorm_backward(
    d_y: &Tensor,
    aux: &BnAux,
    gamma: &Tensor,
    need_params: bool,
) -> (Tensor, Option<BnGrads>) {
    let shape = d_y.shape();
    let (batch, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let plane = h * w;
    let row = c * plane;
    let count = (batch * plane) as f32;

    let mut sum_dy = vec![0.0f32; c];
    let mut sum_dy_xhat = vec![0.0f32; c];
    for s in 0..batch {
        for ci in 0..c {
            let off = s * row + ci * plane;
            let mut a = 0.0f32;
            let mut b = 0.0f32;
            for i in 0..plane {
                let dy = d_y.data()[off + i];
                a += dy;
                b += dy * aux.x_hat.data()[off + i];
            }
            sum_dy[ci] += a;
            sum_dy_xhat[ci] += b;
        }
    }

    let mut dx = vec![0.0f32; d_y.len()];
    for s in 0..batch {
        for ci in 0..c {
            let off = s * row + ci * plane;
            let g = gamma.data()[ci] * aux.inv_std[ci];
            if aux.train_mode {
                let mean_dy = sum_dy[ci] / count;
                let mean_dy_xhat = sum_dy_xhat[ci] / count;
                for i in 0..plane {
                    let dy = d_y.data()[off + i];
                    let xh = aux.x_hat.data()[off + i];
                    dx[off + i] = g * (dy - mean_dy - xh * mean_dy_xhat);
                }
            } else {
                for i in 0..plane {
                    dx[off + i] = g * d_y.data()[off + i];
                }
            }
        }
    }

    let dx = Tensor::new(dx, shape.to_vec()).expect("bn dx shape");
    let grads = need_params.then(|| BnGrads {
        d_gamma: Tensor::new(sum_dy_xhat, vec![c]).expect("bn dgamma"),
        d_beta: Tensor::new(sum_dy, vec![c]).expect("bn dbeta"),
    });
    (dx, grads)
}

// ---------------------------------------------------------------------------
// Residual shortcut (identity, subsampled and zero-padded on channel growth)

pub fn shortcut_forward(x: &Tensor, out_ch: usize, stride: usize) -> Tensor {
    let (batch, in_ch, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (oh, ow) = (h.div_ceil(stride), w.div_ceil(stride));
    let pad_lo = (out_ch - in_ch) / 2;
    let mut out = Tensor::zeros(&[batch, out_ch, oh, ow]);
    let out_row = out_ch * oh * ow;
    for s in 0..batch {
        let sample = x.row(s);
        let out_s = &mut out.data_mut()[s * out_row..(s + 1) * out_row];
        for c in 0..in_ch {
            for ohi in 0..oh {
                for owi in 0..ow {
                    out_s[(c + pad_lo) * oh * ow + ohi * ow + owi] =
                        sample[c * h * w + ohi * stride * w + owi * stride];
                }
            }
        }
    }
    out
}

pub fn shortcut_backward(d_out: &Tensor, in_shape: &[usize], stride: usize) -> Tensor {
    let (batch, in_ch, h, w) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
    let out_ch = d_out.shape()[1];
    let (oh, ow) = (d_out.shape()[2], d_out.shape()[3]);
    let pad_lo = (out_ch - in_ch) / 2;
    let mut dx = Tensor::zeros(in_shape);
    let in_row = in_ch * h * w;
    for s in 0..batch {
        let d_s = d_out.row(s);
        let dx_s = &mut dx.data_mut()[s * in_row..(s + 1) * in_row];
        for c in 0..in_ch {
            for ohi in 0..oh {
                for owi in 0..ow {
                    dx_s[c * h * w + ohi * stride * w + owi * stride] +=
                        d_s[(c + pad_lo) * oh * ow + ohi * ow + owi];
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_padding_matches_tf_rule() {
        // 28 / stride 2, kernel 2: out 14, no padding.
        assert_eq!(conv_out_dim(28, 2, 2, Padding::Same), (14, 0));
        // 32 / stride 2, kernel 3: out 16, 1 total pad split low 0.
        assert_eq!(conv_out_dim(32, 3, 2, Padding::Same), (16, 0));
        // stride 1 kernel 3: pad 1 low.
        assert_eq!(conv_out_dim(28, 3, 1, Padding::Same), (28, 1));
        assert_eq!(conv_out_dim(8, 3, 1, Padding::Valid), (6, 0));
    }

    #[test]
    fn dense_forward_known_values() {
        // y = W x + b with W = [[1,2],[3,4]], b = [0.5, -0.5], x = [1, -1].
        let x = Tensor::new(vec![1.0, -1.0], vec![1, 2]).unwrap();
        let w = Tensor::new(vec![1.0, 2.0, 3.0, 4.0], vec![2, 2]).unwrap();
        let b = Tensor::new(vec![0.5, -0.5], vec![2]).unwrap();
        let y = dense_forward(&x, &w, &b);
        assert_eq!(y.data(), &[-0.5, -1.5]);
    }

    #[test]
    fn conv_identity_kernel_passes_input_through() {
        // 1x1 kernel with weight 1 is the identity.
        let x = Tensor::new((0..9).map(|v| v as f32).collect(), vec![1, 1, 3, 3]).unwrap();
        let w = Tensor::new(vec![1.0], vec![1, 1, 1, 1]).unwrap();
        let y = conv2d_forward(&x, &w, None, 1, Padding::Valid);
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn conv_known_3x3_sum_kernel() {
        // All-ones 3x3 kernel over an all-ones 3x3 input, valid: sums to 9.
        let x = Tensor::filled(&[1, 1, 3, 3], 1.0);
        let w = Tensor::filled(&[1, 1, 3, 3], 1.0);
        let y = conv2d_forward(&x, &w, None, 1, Padding::Valid);
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[9.0]);
        // Same padding keeps 3x3; corner windows see 4 ones.
        let y = conv2d_forward(&x, &w, None, 1, Padding::Same);
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert_eq!(y.data()[0], 4.0);
        assert_eq!(y.data()[4], 9.0);
    }

    #[test]
    fn maxpool_tracks_argmax() {
        let x = Tensor::new(
            vec![1.0, 2.0, 5.0, 3.0, 0.0, 1.0, 1.0, 0.0, 4.0, 1.0, 2.0, 0.0, 0.0, 1.0, 1.0, 3.0],
            vec![1, 1, 4, 4],
        )
        .unwrap();
        let (y, idx) = maxpool_forward(&x, 2, 2, Padding::Valid);
        assert_eq!(y.data(), &[2.0, 5.0, 4.0, 3.0]);
        let d = Tensor::filled(&[1, 1, 2, 2], 1.0);
        let dx = maxpool_backward(&idx, &[1, 1, 4, 4], &d);
        let hits: f32 = dx.data().iter().sum();
        assert_eq!(hits, 4.0);
        assert_eq!(dx.data()[2], 1.0, "gradient lands on the max position");
    }

    #[test]
    fn avgpool_uniform_gradient() {
        let x = Tensor::new((0..16).map(|v| v as f32).collect(), vec![1, 1, 4, 4]).unwrap();
        let y = avgpool_forward(&x, 4, 4);
        assert_eq!(y.data(), &[7.5]);
        let dx = avgpool_backward(&[1, 1, 4, 4], 4, 4, &Tensor::filled(&[1, 1, 1, 1], 16.0));
        assert!(dx.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn batchnorm_normalizes_in_train_mode() {
        let x = Tensor::new(vec![1.0, 3.0, 2.0, 4.0], vec![2, 1, 1, 2]).unwrap();
        let gamma = Tensor::filled(&[1], 1.0);
        let beta = Tensor::zeros(&[1]);
        let f = batchnorm_forward(&x, &gamma, &beta, &Tensor::zeros(&[1]), &Tensor::filled(&[1], 1.0), true);
        let mean: f32 = f.y.data().iter().sum::<f32>() / 4.0;
        assert!(mean.abs() < 1e-6);
        let (m, v) = f.batch_stats.unwrap();
        assert!((m[0] - 2.5).abs() < 1e-6);
        assert!((v[0] - 1.25).abs() < 1e-6);
    }

    #[test]
    fn shortcut_subsamples_and_pads_channels() {
        let x = Tensor::new((0..16).map(|v| v as f32).collect(), vec![1, 1, 4, 4]).unwrap();
        let y = shortcut_forward(&x, 4, 2);
        assert_eq!(y.shape(), &[1, 4, 2, 2]);
        // channel padding is symmetric: (4-1)/2 = 1 zero channel below.
        assert!(y.data()[0..4].iter().all(|&v| v == 0.0));
        assert_eq!(&y.data()[4..8], &[0.0, 2.0, 8.0, 10.0]);
        let dx = shortcut_backward(&y, &[1, 1, 4, 4], 2);
        assert_eq!(dx.data()[0], 0.0);
        assert_eq!(dx.data()[2], 2.0);
    }

    #[test]
    fn shape_inference_rejects_incompatible_chains() {
        let spec = LayerSpec::Dense { in_dim: 4, out_dim: 2 };
        assert!(spec.out_shape(&[5]).is_err());
        assert_eq!(spec.out_shape(&[4]).unwrap(), vec![2]);
        let conv = LayerSpec::Conv2d {
            in_ch: 3,
            out_ch: 8,
            kernel: 3,
            stride: 1,
            padding: Padding::Same,
            bias: true,
        };
        assert!(conv.out_shape(&[1, 28, 28]).is_err());
        assert_eq!(conv.out_shape(&[3, 32, 32]).unwrap(), vec![8, 32, 32]);
    }
}
