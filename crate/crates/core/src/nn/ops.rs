//! Forward and backward kernels. Image tensors are NHWC, convolution
//! weights are `[kh, kw, in, out]`, dense weights are `[in, out]`.

use super::Tensor;
use crate::{Error, Result};

pub const BCE_EPSILON: f64 = 1e-7;

fn conv_out_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 || kernel == 0 {
        return Err(Error::invalid("kernel and stride must be positive"));
    }
    let padded = input + 2 * padding;
    if padded < kernel {
        return Err(Error::shape(format!(
            "kernel {kernel} larger than padded input {padded}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

pub fn conv2d_output_shape(
    input: &[usize],
    weight: &[usize],
    stride: usize,
    padding: usize,
) -> Result<Vec<usize>> {
    if input.len() != 4 || weight.len() != 4 {
        return Err(Error::shape(
            "conv2d expects NHWC input and [kh,kw,in,out] weights",
        ));
    }
    if input[3] != weight[2] {
        return Err(Error::shape(format!(
            "conv2d input has {} channels, weights expect {}",
            input[3], weight[2]
        )));
    }
    Ok(vec![
        input[0],
        conv_out_dim(input[1], weight[0], stride, padding)?,
        conv_out_dim(input[2], weight[1], stride, padding)?,
        weight[3],
    ])
}

/// Zero-padded cross-correlation.
pub fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: &[f64],
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let out_shape = conv2d_output_shape(input.shape(), weight.shape(), stride, padding)?;
    let (n, h, w, cin) = input.nhwc("conv2d")?;
    let (kh, kw, cout) = (weight.shape()[0], weight.shape()[1], weight.shape()[3]);
    if bias.len() != cout {
        return Err(Error::shape(format!(
            "conv2d bias has {} entries for {cout} output channels",
            bias.len()
        )));
    }
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let x = input.data();
    let wt = weight.data();
    let mut out = vec![0.0; n * oh * ow * cout];
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let o_off = ((b * oh + oy) * ow + ox) * cout;
                let acc = &mut out[o_off..o_off + cout];
                acc.copy_from_slice(bias);
                for ky in 0..kh {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let i_off = ((b * h + iy as usize) * w + ix as usize) * cin;
                        let w_off = (ky * kw + kx) * cin * cout;
                        for ci in 0..cin {
                            let xv = x[i_off + ci];
                            if xv == 0.0 {
                                continue;
                            }
                            let row = &wt[w_off + ci * cout..w_off + (ci + 1) * cout];
                            for (a, &wv) in acc.iter_mut().zip(row) {
                                *a += xv * wv;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(out_shape, out))
}

/// Gradients of [`conv2d`]. Returns `(d_input, d_weight, d_bias)`.
pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<(Tensor, Tensor, Vec<f64>)> {
    let out_shape = conv2d_output_shape(input.shape(), weight.shape(), stride, padding)?;
    if grad_out.shape() != out_shape.as_slice() {
        return Err(Error::shape(format!(
            "conv2d gradient has shape {:?}, expected {out_shape:?}",
            grad_out.shape()
        )));
    }
    let (n, h, w, cin) = input.nhwc("conv2d")?;
    let (kh, kw, cout) = (weight.shape()[0], weight.shape()[1], weight.shape()[3]);
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let x = input.data();
    let wt = weight.data();
    let g = grad_out.data();
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; wt.len()];
    let mut db = vec![0.0; cout];
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let o_off = ((b * oh + oy) * ow + ox) * cout;
                let go = &g[o_off..o_off + cout];
                for (d, &v) in db.iter_mut().zip(go) {
                    *d += v;
                }
                for ky in 0..kh {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let i_off = ((b * h + iy as usize) * w + ix as usize) * cin;
                        let w_off = (ky * kw + kx) * cin * cout;
                        for ci in 0..cin {
                            let xv = x[i_off + ci];
                            let r = w_off + ci * cout..w_off + (ci + 1) * cout;
                            let mut acc = 0.0;
                            for ((dwv, &wv), &gv) in dw[r.clone()].iter_mut().zip(&wt[r]).zip(go) {
                                *dwv += xv * gv;
                                acc += wv * gv;
                            }
                            dx[i_off + ci] += acc;
                        }
                    }
                }
            }
        }
    }
    Ok((
        Tensor::from_parts(input.shape().to_vec(), dx),
        Tensor::from_parts(weight.shape().to_vec(), dw),
        db,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchNormMode {
    Train,
    Infer,
}

/// Running statistics and hyperparameters of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub epsilon: f64,
}

impl BatchNormState {
    pub const DEFAULT_MOMENTUM: f64 = 0.9;
    pub const DEFAULT_EPSILON: f64 = 1e-5;

    pub fn new(channels: usize) -> Self {
        Self {
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: Self::DEFAULT_MOMENTUM,
            epsilon: Self::DEFAULT_EPSILON,
        }
    }
}

/// Values kept from a training-mode batch-norm pass for the backward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    pub normalized: Vec<f64>,
    pub inv_std: Vec<f64>,
}

/// Per-channel normalization over every axis but the last.
///
/// Training mode normalizes with the (biased) batch statistics and folds
/// them into the running statistics; inference mode uses the running
/// statistics.
pub fn batch_norm(
    input: &Tensor,
    gamma: &[f64],
    beta: &[f64],
    mode: BatchNormMode,
    state: &mut BatchNormState,
) -> Result<(Tensor, Option<BatchNormCache>)> {
    let c = *input
        .shape()
        .last()
        .ok_or_else(|| Error::shape("batch norm of a scalar"))?;
    if gamma.len() != c || beta.len() != c || state.running_mean.len() != c {
        return Err(Error::shape(format!(
            "batch norm parameters sized for {} channels, input has {c}",
            gamma.len()
        )));
    }
    let x = input.data();
    let m = x.len() / c.max(1);
    if m == 0 {
        return Err(Error::Empty("batch norm over an empty batch".into()));
    }
    let (mean, inv_std) = match mode {
        BatchNormMode::Train => {
            let mut mean = vec![0.0; c];
            for row in x.chunks_exact(c) {
                for (a, &v) in mean.iter_mut().zip(row) {
                    *a += v;
                }
            }
            mean.iter_mut().for_each(|a| *a /= m as f64);
            let mut var = vec![0.0; c];
            for row in x.chunks_exact(c) {
                for ((a, &v), &mu) in var.iter_mut().zip(row).zip(&mean) {
                    *a += (v - mu) * (v - mu);
                }
            }
            var.iter_mut().for_each(|a| *a /= m as f64);
            let mom = state.momentum;
            for j in 0..c {
                state.running_mean[j] = mom * state.running_mean[j] + (1.0 - mom) * mean[j];
                state.running_var[j] = mom * state.running_var[j] + (1.0 - mom) * var[j];
            }
            let inv_std = var
                .iter()
                .map(|v| 1.0 / (v + state.epsilon).sqrt())
                .collect();
            (mean, inv_std)
        }
        BatchNormMode::Infer => (
            state.running_mean.clone(),
            state
                .running_var
                .iter()
                .map(|v| 1.0 / (v + state.epsilon).sqrt())
                .collect::<Vec<_>>(),
        ),
    };
    let mut normalized = vec![0.0; x.len()];
    let mut out = vec![0.0; x.len()];
    for ((row, nrow), orow) in x
        .chunks_exact(c)
        .zip(normalized.chunks_exact_mut(c))
        .zip(out.chunks_exact_mut(c))
    {
        for j in 0..c {
            let xh = (row[j] - mean[j]) * inv_std[j];
            nrow[j] = xh;
            orow[j] = gamma[j] * xh + beta[j];
        }
    }
    let out = Tensor::from_parts(input.shape().to_vec(), out);
    let cache = (mode == BatchNormMode::Train).then_some(BatchNormCache {
        normalized,
        inv_std,
    });
    Ok((out, cache))
}

/// Training-mode batch-norm gradients: `(d_input, d_gamma, d_beta)`.
pub fn batch_norm_backward(
    grad_out: &Tensor,
    gamma: &[f64],
    cache: &BatchNormCache,
) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
    let c = gamma.len();
    let g = grad_out.data();
    if g.len() != cache.normalized.len() || c == 0 || !g.len().is_multiple_of(c) {
        return Err(Error::shape(
            "batch norm gradient does not match cached forward",
        ));
    }
    let m = (g.len() / c) as f64;
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for (grow, nrow) in g.chunks_exact(c).zip(cache.normalized.chunks_exact(c)) {
        for j in 0..c {
            dgamma[j] += grow[j] * nrow[j];
            dbeta[j] += grow[j];
        }
    }
    // dx = gamma·inv_std/m · (m·dy − Σdy − x̂·Σ(dy·x̂))
    let mut dx = vec![0.0; g.len()];
    for ((drow, grow), nrow) in dx
        .chunks_exact_mut(c)
        .zip(g.chunks_exact(c))
        .zip(cache.normalized.chunks_exact(c))
    {
        for j in 0..c {
            drow[j] =
                gamma[j] * cache.inv_std[j] / m * (m * grow[j] - dbeta[j] - nrow[j] * dgamma[j]);
        }
    }
    Ok((
        Tensor::from_parts(grad_out.shape().to_vec(), dx),
        dgamma,
        dbeta,
    ))
}

pub fn relu(input: &Tensor) -> Tensor {
    Tensor::from_parts(
        input.shape().to_vec(),
        input.data().iter().map(|&v| v.max(0.0)).collect(),
    )
}

/// Passes the gradient where the forward input was positive.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Tensor {
    Tensor::from_parts(
        input.shape().to_vec(),
        input
            .data()
            .iter()
            .zip(grad_out.data())
            .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
            .collect(),
    )
}

/// Logistic function, evaluated without overflow for large `|x|`.
#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(input: &Tensor) -> Tensor {
    Tensor::from_parts(
        input.shape().to_vec(),
        input.data().iter().map(|&v| sigmoid_scalar(v)).collect(),
    )
}

/// Max pooling; also returns, per output element, the flat input index
/// that won (first maximum on ties).
pub fn max_pool(input: &Tensor, size: usize, stride: usize) -> Result<(Tensor, Vec<usize>)> {
    let (n, h, w, c) = input.nhwc("max_pool")?;
    if size == 0 || stride == 0 {
        return Err(Error::invalid("pool size and stride must be positive"));
    }
    if size > h || size > w {
        return Err(Error::shape(format!(
            "pool window {size} exceeds input {h}x{w}"
        )));
    }
    let oh = (h - size) / stride + 1;
    let ow = (w - size) / stride + 1;
    let x = input.data();
    let mut out = Vec::with_capacity(n * oh * ow * c);
    let mut argmax = Vec::with_capacity(n * oh * ow * c);
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = 0;
                    for ky in 0..size {
                        for kx in 0..size {
                            let i = ((b * h + oy * stride + ky) * w + ox * stride + kx) * c + ch;
                            if x[i] > best {
                                best = x[i];
                                best_i = i;
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(best_i);
                }
            }
        }
    }
    Ok((Tensor::from_parts(vec![n, oh, ow, c], out), argmax))
}

pub fn max_pool_backward(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor) -> Tensor {
    let mut dx = Tensor::zeros(input_shape.to_vec());
    for (&i, &g) in argmax.iter().zip(grad_out.data()) {
        dx.data_mut()[i] += g;
    }
    dx
}

/// Mean over all spatial positions: `[n, h, w, c] -> [n, c]`.
pub fn global_avg_pool(input: &Tensor) -> Result<Tensor> {
    let (n, h, w, c) = input.nhwc("global_avg_pool")?;
    let area = (h * w) as f64;
    let mut out = vec![0.0; n * c];
    for (b, chunk) in input.data().chunks_exact(h * w * c).enumerate() {
        let dst = &mut out[b * c..(b + 1) * c];
        for px in chunk.chunks_exact(c) {
            for (d, &v) in dst.iter_mut().zip(px) {
                *d += v;
            }
        }
        dst.iter_mut().for_each(|d| *d /= area);
    }
    Ok(Tensor::from_parts(vec![n, c], out))
}

pub fn global_avg_pool_backward(input_shape: &[usize], grad_out: &Tensor) -> Tensor {
    let (n, h, w, c) = (
        input_shape[0],
        input_shape[1],
        input_shape[2],
        input_shape[3],
    );
    let area = (h * w) as f64;
    let mut dx = vec![0.0; n * h * w * c];
    for (b, chunk) in dx.chunks_exact_mut(h * w * c).enumerate() {
        let g = &grad_out.data()[b * c..(b + 1) * c];
        for px in chunk.chunks_exact_mut(c) {
            for (d, &gv) in px.iter_mut().zip(g) {
                *d = gv / area;
            }
        }
    }
    Tensor::from_parts(input_shape.to_vec(), dx)
}

/// Collapses all but the batch axis.
pub fn flatten(input: &Tensor) -> Result<Tensor> {
    let n = *input
        .shape()
        .first()
        .ok_or_else(|| Error::shape("flatten of a scalar"))?;
    let rest = input.len().checked_div(n).unwrap_or(0);
    input.clone().reshape(vec![n, rest])
}

/// `[n, in] × [in, out] + bias`.
pub fn dense(input: &Tensor, weight: &Tensor, bias: &[f64]) -> Result<Tensor> {
    input.expect_rank(2, "dense")?;
    weight.expect_rank(2, "dense weights")?;
    let (n, fan_in) = (input.shape()[0], input.shape()[1]);
    let (w_in, units) = (weight.shape()[0], weight.shape()[1]);
    if fan_in != w_in || bias.len() != units {
        return Err(Error::shape(format!(
            "dense input width {fan_in}, weights {:?}, bias {}",
            weight.shape(),
            bias.len()
        )));
    }
    let wt = weight.data();
    let mut out = vec![0.0; n * units];
    for (row, orow) in input
        .data()
        .chunks_exact(fan_in.max(1))
        .zip(out.chunks_exact_mut(units))
    {
        orow.copy_from_slice(bias);
        for (i, &xv) in row.iter().enumerate() {
            for (o, &wv) in orow.iter_mut().zip(&wt[i * units..(i + 1) * units]) {
                *o += xv * wv;
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, units], out))
}

/// Gradients of [`dense`]: `(d_input, d_weight, d_bias)`.
pub fn dense_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Vec<f64>)> {
    let (fan_in, units) = (weight.shape()[0], weight.shape()[1]);
    if grad_out.shape() != [input.shape()[0], units] {
        return Err(Error::shape("dense gradient does not match forward output"));
    }
    let wt = weight.data();
    let mut dx = vec![0.0; input.len()];
    let mut dw = vec![0.0; wt.len()];
    let mut db = vec![0.0; units];
    for ((row, grow), drow) in input
        .data()
        .chunks_exact(fan_in.max(1))
        .zip(grad_out.data().chunks_exact(units))
        .zip(dx.chunks_exact_mut(fan_in.max(1)))
    {
        for (d, &g) in db.iter_mut().zip(grow) {
            *d += g;
        }
        for (i, &xv) in row.iter().enumerate() {
            let r = i * units..(i + 1) * units;
            let mut acc = 0.0;
            for ((dwv, &wv), &g) in dw[r.clone()].iter_mut().zip(&wt[r]).zip(grow) {
                *dwv += xv * g;
                acc += wv * g;
            }
            drow[i] = acc;
        }
    }
    Ok((
        Tensor::from_parts(input.shape().to_vec(), dx),
        Tensor::from_parts(weight.shape().to_vec(), dw),
        db,
    ))
}

fn check_bce(probabilities: &Tensor, labels: &Tensor) -> Result<()> {
    if probabilities.shape() != labels.shape() {
        return Err(Error::shape(format!(
            "probabilities {:?} vs labels {:?}",
            probabilities.shape(),
            labels.shape()
        )));
    }
    if probabilities.is_empty() {
        return Err(Error::Empty("loss over zero samples".into()));
    }
    Ok(())
}

/// Mean binary cross-entropy with probabilities clamped to `[ε, 1 − ε]`.
pub fn bce_loss(probabilities: &Tensor, labels: &Tensor) -> Result<f64> {
    check_bce(probabilities, labels)?;
    let total: f64 = probabilities
        .data()
        .iter()
        .zip(labels.data())
        .map(|(&p, &y)| bce_term(p, y))
        .sum();
    Ok(total / probabilities.len() as f64)
}

#[inline]
pub(crate) fn bce_term(p: f64, y: f64) -> f64 {
    let p = p.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Gradient of [`bce_loss`] with respect to the probabilities; zero where
/// the clamp is active.
pub fn bce_loss_grad(probabilities: &Tensor, labels: &Tensor) -> Result<Tensor> {
    check_bce(probabilities, labels)?;
    let n = probabilities.len() as f64;
    let g = probabilities
        .data()
        .iter()
        .zip(labels.data())
        .map(|(&p, &y)| {
            if !(BCE_EPSILON..=1.0 - BCE_EPSILON).contains(&p) {
                0.0
            } else {
                (p - y) / (p * (1.0 - p)) / n
            }
        })
        .collect();
    Ok(Tensor::from_parts(probabilities.shape().to_vec(), g))
}
