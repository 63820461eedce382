//! Layer kernels with hand-derived backward passes.
//!
//! Backward functions accumulate parameter gradients into the
//! [`LayerState`] (summed over the batch) and return the gradient with
//! respect to the layer input.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{LayerState, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvParams {
    pub stride: usize,
    pub pad: usize,
}

impl Default for ConvParams {
    fn default() -> Self {
        ConvParams { stride: 1, pad: 0 }
    }
}

struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeom {
    fn k(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.oh * self.ow
    }
}

fn conv_geometry(input: &Tensor, layer: &LayerState, params: ConvParams) -> Result<ConvGeom> {
    input.expect_rank(4, "conv2d input")?;
    layer.weights.expect_rank(4, "conv2d kernel")?;
    let [n, c, h, w] = <[usize; 4]>::try_from(input.shape()).expect("rank checked");
    let [c_out, c_k, kh, kw] = <[usize; 4]>::try_from(layer.weights.shape()).expect("rank checked");
    if c_k != c {
        return Err(Error::arg(format!(
            "conv2d kernel expects {c_k} input channels, input has {c}"
        )));
    }
    if layer.bias.len() != c_out {
        return Err(Error::arg(format!(
            "conv2d bias has {} entries for {c_out} filters",
            layer.bias.len()
        )));
    }
    if params.stride == 0 {
        return Err(Error::arg("conv2d stride must be positive"));
    }
    if h + 2 * params.pad < kh || w + 2 * params.pad < kw {
        return Err(Error::arg(format!(
            "conv2d kernel {kh}x{kw} larger than padded input {}x{}",
            h + 2 * params.pad,
            w + 2 * params.pad
        )));
    }
    Ok(ConvGeom {
        n,
        c,
        h,
        w,
        c_out,
        kh,
        kw,
        oh: (h + 2 * params.pad - kh) / params.stride + 1,
        ow: (w + 2 * params.pad - kw) / params.stride + 1,
        stride: params.stride,
        pad: params.pad,
    })
}

/// Output spatial size of a convolution or pooling window.
pub fn conv_output_size(size: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || size + 2 * pad < kernel {
        return None;
    }
    Some((size + 2 * pad - kernel) / stride + 1)
}

fn im2col(x: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let p = g.p();
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = &mut cols[((c * g.kh + i) * g.kw + j) * p..][..p];
                for oy in 0..g.oh {
                    let y = (oy * g.stride + i) as isize - g.pad as isize;
                    let dst = &mut row[oy * g.ow..(oy + 1) * g.ow];
                    if y < 0 || y >= g.h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[y as usize * g.w..(y as usize + 1) * g.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let xx = (ox * g.stride + j) as isize - g.pad as isize;
                        *d = if xx < 0 || xx >= g.w as isize {
                            0.0
                        } else {
                            src[xx as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let p = g.p();
    for c in 0..g.c {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = &cols[((c * g.kh + i) * g.kw + j) * p..][..p];
                for oy in 0..g.oh {
                    let y = (oy * g.stride + i) as isize - g.pad as isize;
                    if y < 0 || y >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[y as usize * g.w..(y as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let xx = (ox * g.stride + j) as isize - g.pad as isize;
                        if xx >= 0 && xx < g.w as isize {
                            dst[xx as usize] += row[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation with zero padding. Input `N×C×H×W`, kernel
/// `C_out×C×kH×kW`, bias `C_out`.
pub fn conv2d_forward(input: &Tensor, layer: &LayerState, params: ConvParams) -> Result<Tensor> {
    let g = conv_geometry(input, layer, params)?;
    let (k, p) = (g.k(), g.p());
    let w = layer.weights.data();
    let b = layer.bias.data();
    let mut out = vec![0.0; g.n * g.c_out * p];
    let mut cols = vec![0.0; k * p];
    let in_len = g.c * g.h * g.w;
    for s in 0..g.n {
        im2col(&input.data()[s * in_len..(s + 1) * in_len], &g, &mut cols);
        let o = &mut out[s * g.c_out * p..(s + 1) * g.c_out * p];
        for co in 0..g.c_out {
            let orow = &mut o[co * p..(co + 1) * p];
            orow.fill(b[co]);
            for (kk, &wv) in w[co * k..(co + 1) * k].iter().enumerate() {
                let crow = &cols[kk * p..(kk + 1) * p];
                for (ov, cv) in orow.iter_mut().zip(crow) {
                    *ov += wv * cv;
                }
            }
        }
    }
    Tensor::new(vec![g.n, g.c_out, g.oh, g.ow], out)
}

fn conv2d_backward_impl(
    input: &Tensor,
    grad_out: &Tensor,
    layer: &mut LayerState,
    params: ConvParams,
    want_input_grad: bool,
) -> Result<Option<Tensor>> {
    let g = conv_geometry(input, layer, params)?;
    if grad_out.shape() != [g.n, g.c_out, g.oh, g.ow] {
        return Err(Error::arg(format!(
            "conv2d output gradient has shape {:?}, expected {:?}",
            grad_out.shape(),
            [g.n, g.c_out, g.oh, g.ow]
        )));
    }
    let (k, p) = (g.k(), g.p());
    let in_len = g.c * g.h * g.w;
    let weights = layer.weights.data().to_vec();
    let (gw, gb) = layer.grads_mut();
    let (gw, gb) = (gw.data_mut(), gb.data_mut());
    let mut cols = vec![0.0; k * p];
    let mut dcols = vec![0.0; k * p];
    let mut dx = if want_input_grad {
        vec![0.0; input.len()]
    } else {
        Vec::new()
    };
    for s in 0..g.n {
        im2col(&input.data()[s * in_len..(s + 1) * in_len], &g, &mut cols);
        let go = &grad_out.data()[s * g.c_out * p..(s + 1) * g.c_out * p];
        for co in 0..g.c_out {
            let grow = &go[co * p..(co + 1) * p];
            gb[co] += grow.iter().sum::<f64>();
            for kk in 0..k {
                let crow = &cols[kk * p..(kk + 1) * p];
                gw[co * k + kk] += grow.iter().zip(crow).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        if want_input_grad {
            dcols.fill(0.0);
            for co in 0..g.c_out {
                let grow = &go[co * p..(co + 1) * p];
                for kk in 0..k {
                    let wv = weights[co * k + kk];
                    let drow = &mut dcols[kk * p..(kk + 1) * p];
                    for (d, gv) in drow.iter_mut().zip(grow) {
                        *d += wv * gv;
                    }
                }
            }
            col2im(&dcols, &g, &mut dx[s * in_len..(s + 1) * in_len]);
        }
    }
    if want_input_grad {
        Ok(Some(Tensor::new(input.shape().to_vec(), dx)?))
    } else {
        Ok(None)
    }
}

/// Accumulates kernel and bias gradients and returns the input gradient.
pub fn conv2d_backward(
    input: &Tensor,
    grad_out: &Tensor,
    layer: &mut LayerState,
    params: ConvParams,
) -> Result<Tensor> {
    Ok(conv2d_backward_impl(input, grad_out, layer, params, true)?.expect("input grad requested"))
}

/// Parameter gradients only, for layers whose input needs no gradient.
pub fn conv2d_backward_params(
    input: &Tensor,
    grad_out: &Tensor,
    layer: &mut LayerState,
    params: ConvParams,
) -> Result<()> {
    conv2d_backward_impl(input, grad_out, layer, params, false).map(drop)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolParams {
    pub window: usize,
    pub stride: usize,
}

/// Max-pool output plus the flat input index each output came from.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolOutput {
    pub output: Tensor,
    pub argmax: Vec<usize>,
}

pub fn maxpool_forward(input: &Tensor, params: PoolParams) -> Result<PoolOutput> {
    input.expect_rank(4, "maxpool input")?;
    let [n, c, h, w] = <[usize; 4]>::try_from(input.shape()).expect("rank checked");
    if params.window == 0 || params.stride == 0 {
        return Err(Error::arg("maxpool window and stride must be positive"));
    }
    if params.window > h || params.window > w {
        return Err(Error::arg(format!(
            "maxpool window {} exceeds input {h}x{w}",
            params.window
        )));
    }
    let oh = (h - params.window) / params.stride + 1;
    let ow = (w - params.window) / params.stride + 1;
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = usize::MAX;
                for i in 0..params.window {
                    let row = base + (oy * params.stride + i) * w + ox * params.stride;
                    for j in 0..params.window {
                        // strict comparison keeps the first index on ties
                        if x[row + j] > best || best_idx == usize::MAX {
                            best = x[row + j];
                            best_idx = row + j;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    Ok(PoolOutput {
        output: Tensor::new(vec![n, c, oh, ow], out)?,
        argmax,
    })
}

/// Routes each output gradient to the input element that won the window.
pub fn maxpool_backward(
    grad_out: &Tensor,
    argmax: &[usize],
    input_shape: &[usize],
) -> Result<Tensor> {
    if grad_out.len() != argmax.len() {
        return Err(Error::arg(
            "maxpool gradient does not match recorded argmax",
        ));
    }
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        d[idx] += g;
    }
    Ok(dx)
}

/// Cross-channel local response normalization parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrnParams {
    pub k: f64,
    pub n: usize,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LrnParams {
    fn default() -> Self {
        LrnParams {
            k: 2.0,
            n: 5,
            alpha: 1e-4,
            beta: 0.75,
        }
    }
}

impl LrnParams {
    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::arg("LRN window must span at least one channel"));
        }
        if !(self.k > 0.0) {
            return Err(Error::arg(format!("LRN requires k > 0, got {}", self.k)));
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::arg("LRN alpha and beta must be non-negative"));
        }
        Ok(())
    }

    /// Channels `[c - (n-1)/2, c - (n-1)/2 + n - 1]` clipped to `0..channels`.
    fn window(&self, c: usize, channels: usize) -> std::ops::Range<usize> {
        let pre = (self.n - 1) / 2;
        let lo = c.saturating_sub(pre);
        let hi = (c + self.n - pre).min(channels);
        lo..hi
    }
}

fn lrn_scales(input: &Tensor, p: &LrnParams) -> Result<Vec<f64>> {
    p.validate()?;
    input.expect_rank(4, "LRN input")?;
    let [n, c, h, w] = <[usize; 4]>::try_from(input.shape()).expect("rank checked");
    let hw = h * w;
    let x = input.data();
    let mut scale = vec![0.0; x.len()];
    let coef = p.alpha / p.n as f64;
    for s in 0..n {
        let base = s * c * hw;
        for ch in 0..c {
            let dst = base + ch * hw;
            for src_ch in p.window(ch, c) {
                let src = base + src_ch * hw;
                for i in 0..hw {
                    scale[dst + i] += x[src + i] * x[src + i];
                }
            }
            for v in &mut scale[dst..dst + hw] {
                *v = p.k + coef * *v;
            }
        }
    }
    Ok(scale)
}

/// `out_c = in_c * (k + alpha/n * sum_{c' in window(c)} in_{c'}^2)^(-beta)`.
pub fn lrn_forward(input: &Tensor, p: &LrnParams) -> Result<Tensor> {
    let scale = lrn_scales(input, p)?;
    let out = input
        .data()
        .iter()
        .zip(&scale)
        .map(|(x, s)| x * s.powf(-p.beta))
        .collect();
    Tensor::new(input.shape().to_vec(), out)
}

pub fn lrn_backward(input: &Tensor, grad_out: &Tensor, p: &LrnParams) -> Result<Tensor> {
    let scale = lrn_scales(input, p)?;
    if grad_out.shape() != input.shape() {
        return Err(Error::arg("LRN gradient shape differs from input"));
    }
    let [n, c, h, w] = <[usize; 4]>::try_from(input.shape()).expect("rank checked");
    let hw = h * w;
    let x = input.data();
    let g = grad_out.data();
    let mut dx: Vec<f64> = g
        .iter()
        .zip(&scale)
        .map(|(gv, s)| gv * s.powf(-p.beta))
        .collect();
    let coef = 2.0 * p.alpha * p.beta / p.n as f64;
    let mut t = vec![0.0; hw];
    for s in 0..n {
        let base = s * c * hw;
        for ch in 0..c {
            let off = base + ch * hw;
            for i in 0..hw {
                t[i] = g[off + i] * x[off + i] * scale[off + i].powf(-p.beta - 1.0);
            }
            for j in p.window(ch, c) {
                let joff = base + j * hw;
                for i in 0..hw {
                    dx[joff + i] -= coef * x[joff + i] * t[i];
                }
            }
        }
    }
    Tensor::new(input.shape().to_vec(), dx)
}

pub fn relu_forward(input: &Tensor) -> Tensor {
    let data = input.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::new(input.shape().to_vec(), data).expect("same shape")
}

/// Gradient passes where the forward input was strictly positive.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if input.shape() != grad_out.shape() {
        return Err(Error::arg("ReLU gradient shape differs from input"));
    }
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

/// Inverted dropout. In train mode each unit is zeroed with probability
/// `ratio` and survivors are scaled by `1 / (1 - ratio)`; the returned mask
/// holds those multipliers. Infer mode is the identity.
pub fn dropout_forward(
    input: &Tensor,
    ratio: f64,
    mode: Mode,
    rng: &mut impl Rng,
) -> Result<(Tensor, Option<Vec<f64>>)> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::arg(format!("dropout ratio {ratio} outside [0, 1)")));
    }
    if mode == Mode::Infer || ratio == 0.0 {
        return Ok((input.clone(), None));
    }
    let keep = 1.0 / (1.0 - ratio);
    let mask: Vec<f64> = (0..input.len())
        .map(|_| if rng.gen::<f64>() < ratio { 0.0 } else { keep })
        .collect();
    let data = input.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
    Ok((Tensor::new(input.shape().to_vec(), data)?, Some(mask)))
}

pub fn dropout_backward(grad_out: &Tensor, mask: Option<&[f64]>) -> Tensor {
    match mask {
        None => grad_out.clone(),
        Some(m) => {
            let data = grad_out.data().iter().zip(m).map(|(g, m)| g * m).collect();
            Tensor::new(grad_out.shape().to_vec(), data).expect("same shape")
        }
    }
}

fn fc_dims(input: &Tensor, layer: &LayerState) -> Result<(usize, usize, usize)> {
    input.expect_rank(2, "fully connected input")?;
    layer.weights.expect_rank(2, "fully connected weights")?;
    let (n, d) = (input.shape()[0], input.shape()[1]);
    let (wd, o) = (layer.weights.shape()[0], layer.weights.shape()[1]);
    if d != wd {
        return Err(Error::arg(format!(
            "fully connected layer expects width {wd}, input has {d}"
        )));
    }
    if layer.bias.len() != o {
        return Err(Error::arg(format!(
            "fully connected bias has {} entries for {o} outputs",
            layer.bias.len()
        )));
    }
    Ok((n, d, o))
}

/// `out = W^T x + b` per row, with `W` stored as `inputs × outputs`.
pub fn fc_forward(input: &Tensor, layer: &LayerState) -> Result<Tensor> {
    let (n, d, o) = fc_dims(input, layer)?;
    let w = layer.weights.data();
    let mut out = Vec::with_capacity(n * o);
    for row in input.data().chunks_exact(d) {
        let mut acc = layer.bias.data().to_vec();
        for (i, &xi) in row.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (a, wv) in acc.iter_mut().zip(&w[i * o..(i + 1) * o]) {
                *a += xi * wv;
            }
        }
        out.extend(acc);
    }
    Tensor::new(vec![n, o], out)
}

fn fc_backward_impl(
    input: &Tensor,
    grad_out: &Tensor,
    layer: &mut LayerState,
    want_input_grad: bool,
) -> Result<Option<Tensor>> {
    let (n, d, o) = fc_dims(input, layer)?;
    if grad_out.shape() != [n, o] {
        return Err(Error::arg(format!(
            "fully connected output gradient has shape {:?}, expected [{n}, {o}]",
            grad_out.shape()
        )));
    }
    let dx = if want_input_grad {
        let w = layer.weights.data();
        let mut dx = Vec::with_capacity(n * d);
        for g in grad_out.data().chunks_exact(o) {
            for i in 0..d {
                dx.push(
                    w[i * o..(i + 1) * o]
                        .iter()
                        .zip(g)
                        .map(|(a, b)| a * b)
                        .sum::<f64>(),
                );
            }
        }
        Some(Tensor::new(vec![n, d], dx)?)
    } else {
        None
    };
    let (gw, gb) = layer.grads_mut();
    let (gw, gb) = (gw.data_mut(), gb.data_mut());
    for (x, g) in input
        .data()
        .chunks_exact(d)
        .zip(grad_out.data().chunks_exact(o))
    {
        for (b, gv) in gb.iter_mut().zip(g) {
            *b += gv;
        }
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (wg, gv) in gw[i * o..(i + 1) * o].iter_mut().zip(g) {
                *wg += xi * gv;
            }
        }
    }
    Ok(dx)
}

/// Accumulates `dW += x g^T` and `db += g` over the batch and returns the
/// input gradient `W g`.
pub fn fc_backward(input: &Tensor, grad_out: &Tensor, layer: &mut LayerState) -> Result<Tensor> {
    Ok(fc_backward_impl(input, grad_out, layer, true)?.expect("input grad requested"))
}

pub fn fc_backward_params(input: &Tensor, grad_out: &Tensor, layer: &mut LayerState) -> Result<()> {
    fc_backward_impl(input, grad_out, layer, false).map(drop)
}
