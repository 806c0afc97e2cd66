//! Dense tensors and the layer vocabulary of the counting networks: "same"
//! convolution, 2x2 max pooling, rectifier and Adam, each with a hand-written
//! backward pass.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    /// Gradient slot, same shape as `data` when present.
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
            grad: None,
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if data.len() != n {
            return Err(Error::Shape(format!("{} values for shape {shape:?}", data.len())));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
            grad: None,
        })
    }

    pub fn randn<R: Rng>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, std).expect("finite std");
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(|_| normal.sample(rng)).collect(),
            grad: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Views a 3-D `(c, h, w)` or 4-D `(n, c, h, w)` tensor as `(n, c, h, w)`.
    pub fn nchw(&self) -> Result<(usize, usize, usize, usize)> {
        match *self.shape.as_slice() {
            [c, h, w] => Ok((1, c, h, w)),
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::Shape(format!(
                "expected a 3-D or 4-D tensor, got {:?}",
                self.shape
            ))),
        }
    }

    fn with_spatial(&self, c: usize, h: usize, w: usize) -> Tensor {
        let mut shape = self.shape.clone();
        let k = shape.len();
        shape[k - 3] = c;
        shape[k - 2] = h;
        shape[k - 1] = w;
        Tensor::zeros(&shape)
    }

    pub fn zero_grad(&mut self) {
        self.grad = Some(vec![0.0; self.data.len()]);
    }
}

/// "Same" 2-D convolution (cross-correlation) with zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub kernel_size: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    /// `(out, in, k, k)`.
    pub weight: Tensor,
    /// `(out)`.
    pub bias: Tensor,
}

impl ConvLayer {
    pub fn zeros(kernel_size: usize, in_channels: usize, out_channels: usize) -> Result<Self> {
        if kernel_size.is_multiple_of(2) || in_channels == 0 || out_channels == 0 {
            return Err(Error::Config(format!(
                "convolution needs an odd kernel and positive channels, got k={kernel_size} {in_channels}->{out_channels}"
            )));
        }
        Ok(Self {
            kernel_size,
            in_channels,
            out_channels,
            weight: Tensor::zeros(&[out_channels, in_channels, kernel_size, kernel_size]),
            bias: Tensor::zeros(&[out_channels]),
        })
    }

    pub fn padding(&self) -> usize {
        (self.kernel_size - 1) / 2
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Gradients of a convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Valid `[lo, hi)` output range for a tap at offset `d` on an axis of
/// length `n`.
#[inline]
fn tap_range(d: isize, n: usize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d).clamp(0, n as isize) as usize;
    (lo, hi.max(lo))
}

pub fn conv2d_forward(x: &Tensor, layer: &ConvLayer) -> Result<Tensor> {
    let (n, c, h, w) = x.nchw()?;
    if c != layer.in_channels {
        return Err(Error::Shape(format!(
            "convolution expects {} input channels, got {c}",
            layer.in_channels
        )));
    }
    let k = layer.kernel_size;
    let p = layer.padding() as isize;
    let oc_n = layer.out_channels;
    let mut out = x.with_spatial(oc_n, h, w);
    let plane = h * w;
    for b in 0..n {
        let xin = &x.data[b * c * plane..][..c * plane];
        let yout = &mut out.data[b * oc_n * plane..][..oc_n * plane];
        for oc in 0..oc_n {
            let dst = &mut yout[oc * plane..][..plane];
            dst.fill(layer.bias.data[oc]);
            for ic in 0..c {
                let src = &xin[ic * plane..][..plane];
                let wk = &layer.weight.data[(oc * c + ic) * k * k..][..k * k];
                for ky in 0..k {
                    let dy = ky as isize - p;
                    let (y0, y1) = tap_range(dy, h);
                    for kx in 0..k {
                        let wv = wk[ky * k + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let dx = kx as isize - p;
                        let (x0, x1) = tap_range(dx, w);
                        if x0 == x1 {
                            continue;
                        }
                        let sx0 = (x0 as isize + dx) as usize;
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let s = &src[sy * w + sx0..][..x1 - x0];
                            let d = &mut dst[y * w + x0..][..x1 - x0];
                            for (o, &i) in d.iter_mut().zip(s) {
                                *o += wv * i;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn conv2d_backward(x: &Tensor, layer: &ConvLayer, grad_out: &Tensor) -> Result<ConvGrads> {
    let (n, c, h, w) = x.nchw()?;
    let (gn, goc, gh, gw) = grad_out.nchw()?;
    if c != layer.in_channels || (gn, goc, gh, gw) != (n, layer.out_channels, h, w) {
        return Err(Error::Shape(format!(
            "convolution backward: input {:?}, grad {:?}, layer {}->{}",
            x.shape, grad_out.shape, layer.in_channels, layer.out_channels
        )));
    }
    let k = layer.kernel_size;
    let p = layer.padding() as isize;
    let plane = h * w;
    let mut gx = Tensor::zeros(&x.shape);
    let mut gw_t = Tensor::zeros(&layer.weight.shape);
    let mut gb = Tensor::zeros(&layer.bias.shape);
    for b in 0..n {
        let xin = &x.data[b * c * plane..][..c * plane];
        let gin = &mut gx.data[b * c * plane..][..c * plane];
        let gout = &grad_out.data[b * goc * plane..][..goc * plane];
        for oc in 0..goc {
            let g = &gout[oc * plane..][..plane];
            gb.data[oc] += g.iter().sum::<f64>();
            for ic in 0..c {
                let src = &xin[ic * plane..][..plane];
                let gsrc = &mut gin[ic * plane..][..plane];
                let base = (oc * c + ic) * k * k;
                for ky in 0..k {
                    let dy = ky as isize - p;
                    let (y0, y1) = tap_range(dy, h);
                    for kx in 0..k {
                        let dx = kx as isize - p;
                        let (x0, x1) = tap_range(dx, w);
                        if x0 == x1 {
                            continue;
                        }
                        let sx0 = (x0 as isize + dx) as usize;
                        let wv = layer.weight.data[base + ky * k + kx];
                        let mut acc = 0.0;
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let gs = &g[y * w + x0..][..x1 - x0];
                            let s = &src[sy * w + sx0..][..x1 - x0];
                            acc += gs.iter().zip(s).map(|(a, b)| a * b).sum::<f64>();
                            if wv != 0.0 {
                                let d = &mut gsrc[sy * w + sx0..][..x1 - x0];
                                for (o, &gv) in d.iter_mut().zip(gs) {
                                    *o += wv * gv;
                                }
                            }
                        }
                        gw_t.data[base + ky * k + kx] += acc;
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        input: gx,
        weight: gw_t,
        bias: gb,
    })
}

/// Flat input index chosen by each pooled cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolIndices {
    input_shape: Vec<usize>,
    argmax: Vec<usize>,
}

impl PoolIndices {
    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }
}

/// Non-overlapping 2x2 max pooling with stride 2. Odd trailing rows/columns
/// form partial windows, which is equivalent to padding with negative
/// infinity. Ties go to the first cell in row-major order.
pub fn maxpool2_forward(x: &Tensor) -> Result<(Tensor, PoolIndices)> {
    let (n, c, h, w) = x.nchw()?;
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = x.with_spatial(c, oh, ow);
    let mut argmax = vec![0usize; out.len()];
    for plane_idx in 0..n * c {
        let src = plane_idx * h * w;
        let dst = plane_idx * oh * ow;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_i = src + 2 * oy * w + 2 * ox;
                for y in 2 * oy..(2 * oy + 2).min(h) {
                    for xx in 2 * ox..(2 * ox + 2).min(w) {
                        let i = src + y * w + xx;
                        if x.data[i] > best {
                            best = x.data[i];
                            best_i = i;
                        }
                    }
                }
                out.data[dst + oy * ow + ox] = best;
                argmax[dst + oy * ow + ox] = best_i;
            }
        }
    }
    Ok((
        out,
        PoolIndices {
            input_shape: x.shape.clone(),
            argmax,
        },
    ))
}

pub fn maxpool2_backward(grad_out: &Tensor, indices: &PoolIndices) -> Result<Tensor> {
    if grad_out.len() != indices.argmax.len() {
        return Err(Error::Shape(format!(
            "pool backward: {} gradients for {} pooled cells",
            grad_out.len(),
            indices.argmax.len()
        )));
    }
    let mut gx = Tensor::zeros(&indices.input_shape);
    for (&i, &g) in indices.argmax.iter().zip(&grad_out.data) {
        gx.data[i] += g;
    }
    Ok(gx)
}

pub fn relu_forward(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    out.grad = None;
    for v in &mut out.data {
        *v = v.max(0.0);
    }
    out
}

/// Passes gradient where the forward input was strictly positive.
pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if x.shape != grad_out.shape {
        return Err(Error::Shape(format!(
            "relu backward: input {:?} vs grad {:?}",
            x.shape, grad_out.shape
        )));
    }
    let data = x
        .data
        .iter()
        .zip(&grad_out.data)
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_vec(&x.shape, data)
}

pub const DEFAULT_LEARNING_RATE: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(param_sizes: &[usize], learning_rate: f64) -> Self {
        Self {
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            first: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.first
    }
}

/// Bias-corrected Adam update of every parameter from its gradient.
pub fn adam_step(params: &mut [&mut Tensor], grads: &[Tensor], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(Error::Shape(format!(
            "adam: {} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.first.len()
        )));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.first) {
        if p.len() != g.len() || p.len() != m.len() {
            return Err(Error::Shape(format!(
                "adam: parameter {:?} vs gradient {:?}",
                p.shape, g.shape
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.learning_rate, state.epsilon);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.first)
        .zip(&mut state.second)
    {
        for (((pv, &gv), mv), vv) in p.data.iter_mut().zip(&g.data).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mv = b1 * *mv + (1.0 - b1) * gv;
            *vv = b2 * *vv + (1.0 - b2) * gv * gv;
            let mhat = *mv / c1;
            let vhat = *vv / c2;
            *pv -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
