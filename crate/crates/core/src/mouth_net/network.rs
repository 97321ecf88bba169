//! CPU runtime for [`NetworkSpec`]: forward pass, backprop and parameter
//! storage. Convolutions use im2col + SGEMM.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::spec::{conv_out, Activation, LayerSpec, NetworkSpec};
use crate::error::{Error, Result};

/// A named, row-major parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    #[serde(skip)]
    pub data: Vec<f32>,
}

impl Param {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Channel-major feature map. A flattened vector is a map with `h = w = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(c: usize, h: usize, w: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), c * h * w, "feature map size mismatch");
        Self { c, h, w, data }
    }

    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self::new(c, h, w, vec![0.0; c * h * w])
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.h + y) * self.w + x]
    }
}

#[derive(Debug, Clone)]
enum Op {
    Conv {
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        pad: usize,
        weight: usize,
        bias: Option<usize>,
        relu: bool,
    },
    MaxPool {
        k: usize,
        stride: usize,
        pad: usize,
    },
    AdaptiveAvg {
        oh: usize,
        ow: usize,
    },
    Flatten,
    Linear {
        in_f: usize,
        out_f: usize,
        weight: usize,
        bias: Option<usize>,
        relu: bool,
    },
    Dropout {
        p: f32,
    },
}

/// Per-layer values kept from the forward pass for backprop.
enum Cache {
    Conv { cols: Vec<f32>, in_shape: (usize, usize, usize), out: Vec<f32>, out_hw: (usize, usize) },
    MaxPool { argmax: Vec<usize>, in_shape: (usize, usize, usize) },
    AdaptiveAvg { in_shape: (usize, usize, usize) },
    Flatten,
    Linear { input: Vec<f32>, out: Vec<f32> },
    Dropout { mask: Vec<f32> },
}

pub struct Trace {
    caches: Vec<Cache>,
}

#[derive(Debug, Clone)]
pub struct Network {
    spec: NetworkSpec,
    ops: Vec<Op>,
    params: Vec<Param>,
}

impl Network {
    /// Allocate and He-initialise parameters for `spec`.
    pub fn new(spec: &NetworkSpec, rng: &mut impl Rng) -> Result<Self> {
        let mut net = Self::allocate(spec)?;
        for op in &net.ops {
            let (weight, bias, fan_in, relu) = match *op {
                Op::Conv { in_c, k, weight, bias, relu, .. } => (weight, bias, in_c * k * k, relu),
                Op::Linear { in_f, weight, bias, relu, .. } => (weight, bias, in_f, relu),
                _ => continue,
            };
            let gain = if relu { 6.0 } else { 3.0 };
            let bound = (gain / fan_in as f32).sqrt();
            for v in &mut net.params[weight].data {
                *v = rng.random_range(-bound..bound);
            }
            if let Some(b) = bias {
                net.params[b].data.fill(0.0);
            }
        }
        Ok(net)
    }

    /// Build from existing parameter tensors, checking names and shapes.
    pub fn from_params(spec: &NetworkSpec, params: Vec<Param>) -> Result<Self> {
        let mut net = Self::allocate(spec)?;
        if params.len() != net.params.len() {
            return Err(Error::Artifact(format!(
                "expected {} parameter tensors, found {}",
                net.params.len(),
                params.len()
            )));
        }
        for (slot, given) in net.params.iter_mut().zip(params) {
            if slot.name != given.name || slot.shape != given.shape || given.data.len() != slot.numel() {
                return Err(Error::Artifact(format!(
                    "parameter {} {:?} does not match spec tensor {} {:?}",
                    given.name, given.shape, slot.name, slot.shape
                )));
            }
            slot.data = given.data;
        }
        Ok(net)
    }

    /// Zero-filled parameters with the right names and shapes.
    pub fn allocate(spec: &NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let mut ops = Vec::new();
        let mut params = Vec::new();
        let mut channels = spec.input_channels;
        let mut spatial = (0, 0);
        let mut features = 0;
        let push = |params: &mut Vec<Param>, name: String, shape: Vec<usize>| {
            let n = shape.iter().product();
            params.push(Param { name, shape, data: vec![0.0; n] });
            params.len() - 1
        };
        for (i, layer) in spec.layers.iter().enumerate() {
            let op = match *layer {
                LayerSpec::Conv2d { out_channels, kernel, stride, padding, bias, activation } => {
                    let weight =
                        push(&mut params, format!("layers.{i}.weight"), vec![out_channels, channels, kernel, kernel]);
                    let bias = bias.then(|| push(&mut params, format!("layers.{i}.bias"), vec![out_channels]));
                    let op = Op::Conv {
                        in_c: channels,
                        out_c: out_channels,
                        k: kernel,
                        stride,
                        pad: padding,
                        weight,
                        bias,
                        relu: activation == Activation::Relu,
                    };
                    channels = out_channels;
                    op
                }
                LayerSpec::MaxPool2d { kernel, stride, padding } => Op::MaxPool { k: kernel, stride, pad: padding },
                LayerSpec::AdaptiveAvgPool2d { output_h, output_w } => {
                    spatial = (output_h, output_w);
                    Op::AdaptiveAvg { oh: output_h, ow: output_w }
                }
                LayerSpec::Flatten => {
                    features = channels * spatial.0 * spatial.1;
                    Op::Flatten
                }
                LayerSpec::Linear { out_features, bias, activation } => {
                    let weight = push(&mut params, format!("layers.{i}.weight"), vec![out_features, features]);
                    let bias = bias.then(|| push(&mut params, format!("layers.{i}.bias"), vec![out_features]));
                    let op = Op::Linear {
                        in_f: features,
                        out_f: out_features,
                        weight,
                        bias,
                        relu: activation == Activation::Relu,
                    };
                    features = out_features;
                    op
                }
                LayerSpec::Dropout { p } => Op::Dropout { p: p as f32 },
            };
            ops.push(op);
        }
        Ok(Self { spec: spec.clone(), ops, params })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    /// Number of trainable scalars actually allocated.
    pub fn trainable_elements(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn zero_grads(&self) -> Vec<Vec<f32>> {
        self.params.iter().map(|p| vec![0.0; p.data.len()]).collect()
    }

    /// Inference-mode forward pass (dropout is the identity).
    pub fn logits(&self, input: &FeatureMap) -> Result<Vec<f32>> {
        self.run(input, None).map(|(out, _)| out.data)
    }

    /// Training-mode forward pass keeping what backprop needs. Dropout masks
    /// are drawn from `rng`.
    pub fn forward_train(&self, input: &FeatureMap, rng: &mut impl Rng) -> Result<(Vec<f32>, Trace)> {
        let mut draw = |p: f32, n: usize| -> Vec<f32> {
            let keep = 1.0 - p;
            (0..n).map(|_| if rng.random::<f32>() < keep { 1.0 / keep } else { 0.0 }).collect()
        };
        let (out, caches) = self.run(input, Some(&mut draw))?;
        Ok((out.data, Trace { caches: caches.expect("training caches") }))
    }

    #[allow(clippy::type_complexity)]
    fn run(
        &self,
        input: &FeatureMap,
        mut train: Option<&mut dyn FnMut(f32, usize) -> Vec<f32>>,
    ) -> Result<(FeatureMap, Option<Vec<Cache>>)> {
        if input.c != self.spec.input_channels {
            return Err(Error::InvalidInput(format!(
                "expected {} input channels, got {}",
                self.spec.input_channels, input.c
            )));
        }
        let keep_cache = train.is_some();
        let mut caches = keep_cache.then(|| Vec::with_capacity(self.ops.len()));
        let mut x = input.clone();
        for op in &self.ops {
            let in_shape = (x.c, x.h, x.w);
            match *op {
                Op::Conv { in_c, out_c, k, stride, pad, weight, bias, relu } => {
                    let oh = conv_out(x.h, k, stride, pad);
                    let ow = conv_out(x.w, k, stride, pad);
                    if oh == 0 || ow == 0 {
                        return Err(Error::InvalidInput(format!("input too small for {k}x{k} conv")));
                    }
                    let cols = im2col(&x, k, stride, pad, oh, ow);
                    let n = oh * ow;
                    let mut out = vec![0.0; out_c * n];
                    if let Some(b) = bias {
                        for (co, chunk) in out.chunks_mut(n).enumerate() {
                            chunk.fill(self.params[b].data[co]);
                        }
                    }
                    let kdim = in_c * k * k;
                    gemm(out_c, kdim, n, &self.params[weight].data, (kdim, 1), &cols, (n, 1), 1.0, &mut out);
                    if relu {
                        out.iter_mut().for_each(|v| *v = v.max(0.0));
                    }
                    if let Some(c) = caches.as_mut() {
                        c.push(Cache::Conv { cols, in_shape, out: out.clone(), out_hw: (oh, ow) });
                    }
                    x = FeatureMap::new(out_c, oh, ow, out);
                }
                Op::MaxPool { k, stride, pad } => {
                    let (y, argmax) = max_pool(&x, k, stride, pad)?;
                    if let Some(c) = caches.as_mut() {
                        c.push(Cache::MaxPool { argmax, in_shape });
                    }
                    x = y;
                }
                Op::AdaptiveAvg { oh, ow } => {
                    x = adaptive_avg_pool(&x, oh, ow);
                    if let Some(c) = caches.as_mut() {
                        c.push(Cache::AdaptiveAvg { in_shape });
                    }
                }
                Op::Flatten => {
                    if let Some(c) = caches.as_mut() {
                        c.push(Cache::Flatten);
                    }
                    let n = x.data.len();
                    x = FeatureMap::new(n, 1, 1, std::mem::take(&mut x.data));
                }
                Op::Linear { in_f, out_f, weight, bias, relu } => {
                    debug_assert_eq!(x.data.len(), in_f);
                    let w = &self.params[weight].data;
                    let mut out: Vec<f32> = (0..out_f)
                        .map(|o| {
                            let row = &w[o * in_f..(o + 1) * in_f];
                            let dot: f32 = row.iter().zip(&x.data).map(|(a, b)| a * b).sum();
                            dot + bias.map(|b| self.params[b].data[o]).unwrap_or(0.0)
                        })
                        .collect();
                    if relu {
                        out.iter_mut().for_each(|v| *v = v.max(0.0));
                    }
                    if let Some(c) = caches.as_mut() {
                        c.push(Cache::Linear { input: x.data.clone(), out: out.clone() });
                    }
                    x = FeatureMap::new(out_f, 1, 1, out);
                }
                Op::Dropout { p } => {
                    if let (Some(draw), Some(c)) = (train.as_mut(), caches.as_mut()) {
                        let mask = if p > 0.0 { draw(p, x.data.len()) } else { vec![1.0; x.data.len()] };
                        x.data.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
                        c.push(Cache::Dropout { mask });
                    }
                }
            }
        }
        Ok((x, caches))
    }

    /// Accumulate parameter gradients for one sample into `grads`, given the
    /// gradient of the loss with respect to the logits.
    pub fn backward(&self, trace: Trace, dlogits: &[f32], grads: &mut [Vec<f32>]) {
        let mut grad = dlogits.to_vec();
        for (index, (op, cache)) in self.ops.iter().zip(trace.caches).enumerate().rev() {
            let need_input_grad = index > 0;
            match (op, cache) {
                (&Op::Linear { in_f, out_f, weight, bias, relu }, Cache::Linear { input, out }) => {
                    if relu {
                        grad.iter_mut().zip(&out).for_each(|(g, o)| {
                            if *o <= 0.0 {
                                *g = 0.0
                            }
                        });
                    }
                    if let Some(b) = bias {
                        grads[b].iter_mut().zip(&grad).for_each(|(gb, g)| *gb += g);
                    }
                    let gw = &mut grads[weight];
                    for o in 0..out_f {
                        let g = grad[o];
                        if g != 0.0 {
                            let row = &mut gw[o * in_f..(o + 1) * in_f];
                            row.iter_mut().zip(&input).for_each(|(w, x)| *w += g * x);
                        }
                    }
                    if need_input_grad {
                        let w = &self.params[weight].data;
                        let mut dx = vec![0.0; in_f];
                        for o in 0..out_f {
                            let g = grad[o];
                            if g != 0.0 {
                                let row = &w[o * in_f..(o + 1) * in_f];
                                dx.iter_mut().zip(row).for_each(|(d, w)| *d += g * w);
                            }
                        }
                        grad = dx;
                    }
                }
                (&Op::Dropout { .. }, Cache::Dropout { mask }) => {
                    grad.iter_mut().zip(&mask).for_each(|(g, m)| *g *= m);
                }
                (Op::Flatten, Cache::Flatten) => {}
                (&Op::AdaptiveAvg { oh, ow }, Cache::AdaptiveAvg { in_shape }) => {
                    grad = adaptive_avg_pool_backward(&grad, in_shape, oh, ow);
                }
                (&Op::MaxPool { .. }, Cache::MaxPool { argmax, in_shape }) => {
                    let (c, h, w) = in_shape;
                    let mut dx = vec![0.0; c * h * w];
                    for (g, &src) in grad.iter().zip(&argmax) {
                        dx[src] += g;
                    }
                    grad = dx;
                }
                (
                    &Op::Conv { in_c, out_c, k, stride, pad, weight, bias, relu },
                    Cache::Conv { cols, in_shape, out, out_hw },
                ) => {
                    if relu {
                        grad.iter_mut().zip(&out).for_each(|(g, o)| {
                            if *o <= 0.0 {
                                *g = 0.0
                            }
                        });
                    }
                    let n = out_hw.0 * out_hw.1;
                    let kdim = in_c * k * k;
                    if let Some(b) = bias {
                        for (co, chunk) in grad.chunks(n).enumerate() {
                            grads[b][co] += chunk.iter().sum::<f32>();
                        }
                    }
                    // dW[out_c x kdim] += dOut[out_c x n] * cols^T
                    gemm(out_c, n, kdim, &grad, (n, 1), &cols, (1, n), 1.0, &mut grads[weight]);
                    if need_input_grad {
                        let mut dcols = vec![0.0; kdim * n];
                        // dCols[kdim x n] = W^T * dOut
                        gemm(kdim, out_c, n, &self.params[weight].data, (1, kdim), &grad, (n, 1), 0.0, &mut dcols);
                        grad = col2im(&dcols, in_shape, k, stride, pad, out_hw);
                    }
                }
                _ => unreachable!("cache does not match layer {index}"),
            }
        }
    }
}

/// `c = a * b + beta * c` for row-major `c` of shape `m x n`, with `a` and
/// `b` addressed through (row stride, column stride).
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_strides: (usize, usize),
    b: &[f32],
    b_strides: (usize, usize),
    beta: f32,
    c: &mut [f32],
) {
    assert!(c.len() >= m * n);
    assert!(m == 0 || k == 0 || a.len() > (m - 1) * a_strides.0 + (k - 1) * a_strides.1);
    assert!(k == 0 || n == 0 || b.len() > (k - 1) * b_strides.0 + (n - 1) * b_strides.1);
    // SAFETY: the asserts above bound every index sgemm touches.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn im2col(x: &FeatureMap, k: usize, stride: usize, pad: usize, oh: usize, ow: usize) -> Vec<f32> {
    let n = oh * ow;
    let mut cols = vec![0.0; x.c * k * k * n];
    for c in 0..x.c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * n..(row + 1) * n];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= x.h as isize {
                        continue;
                    }
                    let src_row = (c * x.h + iy as usize) * x.w;
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < x.w as isize {
                            dst[oy * ow + ox] = x.data[src_row + ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(
    dcols: &[f32],
    (c_in, h, w): (usize, usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
    (oh, ow): (usize, usize),
) -> Vec<f32> {
    let n = oh * ow;
    let mut dx = vec![0.0; c_in * h * w];
    for c in 0..c_in {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &dcols[row * n..(row + 1) * n];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = (c * h + iy as usize) * w;
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dx[dst_row + ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
    dx
}

fn max_pool(x: &FeatureMap, k: usize, stride: usize, pad: usize) -> Result<(FeatureMap, Vec<usize>)> {
    let oh = conv_out(x.h, k, stride, pad);
    let ow = conv_out(x.w, k, stride, pad);
    if oh == 0 || ow == 0 {
        return Err(Error::InvalidInput(format!("{}x{} map too small for {k}x{k} max pooling", x.h, x.w)));
    }
    let mut out = Vec::with_capacity(x.c * oh * ow);
    let mut argmax = Vec::with_capacity(x.c * oh * ow);
    for c in 0..x.c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f32::NEG_INFINITY;
                let mut best_at = None;
                for ky in 0..k {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= x.h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= x.w as isize {
                            continue;
                        }
                        let at = (c * x.h + iy as usize) * x.w + ix as usize;
                        let v = x.data[at];
                        if best_at.is_none() || v > best {
                            best = v;
                            best_at = Some(at);
                        }
                    }
                }
                let at = best_at.expect("pool window overlaps the input");
                out.push(best);
                argmax.push(at);
            }
        }
    }
    Ok((FeatureMap::new(x.c, oh, ow, out), argmax))
}

fn adaptive_bounds(i: usize, input: usize, output: usize) -> (usize, usize) {
    let start = i * input / output;
    let end = ((i + 1) * input).div_ceil(output);
    (start, end)
}

fn adaptive_avg_pool(x: &FeatureMap, oh: usize, ow: usize) -> FeatureMap {
    let mut out = Vec::with_capacity(x.c * oh * ow);
    for c in 0..x.c {
        for oy in 0..oh {
            let (y0, y1) = adaptive_bounds(oy, x.h, oh);
            for ox in 0..ow {
                let (x0, x1) = adaptive_bounds(ox, x.w, ow);
                let mut sum = 0.0;
                for y in y0..y1 {
                    let row = (c * x.h + y) * x.w;
                    sum += x.data[row + x0..row + x1].iter().sum::<f32>();
                }
                out.push(sum / ((y1 - y0) * (x1 - x0)) as f32);
            }
        }
    }
    FeatureMap::new(x.c, oh, ow, out)
}

fn adaptive_avg_pool_backward(grad: &[f32], (c_in, h, w): (usize, usize, usize), oh: usize, ow: usize) -> Vec<f32> {
    let mut dx = vec![0.0; c_in * h * w];
    for c in 0..c_in {
        for oy in 0..oh {
            let (y0, y1) = adaptive_bounds(oy, h, oh);
            for ox in 0..ow {
                let (x0, x1) = adaptive_bounds(ox, w, ow);
                let g = grad[(c * oh + oy) * ow + ox] / ((y1 - y0) * (x1 - x0)) as f32;
                for y in y0..y1 {
                    let row = (c * h + y) * w;
                    dx[row + x0..row + x1].iter_mut().for_each(|d| *d += g);
                }
            }
        }
    }
    dx
}

/// Numerically stable softmax in f64.
pub fn softmax(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let exps: Vec<f64> = logits.iter().map(|&l| (l as f64 - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}
