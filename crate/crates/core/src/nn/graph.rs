//! Reverse-mode differentiation over a recorded list of tensor operations.
//!
//! A [`Graph`] is built fresh for every forward pass. Parameters enter the
//! graph by value, tagged with a [`ParamKey`]; after [`Graph::backward`] the
//! gradient of every use of a key is summed by [`Gradients::param_grad`].

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Identifies a parameter tensor: which network, which slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamKey {
    pub net: usize,
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Zero,
    Reflect,
}

#[derive(Debug, Clone, Copy)]
pub struct ConvGeometry {
    pub stride: usize,
    pub pad: usize,
    pub padding: Padding,
}

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamKey),
    Conv2d {
        x: usize,
        w: usize,
        b: usize,
        geom: ConvGeometry,
    },
    InstanceNorm {
        x: usize,
        inv_std: Vec<f64>,
    },
    Relu(usize),
    LeakyRelu(usize, f64),
    Tanh(usize),
    Add(usize, usize),
    Upsample2x(usize),
    SliceChannels {
        x: usize,
        start: usize,
    },
    MeanAbsDiff(usize, usize),
    MeanSquaredTo(usize, f64),
    LinComb(Vec<(usize, f64)>),
    SigmoidFocal {
        logits: usize,
        targets: Tensor,
        weights: Tensor,
        alpha: f64,
        gamma: f64,
        norm: f64,
    },
    SmoothL1 {
        pred: usize,
        target: Tensor,
        weights: Tensor,
        beta: f64,
        norm: f64,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(Op::Input, t)
    }

    pub fn param(&mut self, key: ParamKey, t: &Tensor) -> Var {
        self.push(Op::Param(key), t.clone())
    }

    /// 2-D convolution of a `[C, H, W]` input with `[O, C, k, k]` weights and `[O]` bias.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, geom: ConvGeometry) -> Result<Var> {
        let out = conv_forward(self.value(x), self.value(w), self.value(b), geom)?;
        Ok(self.push(
            Op::Conv2d {
                x: x.0,
                w: w.0,
                b: b.0,
                geom,
            },
            out,
        ))
    }

    /// Per-channel normalization over spatial positions, no affine terms.
    pub fn instance_norm(&mut self, x: Var) -> Result<Var> {
        const EPS: f64 = 1e-5;
        let input = self.value(x);
        let (c, h, w) = input.chw()?;
        let plane = h * w;
        let mut out = Tensor::zeros(&[c, h, w]);
        let mut inv_std = Vec::with_capacity(c);
        for ch in 0..c {
            let src = &input.data()[ch * plane..(ch + 1) * plane];
            let mean = src.iter().sum::<f64>() / plane as f64;
            let var = src.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / plane as f64;
            let inv = 1.0 / (var + EPS).sqrt();
            for (o, s) in out.data_mut()[ch * plane..(ch + 1) * plane]
                .iter_mut()
                .zip(src)
            {
                *o = (s - mean) * inv;
            }
            inv_std.push(inv);
        }
        Ok(self.push(Op::InstanceNorm { x: x.0, inv_std }, out))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(Op::Relu(x.0), out)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        self.push(Op::LeakyRelu(x.0, slope), out)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::tanh);
        self.push(Op::Tanh(x.0), out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::Shape(format!(
                "add: {:?} vs {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let mut out = va.clone();
        out.add_assign(vb);
        Ok(self.push(Op::Add(a.0, b.0), out))
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let input = self.value(x);
        let (c, h, w) = input.chw()?;
        let mut out = Tensor::zeros(&[c, 2 * h, 2 * w]);
        let src = input.data();
        let dst = out.data_mut();
        for ch in 0..c {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    dst[(ch * 2 * h + y) * 2 * w + xx] = src[(ch * h + y / 2) * w + xx / 2];
                }
            }
        }
        Ok(self.push(Op::Upsample2x(x.0), out))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let out = self.value(x).channels(start, end)?;
        Ok(self.push(Op::SliceChannels { x: x.0, start }, out))
    }

    /// `mean(|a - b|)` as a scalar.
    pub fn mean_abs_diff(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::Shape(format!(
                "mean_abs_diff: {:?} vs {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let v = mean_abs_diff(va.data(), vb.data());
        Ok(self.push(Op::MeanAbsDiff(a.0, b.0), Tensor::scalar(v)))
    }

    /// `mean((a - target)^2)` as a scalar.
    pub fn mean_squared_to(&mut self, a: Var, target: f64) -> Var {
        let v = mean_squared_to(self.value(a).data(), target);
        self.push(Op::MeanSquaredTo(a.0, target), Tensor::scalar(v))
    }

    /// `sum_i k_i * x_i` over same-shaped inputs.
    pub fn lin_comb(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let Some(&(first, _)) = terms.first() else {
            return Err(Error::Shape("lin_comb of nothing".into()));
        };
        let mut out = Tensor::zeros(self.value(first).shape());
        for &(v, k) in terms {
            if self.value(v).shape() != out.shape() {
                return Err(Error::Shape("lin_comb shape mismatch".into()));
            }
            out.add_scaled(self.value(v), k);
        }
        let terms = terms.iter().map(|&(v, k)| (v.0, k)).collect();
        Ok(self.push(Op::LinComb(terms), out))
    }

    /// Weighted sigmoid focal loss over logits, summed and divided by `norm`.
    pub fn sigmoid_focal(
        &mut self,
        logits: Var,
        targets: Tensor,
        weights: Tensor,
        alpha: f64,
        gamma: f64,
        norm: f64,
    ) -> Result<Var> {
        let z = self.value(logits);
        if z.shape() != targets.shape() || z.shape() != weights.shape() {
            return Err(Error::Shape("sigmoid_focal shape mismatch".into()));
        }
        let mut total = 0.0;
        for ((&z, &t), &w) in z.data().iter().zip(targets.data()).zip(weights.data()) {
            if w != 0.0 {
                total += w * focal_term(z, t, alpha, gamma).0;
            }
        }
        Ok(self.push(
            Op::SigmoidFocal {
                logits: logits.0,
                targets,
                weights,
                alpha,
                gamma,
                norm,
            },
            Tensor::scalar(total / norm),
        ))
    }

    /// Weighted smooth-L1 loss, summed and divided by `norm`.
    pub fn smooth_l1(
        &mut self,
        pred: Var,
        target: Tensor,
        weights: Tensor,
        beta: f64,
        norm: f64,
    ) -> Result<Var> {
        let p = self.value(pred);
        if p.shape() != target.shape() || p.shape() != weights.shape() {
            return Err(Error::Shape("smooth_l1 shape mismatch".into()));
        }
        let mut total = 0.0;
        for ((&p, &t), &w) in p.data().iter().zip(target.data()).zip(weights.data()) {
            if w != 0.0 {
                total += w * smooth_l1_term(p - t, beta).0;
            }
        }
        Ok(self.push(
            Op::SmoothL1 {
                pred: pred.0,
                target,
                weights,
                beta,
                norm,
            },
            Tensor::scalar(total / norm),
        ))
    }

    /// Back-propagates from the scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(Error::Shape("backward root must be a scalar".into()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(1.0));
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input | Op::Param(_) => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Conv2d { x, w, b, geom } => {
                    let (gx, gw, gb) = conv_backward(
                        &self.nodes[*x].value,
                        &self.nodes[*w].value,
                        &g,
                        *geom,
                    );
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *w, gw);
                    accumulate(&mut grads, *b, gb);
                }
                Op::InstanceNorm { x, inv_std } => {
                    let y = &node.value;
                    let (c, h, w) = y.chw()?;
                    let plane = (h * w) as f64;
                    let n = h * w;
                    let mut gx = Tensor::zeros(&[c, h, w]);
                    for ch in 0..c {
                        let dy = &g.data()[ch * n..(ch + 1) * n];
                        let yy = &y.data()[ch * n..(ch + 1) * n];
                        let mean_dy = dy.iter().sum::<f64>() / plane;
                        let mean_dy_y =
                            dy.iter().zip(yy).map(|(a, b)| a * b).sum::<f64>() / plane;
                        for ((o, d), v) in gx.data_mut()[ch * n..(ch + 1) * n]
                            .iter_mut()
                            .zip(dy)
                            .zip(yy)
                        {
                            *o = inv_std[ch] * (d - mean_dy - v * mean_dy_y);
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Relu(x) => {
                    let xin = &self.nodes[*x].value;
                    let gx = zip_map(&g, xin, |d, v| if v > 0.0 { d } else { 0.0 });
                    accumulate(&mut grads, *x, gx);
                }
                Op::LeakyRelu(x, slope) => {
                    let xin = &self.nodes[*x].value;
                    let gx = zip_map(&g, xin, |d, v| if v > 0.0 { d } else { slope * d });
                    accumulate(&mut grads, *x, gx);
                }
                Op::Tanh(x) => {
                    let gx = zip_map(&g, &node.value, |d, y| d * (1.0 - y * y));
                    accumulate(&mut grads, *x, gx);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Upsample2x(x) => {
                    let (c, h2, w2) = g.chw()?;
                    let (h, w) = (h2 / 2, w2 / 2);
                    let mut gx = Tensor::zeros(&[c, h, w]);
                    let src = g.data();
                    let dst = gx.data_mut();
                    for ch in 0..c {
                        for y in 0..h2 {
                            for xx in 0..w2 {
                                dst[(ch * h + y / 2) * w + xx / 2] += src[(ch * h2 + y) * w2 + xx];
                            }
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::SliceChannels { x, start } => {
                    let xin = &self.nodes[*x].value;
                    let (_, h, w) = xin.chw()?;
                    let mut gx = Tensor::zeros(xin.shape());
                    let off = start * h * w;
                    gx.data_mut()[off..off + g.len()].copy_from_slice(g.data());
                    accumulate(&mut grads, *x, gx);
                }
                Op::MeanAbsDiff(a, b) => {
                    let (va, vb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let k = g.item() / va.len() as f64;
                    let ga = zip_map(va, vb, |p, q| k * sign(p - q));
                    let gb = ga.map(|v| -v);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MeanSquaredTo(a, t) => {
                    let va = &self.nodes[*a].value;
                    let k = 2.0 * g.item() / va.len() as f64;
                    accumulate(&mut grads, *a, va.map(|v| k * (v - t)));
                }
                Op::LinComb(terms) => {
                    for &(v, k) in terms {
                        accumulate(&mut grads, v, g.map(|d| k * d));
                    }
                }
                Op::SigmoidFocal {
                    logits,
                    targets,
                    weights,
                    alpha,
                    gamma,
                    norm,
                } => {
                    let z = &self.nodes[*logits].value;
                    let k = g.item() / norm;
                    let mut gz = Tensor::zeros(z.shape());
                    for (i, o) in gz.data_mut().iter_mut().enumerate() {
                        let w = weights.data()[i];
                        if w != 0.0 {
                            *o = k * w * focal_term(z.data()[i], targets.data()[i], *alpha, *gamma).1;
                        }
                    }
                    accumulate(&mut grads, *logits, gz);
                }
                Op::SmoothL1 {
                    pred,
                    target,
                    weights,
                    beta,
                    norm,
                } => {
                    let p = &self.nodes[*pred].value;
                    let k = g.item() / norm;
                    let mut gp = Tensor::zeros(p.shape());
                    for (i, o) in gp.data_mut().iter_mut().enumerate() {
                        let w = weights.data()[i];
                        if w != 0.0 {
                            *o = k * w * smooth_l1_term(p.data()[i] - target.data()[i], *beta).1;
                        }
                    }
                    accumulate(&mut grads, *pred, gp);
                }
            }
        }
        Ok(Gradients {
            keys: self
                .nodes
                .iter()
                .map(|n| match n.op {
                    Op::Param(k) => Some(k),
                    _ => None,
                })
                .collect(),
            grads,
        })
    }
}

pub struct Gradients {
    keys: Vec<Option<ParamKey>>,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient with respect to an input or parameter node.
    pub fn of(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Sum of gradients over every use of `key`.
    pub fn param_grad(&self, key: ParamKey) -> Option<Tensor> {
        let mut acc: Option<Tensor> = None;
        for (k, g) in self.keys.iter().zip(&self.grads) {
            if *k == Some(key) {
                if let Some(g) = g {
                    match &mut acc {
                        Some(a) => a.add_assign(g),
                        None => acc = Some(g.clone()),
                    }
                }
            }
        }
        acc
    }
}

fn accumulate(grads: &mut [Option<Tensor>], i: usize, g: Tensor) {
    match &mut grads[i] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.shape(), data).expect("same shape")
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub(crate) fn mean_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).abs()).sum::<f64>() / a.len() as f64
}

pub(crate) fn mean_squared_to(a: &[f64], target: f64) -> f64 {
    a.iter().map(|v| (v - target).powi(2)).sum::<f64>() / a.len() as f64
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Focal loss of one logit and its derivative.
///
/// With `s = +1` for a positive target and `-1` otherwise, `p_t = sigmoid(s z)`
/// and `loss = -a_t (1 - p_t)^gamma ln p_t`.
pub(crate) fn focal_term(z: f64, target: f64, alpha: f64, gamma: f64) -> (f64, f64) {
    let positive = target > 0.5;
    let s = if positive { 1.0 } else { -1.0 };
    let a_t = if positive { alpha } else { 1.0 - alpha };
    let u = s * z;
    let pt = sigmoid(u);
    let one_minus = sigmoid(-u);
    let log_pt = -softplus(-u);
    let loss = -a_t * one_minus.powf(gamma) * log_pt;
    let grad = -a_t * s * (-gamma * one_minus.powf(gamma) * pt * log_pt + one_minus.powf(gamma + 1.0));
    (loss, grad)
}

pub(crate) fn smooth_l1_term(d: f64, beta: f64) -> (f64, f64) {
    if d.abs() < beta {
        (0.5 * d * d / beta, d / beta)
    } else {
        (d.abs() - 0.5 * beta, sign(d))
    }
}

fn conv_out_len(len: usize, k: usize, geom: ConvGeometry) -> Option<usize> {
    (len + 2 * geom.pad)
        .checked_sub(k)
        .map(|span| span / geom.stride + 1)
}

/// Maps a padded coordinate back to the source, `None` for zero padding.
fn source_index(i: isize, len: usize, padding: Padding) -> Option<usize> {
    if (0..len as isize).contains(&i) {
        return Some(i as usize);
    }
    match padding {
        Padding::Zero => None,
        Padding::Reflect => {
            let last = len as isize - 1;
            let r = if i < 0 { -i } else { 2 * last - i };
            (0..len as isize).contains(&r).then_some(r as usize)
        }
    }
}

struct ConvPlan {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    oh: usize,
    ow: usize,
    rows: Vec<Vec<Option<usize>>>,
    cols: Vec<Vec<Option<usize>>>,
}

impl ConvPlan {
    fn new(x: &Tensor, weight: &Tensor, geom: ConvGeometry) -> Result<Self> {
        let (c, h, w) = x.chw()?;
        let [_, wc, k, k2] = weight.shape()[..] else {
            return Err(Error::Shape(format!("conv weight {:?}", weight.shape())));
        };
        if wc != c || k != k2 {
            return Err(Error::Shape(format!(
                "conv weight {:?} vs input {:?}",
                weight.shape(),
                x.shape()
            )));
        }
        if geom.padding == Padding::Reflect && geom.pad >= h.min(w) {
            return Err(Error::Shape(format!(
                "reflect padding {} too large for {h}x{w}",
                geom.pad
            )));
        }
        let (Some(oh), Some(ow)) = (conv_out_len(h, k, geom), conv_out_len(w, k, geom)) else {
            return Err(Error::Shape(format!("kernel {k} larger than padded {h}x{w}")));
        };
        let table = |len: usize, out: usize| -> Vec<Vec<Option<usize>>> {
            (0..k)
                .map(|kk| {
                    (0..out)
                        .map(|o| {
                            let i = (o * geom.stride + kk) as isize - geom.pad as isize;
                            source_index(i, len, geom.padding)
                        })
                        .collect()
                })
                .collect()
        };
        Ok(ConvPlan {
            c,
            h,
            w,
            k,
            oh,
            ow,
            rows: table(h, oh),
            cols: table(w, ow),
        })
    }

    fn patch_len(&self) -> usize {
        self.c * self.k * self.k
    }

    fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let n = self.oh * self.ow;
        let mut cols = vec![0.0; self.patch_len() * n];
        for ch in 0..self.c {
            let plane = &x[ch * self.h * self.w..(ch + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ch * self.k + ky) * self.k + kx;
                    let dst = &mut cols[row * n..(row + 1) * n];
                    for (oy, sy) in self.rows[ky].iter().enumerate() {
                        let Some(sy) = sy else { continue };
                        let src_row = &plane[sy * self.w..(sy + 1) * self.w];
                        for (ox, sx) in self.cols[kx].iter().enumerate() {
                            if let Some(sx) = sx {
                                dst[oy * self.ow + ox] = src_row[*sx];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f64]) -> Vec<f64> {
        let n = self.oh * self.ow;
        let mut x = vec![0.0; self.c * self.h * self.w];
        for ch in 0..self.c {
            let plane = &mut x[ch * self.h * self.w..(ch + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ch * self.k + ky) * self.k + kx;
                    let src = &cols[row * n..(row + 1) * n];
                    for (oy, sy) in self.rows[ky].iter().enumerate() {
                        let Some(sy) = sy else { continue };
                        for (ox, sx) in self.cols[kx].iter().enumerate() {
                            if let Some(sx) = sx {
                                plane[sy * self.w + sx] += src[oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
        x
    }
}

/// `c = a * b` for row-major matrices with explicit strides on `a` and `b`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c.iter_mut().take(m * n) {
            *v *= beta;
        }
        return;
    }
    debug_assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    // SAFETY: the slices cover every index addressed through the given
    // dimensions and strides (checked above in debug builds), and `c` does not
    // alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn conv_forward(x: &Tensor, weight: &Tensor, bias: &Tensor, geom: ConvGeometry) -> Result<Tensor> {
    let plan = ConvPlan::new(x, weight, geom)?;
    let out_c = weight.shape()[0];
    if bias.shape() != [out_c] {
        return Err(Error::Shape(format!("conv bias {:?}", bias.shape())));
    }
    let n = plan.oh * plan.ow;
    let kk = plan.patch_len();
    let cols = plan.im2col(x.data());
    let mut out = vec![0.0; out_c * n];
    for (o, b) in bias.data().iter().enumerate() {
        out[o * n..(o + 1) * n].fill(*b);
    }
    gemm(out_c, kk, n, weight.data(), (kk, 1), &cols, (n, 1), 1.0, &mut out);
    Tensor::from_vec(&[out_c, plan.oh, plan.ow], out)
}

fn conv_backward(
    x: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    geom: ConvGeometry,
) -> (Tensor, Tensor, Tensor) {
    let plan = ConvPlan::new(x, weight, geom).expect("validated in forward");
    let out_c = weight.shape()[0];
    let n = plan.oh * plan.ow;
    let kk = plan.patch_len();
    let cols = plan.im2col(x.data());
    let go = grad_out.data();

    let mut gw = vec![0.0; out_c * kk];
    // dW[o, p] = sum_j dOut[o, j] * cols[p, j]
    gemm(out_c, n, kk, go, (n, 1), &cols, (1, n), 0.0, &mut gw);

    let gb: Vec<f64> = (0..out_c).map(|o| go[o * n..(o + 1) * n].iter().sum()).collect();

    let mut gcols = vec![0.0; kk * n];
    // dCols[p, j] = sum_o W[o, p] * dOut[o, j]
    gemm(kk, out_c, n, weight.data(), (1, kk), go, (n, 1), 0.0, &mut gcols);
    let gx = plan.col2im(&gcols);

    (
        Tensor::from_vec(x.shape(), gx).expect("shape"),
        Tensor::from_vec(weight.shape(), gw).expect("shape"),
        Tensor::from_vec(&[out_c], gb).expect("shape"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Direct nested-loop convolution used as a reference.
    fn conv_naive(x: &Tensor, w: &Tensor, b: &Tensor, geom: ConvGeometry) -> Tensor {
        let (c, h, wd) = x.chw().unwrap();
        let (o, k) = (w.shape()[0], w.shape()[2]);
        let oh = (h + 2 * geom.pad - k) / geom.stride + 1;
        let ow = (wd + 2 * geom.pad - k) / geom.stride + 1;
        let mut out = Tensor::zeros(&[o, oh, ow]);
        for oc in 0..o {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.data()[oc];
                    for ic in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * geom.stride + ky) as isize - geom.pad as isize;
                                let ix = (ox * geom.stride + kx) as isize - geom.pad as isize;
                                let (Some(sy), Some(sx)) = (
                                    source_index(iy, h, geom.padding),
                                    source_index(ix, wd, geom.padding),
                                ) else {
                                    continue;
                                };
                                acc += w.data()[((oc * c + ic) * k + ky) * k + kx]
                                    * x.data()[(ic * h + sy) * wd + sx];
                            }
                        }
                    }
                    out.data_mut()[(oc * oh + oy) * ow + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (padding, pad, stride, k) in [
            (Padding::Zero, 1, 1, 3),
            (Padding::Zero, 1, 2, 4),
            (Padding::Reflect, 3, 1, 7),
            (Padding::Reflect, 1, 2, 3),
        ] {
            let geom = ConvGeometry {
                stride,
                pad,
                padding,
            };
            let x = random(&[3, 9, 8], &mut rng);
            let w = random(&[4, 3, k, k], &mut rng);
            let b = random(&[4], &mut rng);
            let fast = conv_forward(&x, &w, &b, geom).unwrap();
            let slow = conv_naive(&x, &w, &b, geom);
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    /// Central finite differences of `f` at every coordinate of `inputs[which]`.
    fn numeric_grad(
        build: &dyn Fn(&mut Graph, &[Var]) -> Var,
        inputs: &[Tensor],
        which: usize,
    ) -> Vec<f64> {
        let eval = |ins: &[Tensor]| {
            let mut g = Graph::new();
            let vars: Vec<Var> = ins.iter().map(|t| g.input(t.clone())).collect();
            let out = build(&mut g, &vars);
            g.value(out).item()
        };
        let h = 1e-6;
        (0..inputs[which].len())
            .map(|i| {
                let mut plus = inputs.to_vec();
                plus[which].data_mut()[i] += h;
                let mut minus = inputs.to_vec();
                minus[which].data_mut()[i] -= h;
                (eval(&plus) - eval(&minus)) / (2.0 * h)
            })
            .collect()
    }

    fn check_grads(build: &dyn Fn(&mut Graph, &[Var]) -> Var, inputs: Vec<Tensor>) {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
        let out = build(&mut g, &vars);
        let grads = g.backward(out).unwrap();
        for (which, v) in vars.iter().enumerate() {
            let analytic = grads.of(*v).cloned().unwrap_or_else(|| Tensor::zeros(inputs[which].shape()));
            let numeric = numeric_grad(build, &inputs, which);
            for (a, n) in analytic.data().iter().zip(&numeric) {
                let scale = a.abs().max(n.abs()).max(1e-6);
                assert!((a - n).abs() / scale < 1e-5, "input {which}: analytic {a} vs numeric {n}");
            }
        }
    }

    #[test]
    fn conv_norm_activation_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let build = |g: &mut Graph, v: &[Var]| {
            let geom = ConvGeometry {
                stride: 2,
                pad: 1,
                padding: Padding::Reflect,
            };
            let c = g.conv2d(v[0], v[1], v[2], geom).unwrap();
            let n = g.instance_norm(c).unwrap();
            let a = g.leaky_relu(n, 0.2);
            let u = g.upsample2x(a).unwrap();
            let t = g.tanh(u);
            let s = g.slice_channels(t, 1, 2).unwrap();
            g.mean_squared_to(s, 0.3)
        };
        let inputs = vec![
            random(&[2, 6, 6], &mut rng),
            random(&[3, 2, 3, 3], &mut rng),
            random(&[3], &mut rng),
        ];
        check_grads(&build, inputs);
    }

    #[test]
    fn loss_op_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let targets = Tensor::from_vec(&[6], vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let weights = Tensor::from_vec(&[6], vec![1.0, 1.0, 0.0, 2.0, 1.0, 1.0]).unwrap();
        let build = move |g: &mut Graph, v: &[Var]| {
            let f = g
                .sigmoid_focal(v[0], targets.clone(), weights.clone(), 0.25, 2.0, 3.0)
                .unwrap();
            let s = g
                .smooth_l1(v[1], Tensor::full(&[6], 0.1), weights.clone(), 1.0 / 9.0, 2.0)
                .unwrap();
            let m = g.mean_abs_diff(v[0], v[1]).unwrap();
            let sum = g.add(v[0], v[1]).unwrap();
            let r = g.relu(sum);
            let q = g.mean_squared_to(r, 0.0);
            g.lin_comb(&[(f, 1.0), (s, 0.5), (m, 2.0), (q, 1.5)]).unwrap()
        };
        let inputs = vec![random(&[6], &mut rng).map(|v| 3.0 * v), random(&[6], &mut rng)];
        check_grads(&build, inputs);
    }

    #[test]
    fn focal_matches_definition() {
        for &(z, t) in &[(0.3, 1.0), (-2.0, 0.0), (4.0, 0.0), (-1.0, 1.0)] {
            let p: f64 = 1.0 / (1.0 + (-z as f64).exp());
            let (pt, at) = if t > 0.5 { (p, 0.25) } else { (1.0 - p, 0.75) };
            let expected = -at * (1.0 - pt).powi(2) * pt.ln();
            assert!((focal_term(z, t, 0.25, 2.0).0 - expected).abs() < 1e-12);
        }
    }
}
