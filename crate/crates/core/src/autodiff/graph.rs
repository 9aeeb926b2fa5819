//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! Values are computed eagerly as nodes are recorded, so one `Graph` serves
//! both plain inference and training. Reductions additionally keep their
//! `f64` accumulator so losses can be compared at full precision.

use std::rc::Rc;

use super::conv::{self, ConvGeom};
use super::params::{GradStore, ParamId, ParamStore};
use crate::error::{config, numeric, usage, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// An operation whose forward value is computed by the caller and whose
/// backward rule is supplied as an implementation of this trait.
pub trait CustomOp {
    fn name(&self) -> &'static str;

    /// Gradients for each input given the upstream gradient of the output.
    /// Entries may be `None` for inputs that receive no gradient.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>>;
}

enum Op {
    Leaf,
    Conv2d { input: Var, kernel: Var, bias: Option<Var>, geom: ConvGeom, c_out: usize },
    ConvTranspose2d { input: Var, kernel: Var, bias: Option<Var>, geom: ConvGeom, c_in: usize },
    LeakyRelu { input: Var, slope: f32 },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    Exp(Var),
    Log(Var),
    Clamp { input: Var, lo: f32, hi: f32 },
    RoundSte(Var),
    Sum(Var),
    Concat(Var, Var),
    SliceChannels { input: Var, start: usize },
    Subsample2(Var),
    Upsample2(Var),
    Select { mask: Rc<Vec<bool>>, a: Var, b: Var },
    Custom { inputs: Vec<Var>, op: Box<dyn CustomOp> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvTranspose2d { .. } => "conv2d_transpose",
            Op::LeakyRelu { .. } => "leaky_relu",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Clamp { .. } => "clamp",
            Op::RoundSte(_) => "round_ste",
            Op::Sum(_) => "sum",
            Op::Concat(..) => "concat",
            Op::SliceChannels { .. } => "slice_channels",
            Op::Subsample2(_) => "subsample2",
            Op::Upsample2(_) => "upsample2",
            Op::Select { .. } => "select",
            Op::Custom { op, .. } => op.name(),
        }
    }
}

struct Node {
    value: Tensor,
    scalar: Option<f64>,
    op: Op,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Lower and upper clamp applied by [`Graph::round_ste`].
pub const LATENT_MIN: f32 = -127.0;
pub const LATENT_MAX: f32 = 128.0;

/// Nearest integer with ties away from zero, clamped to the latent support.
pub fn round_latent(v: f32) -> f32 {
    v.round().clamp(LATENT_MIN, LATENT_MAX)
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.push_full(value, None, op, requires_grad)
    }

    fn push_full(&mut self, value: Tensor, scalar: Option<f64>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, scalar, op, requires_grad, param: None });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Full-precision value of a scalar node.
    pub fn scalar(&self, v: Var) -> f64 {
        let n = &self.nodes[v.0];
        n.scalar.unwrap_or(n.value.data()[0] as f64)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A leaf that receives a gradient.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let v = self.push(store.get(id).clone(), Op::Leaf, true);
        self.nodes[v.0].param = Some(id);
        v
    }

    /// Parameter leaf that is not differentiated (frozen networks).
    pub fn frozen(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.constant(store.get(id).clone())
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let x = self.value(input);
        let k = self.value(kernel);
        if x.shape().len() != 3 || k.shape().len() != 4 {
            return Err(config!("conv2d expects rank-3 input and rank-4 kernel, got {:?} and {:?}", x.shape(), k.shape()));
        }
        let (c_in, h, w) = x.chw();
        let (c_out, kc, kh, kw) = (k.shape()[0], k.shape()[1], k.shape()[2], k.shape()[3]);
        if kc != c_in {
            return Err(config!("conv2d kernel expects {kc} input channels, input has {c_in}"));
        }
        let geom = ConvGeom::forward(c_in, h, w, kh, kw, stride, pad)
            .ok_or_else(|| config!("conv2d kernel {kh}x{kw} stride {stride} does not fit {h}x{w}"))?;
        let b = self.bias_of(bias, c_out)?;
        let out = conv::conv2d_forward(x.data(), k.data(), b, c_out, &geom);
        let value = Tensor::new(&[c_out, geom.oh, geom.ow], out)?;
        let rg = self.rg(input) || self.rg(kernel) || bias.is_some_and(|b| self.rg(b));
        Ok(self.push(value, Op::Conv2d { input, kernel, bias, geom, c_out }, rg))
    }

    /// Transposed convolution; `kernel` is `c_in × c_out × kh × kw` and is the
    /// adjoint of [`Graph::conv2d`] with the same kernel.
    pub fn conv2d_transpose(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
        out_pad: usize,
    ) -> Result<Var> {
        let x = self.value(input);
        let k = self.value(kernel);
        if x.shape().len() != 3 || k.shape().len() != 4 {
            return Err(config!(
                "conv2d_transpose expects rank-3 input and rank-4 kernel, got {:?} and {:?}",
                x.shape(),
                k.shape()
            ));
        }
        let (c_in, h, w) = x.chw();
        let (kc, c_out, kh, kw) = (k.shape()[0], k.shape()[1], k.shape()[2], k.shape()[3]);
        if kc != c_in {
            return Err(config!("conv2d_transpose kernel expects {kc} input channels, input has {c_in}"));
        }
        let geom = ConvGeom::transposed(c_out, h, w, kh, kw, stride, pad, out_pad)
            .ok_or_else(|| config!("conv2d_transpose geometry invalid for {h}x{w}"))?;
        let b = self.bias_of(bias, c_out)?.map(<[f32]>::to_vec);
        let mut out = conv::conv2d_backward_input(x.data(), k.data(), c_in, &geom);
        if let Some(b) = b {
            let n = geom.h * geom.w;
            for (plane, bv) in out.chunks_exact_mut(n).zip(b) {
                plane.iter_mut().for_each(|v| *v += bv);
            }
        }
        let value = Tensor::new(&[c_out, geom.h, geom.w], out)?;
        let rg = self.rg(input) || self.rg(kernel) || bias.is_some_and(|b| self.rg(b));
        Ok(self.push(value, Op::ConvTranspose2d { input, kernel, bias, geom, c_in }, rg))
    }

    fn bias_of(&self, bias: Option<Var>, c_out: usize) -> Result<Option<&[f32]>> {
        match bias {
            None => Ok(None),
            Some(b) => {
                let t = self.value(b);
                if t.len() != c_out {
                    return Err(config!("bias has {} values, expected {c_out}", t.len()));
                }
                Ok(Some(t.data()))
            }
        }
    }

    pub fn leaky_relu(&mut self, input: Var, slope: f32) -> Var {
        let value = self.value(input).map(|v| if v > 0.0 { v } else { v * slope });
        let rg = self.rg(input);
        self.push(value, Op::LeakyRelu { input, slope }, rg)
    }

    fn check_same(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(usage!("{what}: shape {:?} vs {:?}", self.value(a).shape(), self.value(b).shape()));
        }
        Ok(())
    }

    fn both_scalars(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Option<f64> {
        match (self.nodes[a.0].scalar, self.nodes[b.0].scalar) {
            (Some(x), Some(y)) => Some(f(x, y)),
            _ => None,
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "add")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let s = self.both_scalars(a, b, |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push_full(value, s, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "sub")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let s = self.both_scalars(a, b, |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push_full(value, s, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "mul")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let s = self.both_scalars(a, b, |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push_full(value, s, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f32) -> Var {
        let value = self.value(a).map(|x| x * factor);
        let s = self.nodes[a.0].scalar.map(|x| x * factor as f64);
        let rg = self.rg(a);
        self.push_full(value, s, Op::Scale(a, factor), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f32::exp);
        let rg = self.rg(a);
        self.push(value, Op::Exp(a), rg)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f32::ln);
        let rg = self.rg(a);
        self.push(value, Op::Log(a), rg)
    }

    /// Clamp with zero gradient outside `[lo, hi]`.
    pub fn clamp(&mut self, input: Var, lo: f32, hi: f32) -> Var {
        let value = self.value(input).map(|v| v.clamp(lo, hi));
        let rg = self.rg(input);
        self.push(value, Op::Clamp { input, lo, hi }, rg)
    }

    /// Hard rounding to the latent support in the forward pass, identity in
    /// the backward pass (straight-through estimator).
    pub fn round_ste(&mut self, input: Var) -> Var {
        let value = self.value(input).map(round_latent);
        let rg = self.rg(input);
        self.push(value, Op::RoundSte(input), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum_f64();
        let rg = self.rg(a);
        self.push_full(Tensor::scalar(s as f32), Some(s), Op::Sum(a), rg)
    }

    /// Mean of squared differences, accumulated in `f64`.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let n = self.value(a).len().max(1);
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        let s = self.sum(sq);
        Ok(self.scale(s, 1.0 / n as f32))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ca, ha, wa) = self.value(a).chw();
        let (cb, hb, wb) = self.value(b).chw();
        if (ha, wa) != (hb, wb) {
            return Err(usage!("concat: spatial dims {ha}x{wa} vs {hb}x{wb}"));
        }
        let mut data = self.value(a).data().to_vec();
        data.extend_from_slice(self.value(b).data());
        let value = Tensor::new(&[ca + cb, ha, wa], data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Concat(a, b), rg))
    }

    pub fn slice_channels(&mut self, input: Var, start: usize, end: usize) -> Result<Var> {
        let (c, h, w) = self.value(input).chw();
        if start > end || end > c {
            return Err(usage!("channel slice {start}..{end} out of range for {c} channels"));
        }
        let data = self.value(input).data()[start * h * w..end * h * w].to_vec();
        let value = Tensor::new(&[end - start, h, w], data)?;
        let rg = self.rg(input);
        Ok(self.push(value, Op::SliceChannels { input, start }, rg))
    }

    /// Keeps the even rows and columns (nearest-neighbour downsampling by 2).
    pub fn subsample2(&mut self, input: Var) -> Var {
        let value = subsample2(self.value(input));
        let rg = self.rg(input);
        self.push(value, Op::Subsample2(input), rg)
    }

    /// Replicates each pixel over a 2×2 block and crops to `h×w`.
    pub fn upsample2(&mut self, input: Var, h: usize, w: usize) -> Result<Var> {
        let (_, ih, iw) = self.value(input).chw();
        if ih != h.div_ceil(2) || iw != w.div_ceil(2) {
            return Err(usage!("upsample2: {ih}x{iw} cannot produce {h}x{w}"));
        }
        let value = upsample2(self.value(input), h, w);
        let rg = self.rg(input);
        Ok(self.push(value, Op::Upsample2(input), rg))
    }

    /// Elementwise `if mask { a } else { b }`.
    pub fn select(&mut self, mask: Rc<Vec<bool>>, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "select")?;
        if mask.len() != self.value(a).len() {
            return Err(usage!("select mask has {} entries for {} values", mask.len(), self.value(a).len()));
        }
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let data = mask.iter().zip(va.iter().zip(vb)).map(|(&m, (&x, &y))| if m { x } else { y }).collect();
        let value = Tensor::new(self.value(a).shape(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Select { mask, a, b }, rg))
    }

    pub fn custom(&mut self, inputs: &[Var], output: Tensor, scalar: Option<f64>, op: Box<dyn CustomOp>) -> Var {
        let rg = inputs.iter().any(|&v| self.rg(v));
        self.push_full(output, scalar, Op::Custom { inputs: inputs.to_vec(), op }, rg)
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(usage!("backward needs a scalar loss, node {} has shape {:?}", loss.0, self.value(loss).shape()));
        }
        for (i, n) in self.nodes[..=loss.0].iter().enumerate() {
            if !n.value.all_finite() {
                return Err(numeric!("node {i} ({}) holds a non-finite value", n.op.name()));
            }
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            for (var, contrib) in self.local_grads(node, &g) {
                if !self.rg(var) {
                    continue;
                }
                match &mut grads[var.0] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn local_grads(&self, node: &Node, g: &Tensor) -> Vec<(Var, Tensor)> {
        let val = |v: Var| self.value(v);
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { input, kernel, bias, geom, c_out } => {
                let k = val(*kernel);
                if self.rg(*input) {
                    let gi = conv::conv2d_backward_input(g.data(), k.data(), *c_out, geom);
                    out.push((*input, Tensor::new(val(*input).shape(), gi).unwrap()));
                }
                if self.rg(*kernel) {
                    let gk = conv::conv2d_backward_kernel(g.data(), val(*input).data(), *c_out, geom);
                    out.push((*kernel, Tensor::new(k.shape(), gk).unwrap()));
                }
                if let Some(b) = bias.filter(|b| self.rg(*b)) {
                    out.push((b, Tensor::new(val(b).shape(), conv::bias_grad(g.data(), *c_out)).unwrap()));
                }
            }
            Op::ConvTranspose2d { input, kernel, bias, geom, c_in } => {
                let k = val(*kernel);
                if self.rg(*input) {
                    let gi = conv::conv2d_forward(g.data(), k.data(), None, *c_in, geom);
                    out.push((*input, Tensor::new(val(*input).shape(), gi).unwrap()));
                }
                if self.rg(*kernel) {
                    let gk = conv::conv2d_backward_kernel(val(*input).data(), g.data(), *c_in, geom);
                    out.push((*kernel, Tensor::new(k.shape(), gk).unwrap()));
                }
                if let Some(b) = bias.filter(|b| self.rg(*b)) {
                    let c_out = val(b).len();
                    out.push((b, Tensor::new(val(b).shape(), conv::bias_grad(g.data(), c_out)).unwrap()));
                }
            }
            Op::LeakyRelu { input, slope } => {
                let gi = g.zip_map(val(*input), |gv, x| if x > 0.0 { gv } else { gv * slope });
                out.push((*input, gi));
            }
            Op::Add(a, b) => {
                out.push((*a, g.clone()));
                out.push((*b, g.clone()));
            }
            Op::Sub(a, b) => {
                out.push((*a, g.clone()));
                out.push((*b, g.map(|v| -v)));
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    out.push((*a, g.zip_map(val(*b), |gv, y| gv * y)));
                }
                if self.rg(*b) {
                    out.push((*b, g.zip_map(val(*a), |gv, x| gv * x)));
                }
            }
            Op::Scale(a, f) => out.push((*a, g.map(|v| v * f))),
            Op::Exp(a) => out.push((*a, g.zip_map(&node.value, |gv, y| gv * y))),
            Op::Log(a) => out.push((*a, g.zip_map(val(*a), |gv, x| gv / x))),
            Op::Clamp { input, lo, hi } => {
                let gi = g.zip_map(val(*input), |gv, x| if x >= *lo && x <= *hi { gv } else { 0.0 });
                out.push((*input, gi));
            }
            Op::RoundSte(a) => out.push((*a, g.clone())),
            Op::Sum(a) => out.push((*a, Tensor::full(val(*a).shape(), g.data()[0]))),
            Op::Concat(a, b) => {
                let na = val(*a).len();
                let (ga, gb) = g.data().split_at(na);
                out.push((*a, Tensor::new(val(*a).shape(), ga.to_vec()).unwrap()));
                out.push((*b, Tensor::new(val(*b).shape(), gb.to_vec()).unwrap()));
            }
            Op::SliceChannels { input, start } => {
                let x = val(*input);
                let (_, h, w) = x.chw();
                let mut gi = Tensor::zeros(x.shape());
                gi.data_mut()[start * h * w..start * h * w + g.len()].copy_from_slice(g.data());
                out.push((*input, gi));
            }
            Op::Subsample2(a) => {
                let x = val(*a);
                let (c, h, w) = x.chw();
                let (sh, sw) = (h.div_ceil(2), w.div_ceil(2));
                let mut gi = Tensor::zeros(x.shape());
                for ch in 0..c {
                    for y in 0..sh {
                        for xx in 0..sw {
                            gi.set3(ch, 2 * y, 2 * xx, g.data()[(ch * sh + y) * sw + xx]);
                        }
                    }
                }
                out.push((*a, gi));
            }
            Op::Upsample2(a) => {
                let x = val(*a);
                let (c, ih, iw) = x.chw();
                let (_, h, w) = node.value.chw();
                let mut gi = vec![0.0f32; x.len()];
                for ch in 0..c {
                    for y in 0..h {
                        for xx in 0..w {
                            gi[(ch * ih + y / 2) * iw + xx / 2] += g.data()[(ch * h + y) * w + xx];
                        }
                    }
                }
                out.push((*a, Tensor::new(x.shape(), gi).unwrap()));
            }
            Op::Select { mask, a, b } => {
                let ga = g.data().iter().zip(mask.iter()).map(|(&v, &m)| if m { v } else { 0.0 }).collect();
                let gb = g.data().iter().zip(mask.iter()).map(|(&v, &m)| if m { 0.0 } else { v }).collect();
                out.push((*a, Tensor::new(g.shape(), ga).unwrap()));
                out.push((*b, Tensor::new(g.shape(), gb).unwrap()));
            }
            Op::Custom { inputs, op } => {
                let ins: Vec<&Tensor> = inputs.iter().map(|&v| val(v)).collect();
                for (v, gi) in inputs.iter().zip(op.backward(&ins, &node.value, g)) {
                    if let Some(gi) = gi {
                        out.push((*v, gi));
                    }
                }
            }
        }
        out
    }
}

pub fn subsample2(x: &Tensor) -> Tensor {
    let (c, h, w) = x.chw();
    let (sh, sw) = (h.div_ceil(2), w.div_ceil(2));
    let mut data = Vec::with_capacity(c * sh * sw);
    for ch in 0..c {
        for y in 0..sh {
            for xx in 0..sw {
                data.push(x.at3(ch, 2 * y, 2 * xx));
            }
        }
    }
    Tensor::new(&[c, sh, sw], data).unwrap()
}

pub fn upsample2(x: &Tensor, h: usize, w: usize) -> Tensor {
    let (c, _, _) = x.chw();
    let mut data = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for y in 0..h {
            for xx in 0..w {
                data.push(x.at3(ch, y / 2, xx / 2));
            }
        }
    }
    Tensor::new(&[c, h, w], data).unwrap()
}

/// Gradients produced by [`Graph::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Adds the gradient of every parameter leaf of `graph` into `store`.
    pub fn accumulate_params(&self, graph: &Graph, store: &mut GradStore) {
        for (node, g) in graph.nodes.iter().zip(&self.grads) {
            if let (Some(id), Some(g)) = (node.param, g) {
                store.accumulate(id, g);
            }
        }
    }
}

/// Binds parameters of a store to leaves of one graph, creating each leaf
/// once no matter how often the parameter is used.
pub struct Binder<'s> {
    store: &'s ParamStore,
    trainable: bool,
    vars: Vec<Option<Var>>,
}

impl<'s> Binder<'s> {
    /// With `trainable` false parameters become constants.
    pub fn new(store: &'s ParamStore, trainable: bool) -> Self {
        Self { store, trainable, vars: vec![None; store.len()] }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn var(&mut self, g: &mut Graph, id: ParamId) -> Var {
        if let Some(v) = self.vars[id.index()] {
            return v;
        }
        let v = if self.trainable { g.param(self.store, id) } else { g.frozen(self.store, id) };
        self.vars[id.index()] = Some(v);
        v
    }
}
