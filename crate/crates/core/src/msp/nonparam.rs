//! Per-channel non-parametric density for the last scale.
//!
//! The cumulative is `sigmoid(f(x))` where `f` chains four affine maps with
//! softplus-positive matrices (widths 1→3→3→3→1), the first three followed
//! by `z + tanh(a)·tanh(z)`. Every factor keeps `f` nondecreasing.

use rand::Rng;

use super::gaussian::{ALPHABET, LIKELIHOOD_FLOOR};
use crate::autodiff::{CustomOp, Graph, ParamId, ParamStore, Var, LATENT_MAX, LATENT_MIN};
use crate::error::{config, usage, Result};
use crate::tensor::Tensor;

const WIDTHS: [usize; 5] = [1, 3, 3, 3, 1];
const LAYERS: usize = 4;
/// Initial logistic scale; density near zero starts around 1/256.
const INIT_SCALE: f64 = 64.0;

/// Parameter ids of the density model inside a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct NonParamIds {
    pub matrices: [ParamId; LAYERS],
    pub biases: [ParamId; LAYERS],
    pub factors: [ParamId; LAYERS - 1],
}

impl NonParamIds {
    pub fn all(&self) -> Vec<ParamId> {
        self.matrices.iter().chain(&self.biases).chain(&self.factors).copied().collect()
    }

    pub fn lookup(store: &ParamStore) -> Result<Self> {
        let get = |n: String| store.id(&n).ok_or_else(|| config!("weights lack {n}"));
        Ok(Self {
            matrices: [get(mat(0))?, get(mat(1))?, get(mat(2))?, get(mat(3))?],
            biases: [get(bias(0))?, get(bias(1))?, get(bias(2))?, get(bias(3))?],
            factors: [get(fac(0))?, get(fac(1))?, get(fac(2))?],
        })
    }
}

fn mat(k: usize) -> String {
    format!("h_s.matrix{k}")
}
fn bias(k: usize) -> String {
    format!("h_s.bias{k}")
}
fn fac(k: usize) -> String {
    format!("h_s.factor{k}")
}

pub fn init_params<R: Rng + ?Sized>(store: &mut ParamStore, channels: usize, rng: &mut R) -> NonParamIds {
    let scale = INIT_SCALE.powf(1.0 / LAYERS as f64);
    let mut matrices = Vec::new();
    let mut biases = Vec::new();
    let mut factors = Vec::new();
    for k in 0..LAYERS {
        let (fin, fout) = (WIDTHS[k], WIDTHS[k + 1]);
        let init = (1.0 / scale / fout as f64).exp_m1().ln() as f32;
        matrices.push(store.insert(mat(k), Tensor::full(&[channels, fout, fin], init)));
        biases.push(store.insert(bias(k), Tensor::uniform(&[channels, fout], -0.5, 0.5, rng)));
        if k < LAYERS - 1 {
            factors.push(store.insert(fac(k), Tensor::zeros(&[channels, fout])));
        }
    }
    NonParamIds {
        matrices: matrices.try_into().unwrap(),
        biases: biases.try_into().unwrap(),
        factors: factors.try_into().unwrap(),
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Evaluation-ready copy of one channel's parameters.
#[derive(Clone, Debug)]
struct ChannelFn {
    /// softplus of the raw matrices, `[layer][out][in]` flattened per layer.
    weights: [Vec<f64>; LAYERS],
    raw_weights: [Vec<f64>; LAYERS],
    biases: [Vec<f64>; LAYERS],
    /// tanh of the raw factors.
    factors: [Vec<f64>; LAYERS - 1],
    raw_factors: [Vec<f64>; LAYERS - 1],
}

struct LayerCache {
    input: Vec<f64>,
    pre: Vec<f64>,
}

#[derive(Default)]
struct ChannelGrad {
    weights: [Vec<f64>; LAYERS],
    biases: [Vec<f64>; LAYERS],
    factors: [Vec<f64>; LAYERS - 1],
}

impl ChannelFn {
    fn from_tensors(ch: usize, m: &[&Tensor; LAYERS], b: &[&Tensor; LAYERS], f: &[&Tensor; LAYERS - 1]) -> Self {
        let slice = |t: &Tensor, n: usize| -> Vec<f64> { t.data()[ch * n..(ch + 1) * n].iter().map(|&v| v as f64).collect() };
        let raw_weights: [Vec<f64>; LAYERS] = std::array::from_fn(|k| slice(m[k], WIDTHS[k] * WIDTHS[k + 1]));
        let raw_factors: [Vec<f64>; LAYERS - 1] = std::array::from_fn(|k| slice(f[k], WIDTHS[k + 1]));
        Self {
            weights: std::array::from_fn(|k| raw_weights[k].iter().map(|&v| softplus(v)).collect()),
            biases: std::array::from_fn(|k| slice(b[k], WIDTHS[k + 1])),
            factors: std::array::from_fn(|k| raw_factors[k].iter().map(|v| v.tanh()).collect()),
            raw_weights,
            raw_factors,
        }
    }

    fn logit(&self, x: f64) -> f64 {
        self.forward(x, None)
    }

    fn forward(&self, x: f64, mut cache: Option<&mut Vec<LayerCache>>) -> f64 {
        let mut v = vec![x];
        for k in 0..LAYERS {
            let (fin, fout) = (WIDTHS[k], WIDTHS[k + 1]);
            let mut z: Vec<f64> = (0..fout)
                .map(|o| self.biases[k][o] + (0..fin).map(|i| self.weights[k][o * fin + i] * v[i]).sum::<f64>())
                .collect();
            if let Some(c) = cache.as_deref_mut() {
                c.push(LayerCache { input: v.clone(), pre: z.clone() });
            }
            if k < LAYERS - 1 {
                for (zo, a) in z.iter_mut().zip(&self.factors[k]) {
                    *zo += a * zo.tanh();
                }
            }
            v = z;
        }
        v[0]
    }

    /// Accumulates `d/dparams` scaled by `up` and returns `d logit / dx · up`.
    fn backward(&self, cache: &[LayerCache], up: f64, grad: &mut ChannelGrad) -> f64 {
        let mut g_out = vec![up];
        for k in (0..LAYERS).rev() {
            let (fin, fout) = (WIDTHS[k], WIDTHS[k + 1]);
            let LayerCache { input, pre } = &cache[k];
            let mut g_z = g_out.clone();
            if k < LAYERS - 1 {
                for o in 0..fout {
                    let t = pre[o].tanh();
                    let a = self.factors[k][o];
                    grad.factors[k][o] += g_out[o] * t * (1.0 - a * a);
                    g_z[o] = g_out[o] * (1.0 + a * (1.0 - t * t));
                }
            }
            let mut g_in = vec![0.0; fin];
            for o in 0..fout {
                grad.biases[k][o] += g_z[o];
                for i in 0..fin {
                    let idx = o * fin + i;
                    grad.weights[k][idx] += g_z[o] * input[i] * sigmoid(self.raw_weights[k][idx]);
                    g_in[i] += self.weights[k][idx] * g_z[o];
                }
            }
            g_out = g_in;
        }
        let _ = &self.raw_factors;
        g_out[0]
    }
}

impl ChannelGrad {
    fn zeros() -> Self {
        Self {
            weights: std::array::from_fn(|k| vec![0.0; WIDTHS[k] * WIDTHS[k + 1]]),
            biases: std::array::from_fn(|k| vec![0.0; WIDTHS[k + 1]]),
            factors: std::array::from_fn(|k| vec![0.0; WIDTHS[k + 1]]),
        }
    }
}

/// Probability of the bin around `v` given the logits at its two edges;
/// `None` marks a folded tail.
fn bin_mass(lo: Option<f64>, hi: Option<f64>) -> f64 {
    match (lo, hi) {
        (None, None) => 1.0,
        (None, Some(u)) => sigmoid(u),
        (Some(l), None) => sigmoid(-l),
        (Some(l), Some(u)) => {
            // evaluate on the side where the sigmoid is not saturated
            let s = if l + u > 0.0 { -1.0 } else { 1.0 };
            (sigmoid(s * u) - sigmoid(s * l)).abs()
        }
    }
}

/// The density model of all channels.
#[derive(Clone, Debug)]
pub struct NonParametric {
    channels: Vec<ChannelFn>,
}

impl NonParametric {
    pub fn from_store(store: &ParamStore, ids: &NonParamIds) -> Result<Self> {
        let m: [&Tensor; LAYERS] = std::array::from_fn(|k| store.get(ids.matrices[k]));
        let b: [&Tensor; LAYERS] = std::array::from_fn(|k| store.get(ids.biases[k]));
        let f: [&Tensor; LAYERS - 1] = std::array::from_fn(|k| store.get(ids.factors[k]));
        Self::from_tensors(&m, &b, &f)
    }

    fn from_tensors(m: &[&Tensor; LAYERS], b: &[&Tensor; LAYERS], f: &[&Tensor; LAYERS - 1]) -> Result<Self> {
        let c = m[0].shape().first().copied().unwrap_or(0);
        for k in 0..LAYERS {
            let (fin, fout) = (WIDTHS[k], WIDTHS[k + 1]);
            if m[k].len() != c * fin * fout || b[k].len() != c * fout || (k < LAYERS - 1 && f[k].len() != c * fout) {
                return Err(config!("density model layer {k} has inconsistent parameter sizes"));
            }
        }
        Ok(Self { channels: (0..c).map(|ch| ChannelFn::from_tensors(ch, m, b, f)).collect() })
    }

    pub fn channels(&self) -> usize {
        self.channels.len()
    }

    /// Cumulative distribution of channel `ch` at `x`.
    pub fn cumulative(&self, ch: usize, x: f64) -> f64 {
        sigmoid(self.channels[ch].logit(x))
    }

    fn edge_logits(&self, ch: usize, v: f64) -> (Option<f64>, Option<f64>) {
        let f = &self.channels[ch];
        let lo = (v > LATENT_MIN as f64).then(|| f.logit(v - 0.5));
        let hi = (v < LATENT_MAX as f64).then(|| f.logit(v + 0.5));
        (lo, hi)
    }

    /// Folded probability of symbol `v` in channel `ch`.
    pub fn pmf(&self, ch: usize, v: i32) -> f64 {
        let (lo, hi) = self.edge_logits(ch, v as f64);
        bin_mass(lo, hi)
    }

    /// All 256 symbol probabilities of channel `ch`, index `v + 127`.
    pub fn pmf_table(&self, ch: usize) -> [f64; ALPHABET] {
        let f = &self.channels[ch];
        let edges: Vec<f64> = (0..ALPHABET - 1).map(|k| f.logit(LATENT_MIN as f64 + k as f64 + 0.5)).collect();
        let mut t = [0.0; ALPHABET];
        for (k, p) in t.iter_mut().enumerate() {
            let lo = (k > 0).then(|| edges[k - 1]);
            let hi = (k < ALPHABET - 1).then(|| edges[k]);
            *p = bin_mass(lo, hi);
        }
        t
    }

    /// `-log2` probability of value `v` in channel `ch`, floored like the
    /// Gaussian likelihood.
    pub fn bits(&self, ch: usize, v: f64) -> f64 {
        let (lo, hi) = self.edge_logits(ch, v);
        -bin_mass(lo, hi).max(LIKELIHOOD_FLOOR).log2()
    }

    /// Total bits of a `c×h×w` tensor of last-scale values (positive).
    pub fn total_bits(&self, values: &Tensor) -> f64 {
        let (c, h, w) = values.chw();
        let n = h * w;
        (0..c).map(|ch| values.data()[ch * n..(ch + 1) * n].iter().map(|&v| self.bits(ch, v as f64)).sum::<f64>()).sum()
    }
}

/// Differentiable total bits of the last-scale values under the density
/// model whose parameter leaves are `params` (ordered as [`NonParamIds::all`]).
pub fn last_scale_bits_op(g: &mut Graph, values: Var, params: &[Var]) -> Result<Var> {
    if params.len() != 3 * LAYERS - 1 {
        return Err(usage!("density model needs {} parameter tensors, got {}", 3 * LAYERS - 1, params.len()));
    }
    let model = {
        let m: [&Tensor; LAYERS] = std::array::from_fn(|k| g.value(params[k]));
        let b: [&Tensor; LAYERS] = std::array::from_fn(|k| g.value(params[LAYERS + k]));
        let f: [&Tensor; LAYERS - 1] = std::array::from_fn(|k| g.value(params[2 * LAYERS + k]));
        NonParametric::from_tensors(&m, &b, &f)?
    };
    let (c, _, _) = g.value(values).chw();
    if c != model.channels() {
        return Err(config!("density model has {} channels, latent has {c}", model.channels()));
    }
    let total = model.total_bits(g.value(values));
    let mut inputs = vec![values];
    inputs.extend_from_slice(params);
    Ok(g.custom(&inputs, Tensor::scalar(total as f32), Some(total), Box::new(LastScaleBits { model })))
}

struct LastScaleBits {
    model: NonParametric,
}

impl CustomOp for LastScaleBits {
    fn name(&self) -> &'static str {
        "last_scale_bits"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let values = inputs[0];
        let (c, h, w) = values.chw();
        let n = h * w;
        let up = grad.data()[0] as f64;
        let mut gv = Tensor::zeros(values.shape());
        let mut grads: Vec<ChannelGrad> = (0..c).map(|_| ChannelGrad::zeros()).collect();
        for ch in 0..c {
            let f = &self.model.channels[ch];
            for i in 0..n {
                let v = values.data()[ch * n + i] as f64;
                let mut lc = Vec::new();
                let mut uc = Vec::new();
                let lo = (v > LATENT_MIN as f64).then(|| f.forward(v - 0.5, Some(&mut lc)));
                let hi = (v < LATENT_MAX as f64).then(|| f.forward(v + 0.5, Some(&mut uc)));
                let p = bin_mass(lo, hi);
                if p < LIKELIHOOD_FLOOR {
                    continue;
                }
                // p = σ(u) − σ(l) with folded terms dropped
                let k = -up / (p * std::f64::consts::LN_2);
                let mut dx = 0.0;
                if let Some(u) = hi {
                    let s = sigmoid(u);
                    dx += f.backward(&uc, k * s * (1.0 - s), &mut grads[ch]);
                }
                if let Some(l) = lo {
                    let s = sigmoid(l);
                    dx += f.backward(&lc, -k * s * (1.0 - s), &mut grads[ch]);
                }
                gv.data_mut()[ch * n + i] = dx as f32;
            }
        }
        let mut out = vec![Some(gv)];
        let pack = |sel: &dyn Fn(&ChannelGrad) -> &Vec<f64>, shape: &[usize]| {
            let data = grads.iter().flat_map(|g| sel(g).iter().map(|&v| v as f32)).collect();
            Some(Tensor::new(shape, data).unwrap())
        };
        for k in 0..LAYERS {
            out.push(pack(&|g| &g.weights[k], inputs[1 + k].shape()));
        }
        for k in 0..LAYERS {
            out.push(pack(&|g| &g.biases[k], inputs[1 + LAYERS + k].shape()));
        }
        for k in 0..LAYERS - 1 {
            out.push(pack(&|g| &g.factors[k], inputs[1 + 2 * LAYERS + k].shape()));
        }
        out
    }
}
