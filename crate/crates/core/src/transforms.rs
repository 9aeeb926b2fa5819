//! Analysis and synthesis transforms and the quantizer.

use rand::Rng;

use crate::autodiff::{round_latent, Binder, Graph, ParamId, ParamStore, Var};
use crate::error::{config, usage, Result};
use crate::tensor::Tensor;

const STAGES: usize = 4;
const KERNEL: usize = 5;
const SLOPE: f32 = 0.2;

/// Spatial downsampling factor of the analysis transform.
pub const DOWNSAMPLE: usize = 1 << STAGES;

#[derive(Clone, Debug)]
pub struct TransformIds {
    pub analysis: [(ParamId, ParamId); STAGES],
    pub synthesis: [(ParamId, ParamId); STAGES],
}

fn names(prefix: &str, k: usize) -> (String, String) {
    (format!("{prefix}{k}.weight"), format!("{prefix}{k}.bias"))
}

fn he_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let gain = (2.0 / (1.0 + SLOPE * SLOPE)).sqrt();
    let bound = gain * (3.0 / fan_in as f32).sqrt();
    Tensor::uniform(shape, -bound, bound, rng)
}

/// `filters` hidden channels, `channels` latent channels. The last
/// synthesis bias starts at 0.5 so an untrained decoder outputs mid-gray.
pub fn init_params<R: Rng + ?Sized>(store: &mut ParamStore, channels: usize, filters: usize, rng: &mut R) -> TransformIds {
    let k2 = KERNEL * KERNEL;
    let enc = [3, filters, filters, filters, channels];
    let analysis = std::array::from_fn(|k| {
        let (wn, bn) = names("g_a.conv", k);
        let w = he_uniform(&[enc[k + 1], enc[k], KERNEL, KERNEL], enc[k] * k2, rng);
        (store.insert(wn, w), store.insert(bn, Tensor::zeros(&[enc[k + 1]])))
    });
    let dec = [channels, filters, filters, filters, 3];
    let synthesis = std::array::from_fn(|k| {
        let (wn, bn) = names("g_s.deconv", k);
        // each output pixel of a stride-2 transpose conv sees a quarter of the taps
        let fan_in = dec[k] * k2 / 4;
        let w = he_uniform(&[dec[k], dec[k + 1], KERNEL, KERNEL], fan_in, rng);
        let b = if k == STAGES - 1 { Tensor::full(&[3], 0.5) } else { Tensor::zeros(&[dec[k + 1]]) };
        (store.insert(wn, w), store.insert(bn, b))
    });
    TransformIds { analysis, synthesis }
}

impl TransformIds {
    pub fn lookup(store: &ParamStore) -> Result<Self> {
        let get = |(w, b): (String, String)| -> Result<(ParamId, ParamId)> {
            let id = |n: &String| store.id(n).ok_or_else(|| config!("weights lack {n}"));
            Ok((id(&w)?, id(&b)?))
        };
        let mut analysis = Vec::new();
        let mut synthesis = Vec::new();
        for k in 0..STAGES {
            analysis.push(get(names("g_a.conv", k))?);
            synthesis.push(get(names("g_s.deconv", k))?);
        }
        Ok(Self { analysis: analysis.try_into().unwrap(), synthesis: synthesis.try_into().unwrap() })
    }

    pub fn latent_channels(&self, store: &ParamStore) -> usize {
        store.get(self.synthesis[0].0).shape()[0]
    }

    pub fn all(&self) -> Vec<ParamId> {
        self.analysis.iter().chain(&self.synthesis).flat_map(|&(w, b)| [w, b]).collect()
    }
}

/// `g_a`: `3×H×W` image to `c×H/16×W/16` continuous latent.
pub fn analyze(g: &mut Graph, bind: &mut Binder, ids: &TransformIds, x: Var) -> Result<Var> {
    let (c, h, w) = g.value(x).chw();
    if c != 3 || h % DOWNSAMPLE != 0 || w % DOWNSAMPLE != 0 || h == 0 || w == 0 {
        return Err(usage!("analysis needs a padded 3-channel image with sides divisible by {DOWNSAMPLE}, got {c}x{h}x{w}"));
    }
    let mut v = x;
    for (k, &(wid, bid)) in ids.analysis.iter().enumerate() {
        let (kw, kb) = (bind.var(g, wid), bind.var(g, bid));
        v = g.conv2d(v, kw, Some(kb), 2, KERNEL / 2)?;
        if k + 1 < STAGES {
            v = g.leaky_relu(v, SLOPE);
        }
    }
    Ok(v)
}

/// `g_s` without the final clamp (the training path).
pub fn synthesize_raw(g: &mut Graph, bind: &mut Binder, ids: &TransformIds, y: Var) -> Result<Var> {
    let c = g.value(y).chw().0;
    let expected = ids.latent_channels(bind.store());
    if c != expected {
        return Err(config!("synthesis expects {expected} latent channels, got {c}"));
    }
    let mut v = y;
    for (k, &(wid, bid)) in ids.synthesis.iter().enumerate() {
        let (kw, kb) = (bind.var(g, wid), bind.var(g, bid));
        v = g.conv2d_transpose(v, kw, Some(kb), 2, KERNEL / 2, 1)?;
        if k + 1 < STAGES {
            v = g.leaky_relu(v, SLOPE);
        }
    }
    Ok(v)
}

/// `g_s` followed by a clamp to `[0, 1]`.
pub fn synthesize(g: &mut Graph, bind: &mut Binder, ids: &TransformIds, y: Var) -> Result<Var> {
    let v = synthesize_raw(g, bind, ids, y)?;
    Ok(g.clamp(v, 0.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Quantizer {
    /// Nearest integer, ties away from zero, clamped to the latent support.
    Round,
    /// Additive uniform noise in `[-0.5, 0.5)`; training only.
    Noise,
    /// Rounding forward, identity backward.
    StraightThrough,
}

/// Applies `mode` on the graph. `Noise` draws from `rng`.
pub fn quantize<R: Rng + ?Sized>(g: &mut Graph, y: Var, mode: Quantizer, rng: &mut R) -> Result<Var> {
    Ok(match mode {
        Quantizer::Round => {
            let r = g.value(y).map(round_latent);
            g.constant(r)
        }
        Quantizer::Noise => {
            let n = Tensor::uniform(g.value(y).shape(), -0.5, 0.5, rng);
            let n = g.constant(n);
            g.add(y, n)?
        }
        Quantizer::StraightThrough => g.round_ste(y),
    })
}

/// Deterministic quantization for coding; noise is rejected.
pub fn quantize_latent(y: &Tensor, mode: Quantizer) -> Result<Tensor> {
    match mode {
        Quantizer::Noise => Err(usage!("additive-noise quantization is training-only; coding needs a deterministic quantizer")),
        Quantizer::Round | Quantizer::StraightThrough => Ok(y.map(round_latent)),
    }
}
