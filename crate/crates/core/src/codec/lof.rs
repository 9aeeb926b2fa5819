//! Latent overfitting: gradient search over the continuous latent of one
//! image with every network frozen.

use std::rc::Rc;

use crate::autodiff::{AdamState, Binder, Graph, GradStore, ParamStore, Var};
use crate::error::{usage, Result};
use crate::model::Model;
use crate::msp::{estimate_rate, Context};
use crate::tensor::Tensor;
use crate::transforms::{self, quantize_latent, Quantizer};

/// Squared-error weight on the 8-bit pixel scale, so `λ` matches the
/// usual rate ladder.
pub const DISTORTION_SCALE: f64 = 255.0 * 255.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LofConfig {
    pub lr: f64,
    pub decay: f64,
    pub patience: usize,
    pub min_lr: f64,
    pub max_iters: usize,
    /// `None` uses the model's training λ.
    pub lambda: Option<f64>,
}

impl Default for LofConfig {
    fn default() -> Self {
        Self { lr: 0.1, decay: 0.5, patience: 20, min_lr: 1e-3, max_iters: 2000, lambda: None }
    }
}

impl LofConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(usage!("decay must lie in (0, 1), got {}", self.decay));
        }
        if self.patience == 0 {
            return Err(usage!("patience must be at least 1"));
        }
        if !(self.min_lr > 0.0 && self.min_lr < self.lr) {
            return Err(usage!("need 0 < min lr < lr, got {} and {}", self.min_lr, self.lr));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct LofResult {
    /// Rounded best latent.
    pub latent: Tensor,
    /// Loss of the rounded analysis latent.
    pub initial_loss: f64,
    pub best_loss: f64,
    /// Best loss after every iteration, starting with `initial_loss`.
    pub trace: Vec<f64>,
    pub iterations: usize,
}

/// Per-image RD objective `bits / pixels + λ·255²·MSE` on the original
/// `h×w` region of a padded image. With `hard` the latent is rounded with
/// the straight-through estimator; otherwise it is used as is.
pub fn rd_objective(g: &mut Graph, bind: &mut Binder, model: &Model, x: &Tensor, dims: (usize, usize), y: Var, lambda: f64, hard: bool) -> Result<Var> {
    let (h, w) = dims;
    let (_, ph, pw) = x.chw();
    let q = if hard { g.round_ste(y) } else { y };
    let rate = estimate_rate(g, bind, &model.prob, q, Context::Learned)?;
    let xhat = transforms::synthesize(g, bind, &model.transforms, q)?;
    let xv = g.constant(x.clone());
    let diff = g.sub(xhat, xv)?;
    let region: Vec<bool> = (0..3 * ph * pw).map(|i| (i / pw) % ph < h && i % pw < w).collect();
    let zeros = g.constant(Tensor::zeros(&[3, ph, pw]));
    let diff = g.select(Rc::new(region), diff, zeros)?;
    let sq = g.mul(diff, diff)?;
    let sse = g.sum(sq);
    let pixels = (h * w) as f64;
    let bpp = g.scale(rate.bits, (1.0 / pixels) as f32);
    let dist = g.scale(sse, (lambda * DISTORTION_SCALE / (3.0 * pixels)) as f32);
    g.add(bpp, dist)
}

/// Hard-rounded objective of an integer latent.
pub fn rd_loss(model: &Model, x: &Tensor, dims: (usize, usize), latent: &Tensor, lambda: f64) -> Result<f64> {
    let mut g = Graph::new();
    let mut bind = Binder::new(&model.store, false);
    let y = g.constant(latent.clone());
    let l = rd_objective(&mut g, &mut bind, model, x, dims, y, lambda, true)?;
    Ok(g.scalar(l))
}

/// Greedy search: Adam on the latent with a large step, remembering the
/// best hard-rounded loss. After `patience` iterations without improvement
/// the latent is rewound to the best state and the step shrinks by
/// `decay`; the search ends once the step falls below `min_lr`.
pub fn overfit_latent(model: &Model, x: &Tensor, dims: (usize, usize), cfg: &LofConfig) -> Result<LofResult> {
    cfg.validate()?;
    let lambda = cfg.lambda.unwrap_or(model.config.lambda);
    let start = model.analyze(x)?;
    let mut store = ParamStore::new();
    let id = store.insert("latent", start.clone());
    let mut adam = AdamState::new(&store);
    let mut best = start;
    let mut best_loss = f64::INFINITY;
    let mut initial_loss = f64::NAN;
    let mut trace = Vec::new();
    let mut lr = cfg.lr;
    let mut stale = 0;
    let mut iterations = 0;
    // one extra evaluation scores the starting point
    for it in 0..=cfg.max_iters {
        let mut g = Graph::new();
        let mut bind = Binder::new(&model.store, false);
        let y = g.param(&store, id);
        let loss = rd_objective(&mut g, &mut bind, model, x, dims, y, lambda, true)?;
        let value = g.scalar(loss);
        let grads = if value.is_finite() { g.backward(loss).ok() } else { None };
        if it == 0 {
            initial_loss = value;
        }
        let Some(grads) = grads else {
            // diverged: go back to the best point with a smaller step
            *store.get_mut(id) = best.clone();
            lr *= cfg.decay;
            adam = AdamState::new(&store);
            stale = 0;
            trace.push(best_loss);
            if lr < cfg.min_lr {
                break;
            }
            continue;
        };
        if value < best_loss {
            best_loss = value;
            best = store.get(id).clone();
            stale = 0;
        } else {
            stale += 1;
        }
        trace.push(best_loss);
        if it == cfg.max_iters {
            break;
        }
        iterations += 1;
        if stale >= cfg.patience {
            *store.get_mut(id) = best.clone();
            lr *= cfg.decay;
            adam = AdamState::new(&store);
            stale = 0;
            if lr < cfg.min_lr {
                break;
            }
            continue;
        }
        let mut gs = GradStore::new(&store);
        grads.accumulate_params(&g, &mut gs);
        if adam.step(&mut store, &gs, lr).is_err() {
            *store.get_mut(id) = best.clone();
            lr *= cfg.decay;
            adam = AdamState::new(&store);
            stale = 0;
            if lr < cfg.min_lr {
                break;
            }
        }
    }
    Ok(LofResult { latent: quantize_latent(&best, Quantizer::Round)?, initial_loss, best_loss, trace, iterations })
}
