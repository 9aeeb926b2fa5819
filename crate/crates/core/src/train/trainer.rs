//! Toy-scale training of the full model on `bits/pixel + λ·255²·MSE`.

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dataset::CropStream;
use crate::autodiff::{AdamState, Binder, GradStore, Graph};
use crate::codec::lof::DISTORTION_SCALE;
use crate::error::{usage, Result};
use crate::model::Model;
use crate::msp::{estimate_rate, Context};
use crate::tensor::Tensor;
use crate::transforms::{self, quantize, Quantizer};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub crop: usize,
    pub batch: usize,
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
    /// Save the model every this many steps (0 disables).
    pub checkpoint_every: usize,
    pub checkpoint: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { crop: 256, batch: 8, steps: 1000, lr: 1e-4, seed: 0, checkpoint_every: 0, checkpoint: None }
    }
}

impl TrainConfig {
    pub fn validate(&self, model: &Model) -> Result<()> {
        let m = model.profile().pad_multiple();
        if self.crop == 0 || !self.crop.is_multiple_of(m) {
            return Err(usage!("crop size {} must be a positive multiple of {m}", self.crop));
        }
        if self.batch == 0 {
            return Err(usage!("batch size must be positive"));
        }
        if !(self.lr > 0.0) {
            return Err(usage!("learning rate must be positive"));
        }
        Ok(())
    }
}

/// Loss terms of one batch, averaged over its images.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub loss: f64,
    pub bpp: f64,
    pub mse: f64,
}

/// Records the loss of one image with the given quantizer and context,
/// returning the loss node and its terms.
fn image_loss(g: &mut Graph, bind: &mut Binder, model: &Model, x: &Tensor, mode: Quantizer, context: Context, rng: &mut ChaCha8Rng) -> Result<(crate::autodiff::Var, LossTerms)> {
    let (_, h, w) = x.chw();
    let pixels = (h * w) as f64;
    let xv = g.constant(x.clone());
    let y = transforms::analyze(g, bind, &model.transforms, xv)?;
    let q = quantize(g, y, mode, rng)?;
    let rate = estimate_rate(g, bind, &model.prob, q, context)?;
    let xhat = transforms::synthesize_raw(g, bind, &model.transforms, q)?;
    let mse = g.mse(xhat, xv)?;
    let bpp = g.scale(rate.bits, (1.0 / pixels) as f32);
    let dist = g.scale(mse, (model.config.lambda * DISTORTION_SCALE) as f32);
    let loss = g.add(bpp, dist)?;
    let terms = LossTerms { loss: g.scalar(loss), bpp: g.scalar(rate.bits) / pixels, mse: g.scalar(mse) };
    Ok((loss, terms))
}

/// Mean loss over `images` with noise drawn from `seed`; no update.
pub fn evaluate_loss(model: &Model, images: &[Tensor], seed: u64, context: Context) -> Result<LossTerms> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = LossTerms::default();
    for x in images {
        let mut g = Graph::new();
        let mut bind = Binder::new(&model.store, false);
        let (_, t) = image_loss(&mut g, &mut bind, model, x, Quantizer::Noise, context, &mut rng)?;
        sum.loss += t.loss;
        sum.bpp += t.bpp;
        sum.mse += t.mse;
    }
    let n = images.len().max(1) as f64;
    Ok(LossTerms { loss: sum.loss / n, bpp: sum.bpp / n, mse: sum.mse / n })
}

pub struct Trainer<'a> {
    pub model: &'a mut Model,
    adam: AdamState,
    cfg: TrainConfig,
    noise: ChaCha8Rng,
    step: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(model: &'a mut Model, cfg: TrainConfig) -> Result<Self> {
        cfg.validate(model)?;
        let adam = AdamState::new(&model.store);
        let noise = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x005e_ed0f_a0a0);
        Ok(Self { model, adam, cfg, noise, step: 0 })
    }

    /// One Adam step on the batch mean loss.
    pub fn step(&mut self, batch: &[Tensor]) -> Result<LossTerms> {
        let mut grads = GradStore::new(&self.model.store);
        let mut sum = LossTerms::default();
        for x in batch {
            let mut g = Graph::new();
            let mut bind = Binder::new(&self.model.store, true);
            let (loss, t) = image_loss(&mut g, &mut bind, self.model, x, Quantizer::Noise, Context::Learned, &mut self.noise)?;
            g.backward(loss)?.accumulate_params(&g, &mut grads);
            sum.loss += t.loss;
            sum.bpp += t.bpp;
            sum.mse += t.mse;
        }
        let n = batch.len() as f64;
        grads.scale(1.0 / n as f32);
        self.adam.step(&mut self.model.store, &grads, self.cfg.lr)?;
        self.step += 1;
        if self.cfg.checkpoint_every > 0 && self.step.is_multiple_of(self.cfg.checkpoint_every) {
            if let Some(p) = &self.cfg.checkpoint {
                self.model.save(p)?;
            }
        }
        Ok(LossTerms { loss: sum.loss / n, bpp: sum.bpp / n, mse: sum.mse / n })
    }
}

/// Trains for `cfg.steps` steps on random crops and returns the per-step
/// batch losses. `progress` sees every step.
pub fn train(model: &mut Model, images: &[Tensor], cfg: &TrainConfig, mut progress: impl FnMut(usize, &LossTerms)) -> Result<Vec<LossTerms>> {
    let mut crops = CropStream::new(images, cfg.crop, cfg.seed)?;
    let mut trainer = Trainer::new(model, cfg.clone())?;
    let mut trace = Vec::with_capacity(cfg.steps);
    for k in 0..cfg.steps {
        let batch = crops.batch(cfg.batch);
        let t = trainer.step(&batch)?;
        progress(k, &t);
        trace.push(t);
    }
    Ok(trace)
}
