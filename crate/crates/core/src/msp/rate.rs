//! Differentiable rate of a latent under the MSP model, evaluated unit by
//! unit in decode order.

use std::rc::Rc;

use rand::Rng;

use super::gaussian::gaussian_bits_op;
use super::hp::{self, HpIds};
use super::mixture::coarse_mask;
use super::nonparam::{self, last_scale_bits_op, NonParamIds};
use super::profile::MspProfile;
use super::schedule::{build_schedule, DecodingUnit};
use crate::autodiff::{Binder, Graph, ParamStore, Var};
use crate::error::{config, Result};
use crate::tensor::Tensor;

/// How Gaussian parameters are obtained for the scales below the last.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Context {
    /// The trained parameter network.
    Learned,
    /// No-context ablation: `μ = ȳ`, `σ = 1`.
    Fixed,
}

/// Parameter handles of the whole probability model.
#[derive(Clone, Debug)]
pub struct ProbabilityModel {
    pub profile: MspProfile,
    pub hp: HpIds,
    pub hs: NonParamIds,
}

impl ProbabilityModel {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, profile: MspProfile, channels: usize, rng: &mut R) -> Self {
        let hp = hp::init_params(store, channels, profile.filters(), rng);
        let hs = nonparam::init_params(store, channels, rng);
        Self { profile, hp, hs }
    }

    pub fn lookup(store: &ParamStore, profile: MspProfile) -> Result<Self> {
        Ok(Self { profile, hp: HpIds::lookup(store)?, hs: NonParamIds::lookup(store)? })
    }

    pub fn channels(&self, store: &ParamStore) -> usize {
        self.hp.channels(store)
    }
}

pub fn unit_label(u: &DecodingUnit) -> String {
    if u.subgroup == 0 {
        format!("last scale {}", u.scale)
    } else {
        format!("scale {} subgroup {} channels {}..{}", u.scale, u.subgroup, u.channels.start, u.channels.end)
    }
}

pub struct RateEstimate {
    /// Total bits, differentiable.
    pub bits: Var,
    /// Bits of every schedule unit in decode order.
    pub unit_bits: Vec<f64>,
    /// Number of probability evaluations (last-scale model included).
    pub passes: usize,
}

/// Records the rate of `y` (`c×h×w`, noisy or integer) on `g`.
pub fn estimate_rate(g: &mut Graph, bind: &mut Binder, model: &ProbabilityModel, y: Var, context: Context) -> Result<RateEstimate> {
    let (c, h, w) = g.value(y).chw();
    let expected = model.channels(bind.store());
    if c != expected {
        return Err(config!("probability model expects {expected} channels, latent has {c}"));
    }
    let sched = build_schedule(&model.profile, c, h, w)?;
    let s = model.profile.scales();
    let mut grids = vec![y];
    for i in 0..s {
        let next = g.subsample2(grids[i]);
        grids.push(next);
    }
    let hs: Vec<Var> = model.hs.all().into_iter().map(|id| bind.var(g, id)).collect();
    let mut total = last_scale_bits_op(g, grids[s], &hs)?;
    let mut unit_bits = vec![g.scalar(total)];
    let mut passes = 1;
    let mut current: Option<(usize, Var, Tensor)> = None;
    for unit in &sched.units[1..] {
        let i = unit.scale;
        let (gh, gw) = sched.dims[i];
        let (_, mut ybar, mut mask) = match current.take() {
            Some(st) if st.0 == i => st,
            _ => (i, g.upsample2(grids[i + 1], gh, gw)?, coarse_mask(c, gh, gw)),
        };
        let (mu, sigma) = match context {
            Context::Learned => {
                let m = g.constant(mask.clone());
                hp::predict_params(g, bind, &model.hp, ybar, m, &unit_label(unit))?
            }
            Context::Fixed => (ybar, g.constant(Tensor::full(&[c, gh, gw], 1.0))),
        };
        passes += 1;
        let um = Rc::new(unit.mask(c, gh, gw));
        let bits = gaussian_bits_op(g, grids[i], mu, sigma, um.clone())?;
        unit_bits.push(g.scalar(bits));
        total = g.add(total, bits)?;
        ybar = g.select(um.clone(), grids[i], ybar)?;
        for (m, &on) in mask.data_mut().iter_mut().zip(um.iter()) {
            if on {
                *m = 1.0;
            }
        }
        current = Some((i, ybar, mask));
    }
    Ok(RateEstimate { bits: total, unit_bits, passes })
}
