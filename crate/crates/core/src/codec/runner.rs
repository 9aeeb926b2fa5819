//! Walks the decode schedule once, shared by the encoder and the decoder so
//! both sides build identical probability tables.

use std::time::Instant;

use super::SymbolCoder;
use crate::entropy::{quantize_cdf, CdfTable};
use crate::error::Result;
use crate::model::Model;
use crate::msp::gaussian::{gaussian_bits, gaussian_pmf_table, LIKELIHOOD_FLOOR};
use crate::msp::hp::predict_tensors;
use crate::msp::nonparam::NonParametric;
use crate::msp::rate::unit_label;
use crate::msp::{build_schedule, init_mixture, Context};
use crate::tensor::Tensor;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunStats {
    /// Model estimate `Σ -log2 p` over all coded symbols.
    pub estimated_bits: f64,
    /// Probability model evaluations, the last-scale model included.
    pub passes: usize,
    /// Fingerprint of the mixture state before every unit that uses one.
    pub trace: Vec<u64>,
    /// Wall time of every unit in schedule order, the last-scale unit first.
    pub unit_seconds: Vec<f64>,
}

const OFFSET: f32 = 127.0;

/// Codes every element of `latent` (`c×h×w`) in schedule order. The
/// encoder passes the true latent; the decoder passes zeros and gets the
/// decoded values written in place.
pub fn run_schedule(model: &Model, latent: &mut Tensor, coder: &mut dyn SymbolCoder, context: Context) -> Result<RunStats> {
    let (c, h, w) = latent.chw();
    let profile = model.profile();
    let sched = build_schedule(&profile, c, h, w)?;
    let s = profile.scales();
    let mut stats = RunStats::default();
    let mut clock = Instant::now();

    let hs = NonParametric::from_store(&model.store, &model.prob.hs)?;
    let last = sched.last_unit();
    let step = 1usize << s;
    for ch in last.channels.clone() {
        let pmf = hs.pmf_table(ch);
        let table = quantize_cdf(&pmf)?;
        for &(r, col) in &last.positions {
            let (fr, fc) = (r * step, col * step);
            let sym = coder.code(&table, symbol_of(latent.at3(ch, fr, fc)))?;
            latent.set3(ch, fr, fc, sym as f32 - OFFSET);
            stats.estimated_bits += -pmf[sym].max(LIKELIHOOD_FLOOR).log2();
        }
    }
    stats.passes = 1;
    stats.unit_seconds.push(clock.elapsed().as_secs_f64());

    let mut state = None;
    let mut state_scale = usize::MAX;
    for unit in &sched.units[1..] {
        clock = Instant::now();
        let i = unit.scale;
        let (gh, gw) = sched.dims[i];
        let step = 1usize << i;
        if state_scale != i {
            let coarse = grid(latent, i + 1, sched.dims[i + 1]);
            state = Some(init_mixture(&coarse, gh, gw)?);
            state_scale = i;
        }
        let st = state.as_mut().unwrap();
        stats.trace.push(st.fingerprint());
        let (mu, sigma) = match context {
            Context::Learned => predict_tensors(&model.store, &model.prob.hp, st, &unit_label(unit))?,
            Context::Fixed => (st.ybar.clone(), Tensor::full(st.ybar.shape(), 1.0)),
        };
        stats.passes += 1;
        for ch in unit.channels.clone() {
            for &(r, col) in &unit.positions {
                let (m, sd) = (mu.at3(ch, r, col) as f64, sigma.at3(ch, r, col) as f64);
                let table: CdfTable = quantize_cdf(&gaussian_pmf_table(m, sd))?;
                let (fr, fc) = (r * step, col * step);
                let sym = coder.code(&table, symbol_of(latent.at3(ch, fr, fc)))?;
                let v = sym as f32 - OFFSET;
                latent.set3(ch, fr, fc, v);
                stats.estimated_bits += gaussian_bits(v as f64, m, sd);
                st.ybar.set3(ch, r, col, v);
                st.mask.set3(ch, r, col, 1.0);
            }
        }
        stats.unit_seconds.push(clock.elapsed().as_secs_f64());
    }
    Ok(stats)
}

fn symbol_of(v: f32) -> usize {
    (v + OFFSET).clamp(0.0, 255.0) as usize
}

/// Values of the scale-`i` grid (every `2^i`-th row and column).
fn grid(latent: &Tensor, i: usize, (gh, gw): (usize, usize)) -> Tensor {
    let c = latent.chw().0;
    let step = 1 << i;
    let mut t = Tensor::zeros(&[c, gh, gw]);
    for ch in 0..c {
        for r in 0..gh {
            for col in 0..gw {
                t.set3(ch, r, col, latent.at3(ch, r * step, col * step));
            }
        }
    }
    t
}
