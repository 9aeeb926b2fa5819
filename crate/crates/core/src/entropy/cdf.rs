//! 16-bit cumulative frequency tables built from model probabilities.

use crate::error::{coding, Result};
use crate::msp::gaussian::ALPHABET;

pub const PRECISION: u32 = 16;
pub const TOTAL: u32 = 1 << PRECISION;

/// Cumulative counts `cum[0] = 0 < cum[1] < … < cum[256] = 2^16`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CdfTable {
    cum: [u32; ALPHABET + 1],
}

impl CdfTable {
    /// Validates explicit cumulative counts.
    pub fn from_cumulative(cum: [u32; ALPHABET + 1]) -> Result<Self> {
        if cum[0] != 0 || cum[ALPHABET] != TOTAL {
            return Err(coding!("cumulative table must run from 0 to {TOTAL}"));
        }
        if let Some(k) = (0..ALPHABET).find(|&k| cum[k + 1] <= cum[k]) {
            return Err(coding!("symbol {k} has zero width"));
        }
        Ok(Self { cum })
    }

    pub fn start(&self, symbol: usize) -> u32 {
        self.cum[symbol]
    }

    pub fn width(&self, symbol: usize) -> u32 {
        self.cum[symbol + 1] - self.cum[symbol]
    }

    /// The symbol whose interval contains `value < 2^16`.
    pub fn find(&self, value: u32) -> usize {
        // last k with cum[k] <= value
        self.cum.partition_point(|&c| c <= value) - 1
    }

    /// Bits the coder spends on `symbol`: `-log2(width / 2^16)`.
    pub fn cost(&self, symbol: usize) -> f64 {
        PRECISION as f64 - (self.width(symbol) as f64).log2()
    }
}

/// Scales `pmf` to integer counts summing to `2^16` (largest remainders
/// get the leftover counts), then gives every empty symbol one count taken
/// from the currently largest bin.
pub fn quantize_cdf(pmf: &[f64; ALPHABET]) -> Result<CdfTable> {
    if let Some(k) = pmf.iter().position(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(coding!("probability of symbol {k} is {}", pmf[k]));
    }
    let sum: f64 = pmf.iter().sum();
    if sum <= 0.0 {
        return Err(coding!("probability table is all zero"));
    }
    let mut widths = [0u32; ALPHABET];
    let mut rems = [0.0f64; ALPHABET];
    let mut used = 0u32;
    for k in 0..ALPHABET {
        let scaled = pmf[k] / sum * TOTAL as f64;
        let w = (scaled.floor() as u32).min(TOTAL);
        widths[k] = w;
        rems[k] = scaled - w as f64;
        used += w;
    }
    if used < TOTAL {
        let mut order: Vec<usize> = (0..ALPHABET).collect();
        // stable sort keeps lower symbols first among equal remainders
        order.sort_by(|&a, &b| rems[b].total_cmp(&rems[a]));
        for &k in order.iter().take((TOTAL - used) as usize) {
            widths[k] += 1;
        }
    } else {
        // rounding of the normalisation can overshoot by a few counts
        let mut extra = used - TOTAL;
        while extra > 0 {
            let k = argmax(&widths);
            widths[k] -= 1;
            extra -= 1;
        }
    }
    for k in 0..ALPHABET {
        if widths[k] == 0 {
            let donor = argmax(&widths);
            widths[donor] -= 1;
            widths[k] = 1;
        }
    }
    let mut cum = [0u32; ALPHABET + 1];
    for k in 0..ALPHABET {
        cum[k + 1] = cum[k] + widths[k];
    }
    CdfTable::from_cumulative(cum)
}

fn argmax(w: &[u32]) -> usize {
    let mut best = 0;
    for (k, &v) in w.iter().enumerate() {
        if v > w[best] {
            best = k;
        }
    }
    best
}
