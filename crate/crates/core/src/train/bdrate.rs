//! Bjontegaard delta rate between two rate-distortion curves.

use crate::error::{usage, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RdPoint {
    pub bpp: f64,
    pub psnr: f64,
    pub ms_ssim: Option<f64>,
}

/// Least-squares cubic `ln(rate) ≈ Σ c_k (psnr - centre)^k`.
struct Fit {
    coef: [f64; 4],
    centre: f64,
}

impl Fit {
    fn new(curve: &[RdPoint]) -> Result<Self> {
        if curve.len() < 4 {
            return Err(usage!("BD-rate needs at least 4 points per curve, got {}", curve.len()));
        }
        if let Some(p) = curve.iter().find(|p| !(p.bpp > 0.0 && p.bpp.is_finite() && p.psnr.is_finite())) {
            return Err(usage!("invalid RD point bpp={} psnr={}", p.bpp, p.psnr));
        }
        let centre = curve.iter().map(|p| p.psnr).sum::<f64>() / curve.len() as f64;
        // normal equations on centred abscissae
        let mut a = [[0.0f64; 5]; 4];
        for p in curve {
            let x = p.psnr - centre;
            let pow = [1.0, x, x * x, x * x * x];
            for i in 0..4 {
                for j in 0..4 {
                    a[i][j] += pow[i] * pow[j];
                }
                a[i][4] += pow[i] * p.bpp.ln();
            }
        }
        let coef = solve4(a).ok_or_else(|| usage!("RD curve has fewer than 4 distinct quality values"))?;
        Ok(Self { coef, centre })
    }

    /// Integral of the cubic over `[lo, hi]`.
    fn integral(&self, lo: f64, hi: f64) -> f64 {
        let prim = |x: f64| {
            let x = x - self.centre;
            (0..4).map(|k| self.coef[k] * x.powi(k as i32 + 1) / (k + 1) as f64).sum::<f64>()
        };
        prim(hi) - prim(lo)
    }
}

/// Gaussian elimination with partial pivoting on an augmented 4×5 system.
fn solve4(mut a: [[f64; 5]; 4]) -> Option<[f64; 4]> {
    for col in 0..4 {
        let piv = (col..4).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        for r in 0..4 {
            if r != col {
                let f = a[r][col] / a[col][col];
                for k in col..5 {
                    a[r][k] -= f * a[col][k];
                }
            }
        }
    }
    Some(std::array::from_fn(|i| a[i][4] / a[i][i]))
}

/// Average rate difference of `test` against `anchor` at equal PSNR, in
/// percent; negative means `test` needs fewer bits.
pub fn bd_rate(anchor: &[RdPoint], test: &[RdPoint]) -> Result<f64> {
    let (fa, ft) = (Fit::new(anchor)?, Fit::new(test)?);
    let range = |c: &[RdPoint]| c.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.psnr), hi.max(p.psnr)));
    let (alo, ahi) = range(anchor);
    let (tlo, thi) = range(test);
    let (lo, hi) = (alo.max(tlo), ahi.min(thi));
    if hi <= lo {
        return Err(usage!("RD curves do not overlap in PSNR ({alo:.3}..{ahi:.3} vs {tlo:.3}..{thi:.3})"));
    }
    let avg = (ft.integral(lo, hi) - fa.integral(lo, hi)) / (hi - lo);
    Ok((avg.exp() - 1.0) * 100.0)
}
