//! Discretized Gaussian likelihood over the latent alphabet.
//!
//! The normal CDF is evaluated through W. J. Cody's rational Chebyshev
//! approximation of `erfc` (CALERF, 1969) in `f64`. Only `+ - * /` and
//! `exp` are used, so both ends of the codec compute the same tables.

#![allow(clippy::excessive_precision)]

use std::rc::Rc;

use crate::autodiff::{CustomOp, Graph, Var, LATENT_MAX, LATENT_MIN};
use crate::error::{usage, Result};
use crate::tensor::Tensor;

pub const SIGMA_MIN: f32 = 0.04;
pub const SIGMA_MAX: f32 = 256.0;

/// Number of symbols in the latent alphabet `-127..=128`.
pub const ALPHABET: usize = 256;

/// Probabilities below this are raised to it when counting bits. It equals
/// the smallest probability the 16-bit coder can represent.
pub const LIKELIHOOD_FLOOR: f64 = 1.0 / 65536.0;

const A: [f64; 5] = [
    3.161_123_743_870_565_5,
    1.138_641_541_510_501_6e2,
    3.774_852_376_853_02e2,
    3.209_377_589_138_469_4e3,
    1.857_777_061_846_031_5e-1,
];
const B: [f64; 4] = [2.360_129_095_234_412_2e1, 2.440_246_379_344_441_7e2, 1.282_616_526_077_372_3e3, 2.844_236_833_439_171e3];
const C: [f64; 9] = [
    5.641_884_969_886_701e-1,
    8.883_149_794_388_377,
    6.611_919_063_714_163e1,
    2.986_351_381_974_001e2,
    8.819_522_212_417_69e2,
    1.712_047_612_634_070_7e3,
    2.051_078_377_826_071_6e3,
    1.230_339_354_797_997_2e3,
    2.153_115_354_744_038_3e-8,
];
const D: [f64; 8] = [
    1.574_492_611_070_983_5e1,
    1.176_939_508_913_125e2,
    5.371_811_018_620_099e2,
    1.621_389_574_566_690_3e3,
    3.290_799_235_733_459_7e3,
    4.362_619_090_143_247e3,
    3.439_367_674_143_721_6e3,
    1.230_339_354_803_749_5e3,
];
const P: [f64; 6] = [
    3.053_266_349_612_323_6e-1,
    3.603_448_999_498_044_5e-1,
    1.257_817_261_112_292_6e-1,
    1.608_378_514_874_227_5e-2,
    6.587_491_615_298_378e-4,
    1.631_538_713_730_209_7e-2,
];
const Q: [f64; 5] = [2.568_520_192_289_822, 1.872_952_849_923_467_3, 5.279_051_029_514_285e-1, 6.051_834_131_244_132e-2, 2.335_204_976_268_691_8e-3];
const FRAC_1_SQRT_PI: f64 = 5.641_895_835_477_563e-1;

/// Complementary error function.
pub fn erfc(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    let y = x.abs();
    if y <= 0.46875 {
        let ysq = if y > 1.11e-16 { y * y } else { 0.0 };
        let mut num = A[4] * ysq;
        let mut den = ysq;
        for i in 0..3 {
            num = (num + A[i]) * ysq;
            den = (den + B[i]) * ysq;
        }
        return 1.0 - x * (num + A[3]) / (den + B[3]);
    }
    let r = if y <= 4.0 {
        let mut num = C[8] * y;
        let mut den = y;
        for i in 0..7 {
            num = (num + C[i]) * y;
            den = (den + D[i]) * y;
        }
        let r = (num + C[7]) / (den + D[7]);
        scaled_exp(y) * r
    } else if y >= 26.543 {
        0.0
    } else {
        let ysq = 1.0 / (y * y);
        let mut num = P[5] * ysq;
        let mut den = ysq;
        for i in 0..4 {
            num = (num + P[i]) * ysq;
            den = (den + Q[i]) * ysq;
        }
        let r = ysq * (num + P[4]) / (den + Q[4]);
        scaled_exp(y) * (FRAC_1_SQRT_PI - r) / y
    };
    if x < 0.0 {
        2.0 - r
    } else {
        r
    }
}

/// `exp(-y²)` split to keep precision for large `y`.
fn scaled_exp(y: f64) -> f64 {
    let ysq = (y * 16.0).trunc() / 16.0;
    let del = (y - ysq) * (y + ysq);
    (-ysq * ysq).exp() * (-del).exp()
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * std::f64::consts::FRAC_1_SQRT_2)
}

fn normal_pdf(z: f64) -> f64 {
    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Standardized integration bounds of the bin around `v`; `None` marks a
/// tail folded into an edge symbol.
fn bounds(v: f64, mu: f64, sigma: f64) -> (Option<f64>, Option<f64>) {
    let lo = (v > LATENT_MIN as f64).then(|| (v - 0.5 - mu) / sigma);
    let hi = (v < LATENT_MAX as f64).then(|| (v + 0.5 - mu) / sigma);
    (lo, hi)
}

fn mass(lo: Option<f64>, hi: Option<f64>) -> f64 {
    match (lo, hi) {
        // upper tail: difference of survival functions keeps precision
        (Some(l), _) if l > 0.0 => normal_cdf(-l) - hi.map_or(0.0, |u| normal_cdf(-u)),
        _ => hi.map_or(1.0, normal_cdf) - lo.map_or(0.0, normal_cdf),
    }
}

/// Probability of integer symbol `v` under `N(mu, sigma²)` integrated over
/// `[v-0.5, v+0.5]`, with both tails folded into the edge symbols.
pub fn discrete_gaussian_pmf(v: i32, mu: f64, sigma: f64) -> f64 {
    let (lo, hi) = bounds(v as f64, mu, sigma);
    mass(lo, hi).max(0.0)
}

/// Probabilities of all 256 symbols, index `v + 127`.
pub fn gaussian_pmf_table(mu: f64, sigma: f64) -> [f64; ALPHABET] {
    let mut t = [0.0; ALPHABET];
    for (i, p) in t.iter_mut().enumerate() {
        *p = discrete_gaussian_pmf(i as i32 + LATENT_MIN as i32, mu, sigma);
    }
    t
}

/// `-log2` likelihood of a (possibly non-integer) value, floored at
/// [`LIKELIHOOD_FLOOR`].
pub fn gaussian_bits(v: f64, mu: f64, sigma: f64) -> f64 {
    let (lo, hi) = bounds(v, mu, sigma);
    -mass(lo, hi).max(LIKELIHOOD_FLOOR).log2()
}

/// Sum of [`gaussian_bits`] over the masked elements; differentiable in
/// values, means and scales.
pub fn gaussian_bits_op(g: &mut Graph, values: Var, mu: Var, sigma: Var, mask: Rc<Vec<bool>>) -> Result<Var> {
    let (y, m, s) = (g.value(values), g.value(mu), g.value(sigma));
    if y.shape() != m.shape() || y.shape() != s.shape() || mask.len() != y.len() {
        return Err(usage!("gaussian likelihood: shapes {:?}, {:?}, {:?}, mask {}", y.shape(), m.shape(), s.shape(), mask.len()));
    }
    let mut total = 0.0f64;
    for (i, _) in mask.iter().enumerate().filter(|(_, &on)| on) {
        total += gaussian_bits(y.data()[i] as f64, m.data()[i] as f64, s.data()[i] as f64);
    }
    Ok(g.custom(&[values, mu, sigma], Tensor::scalar(total as f32), Some(total), Box::new(GaussianBits { mask })))
}

struct GaussianBits {
    mask: Rc<Vec<bool>>,
}

impl CustomOp for GaussianBits {
    fn name(&self) -> &'static str {
        "gaussian_bits"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let (y, mu, sigma) = (inputs[0], inputs[1], inputs[2]);
        let up = grad.data()[0] as f64;
        let mut gy = Tensor::zeros(y.shape());
        let mut gm = Tensor::zeros(y.shape());
        let mut gs = Tensor::zeros(y.shape());
        for (i, _) in self.mask.iter().enumerate().filter(|(_, &on)| on) {
            let (v, m, s) = (y.data()[i] as f64, mu.data()[i] as f64, sigma.data()[i] as f64);
            let (lo, hi) = bounds(v, m, s);
            let p = mass(lo, hi);
            if p < LIKELIHOOD_FLOOR {
                continue;
            }
            let (pl, zl) = lo.map_or((0.0, 0.0), |l| (normal_pdf(l), l));
            let (pu, zu) = hi.map_or((0.0, 0.0), |u| (normal_pdf(u), u));
            // d(-log2 p) = -dp / (p ln 2)
            let k = -up / (p * std::f64::consts::LN_2);
            let dp_dv = (pu - pl) / s;
            let dp_ds = (-zu * pu + zl * pl) / s;
            gy.data_mut()[i] = (k * dp_dv) as f32;
            gm.data_mut()[i] = (-k * dp_dv) as f32;
            gs.data_mut()[i] = (k * dp_ds) as f32;
        }
        vec![Some(gy), Some(gm), Some(gs)]
    }
}
