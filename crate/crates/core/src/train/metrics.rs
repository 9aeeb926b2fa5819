//! Image quality metrics.

use crate::error::{usage, Result};
use crate::tensor::Tensor;

fn check_same(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(usage!("images differ in shape: {:?} vs {:?}", a.shape(), b.shape()));
    }
    Ok(())
}

pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_same(a, b)?;
    let n = a.len().max(1) as f64;
    Ok(a.data().iter().zip(b.data()).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>() / n)
}

/// Peak signal-to-noise ratio for `[0, 1]` images; identical inputs give
/// `f64::INFINITY`.
pub fn psnr(a: &Tensor, b: &Tensor) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 { f64::INFINITY } else { -10.0 * m.log10() })
}

const MS_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
/// Smallest side that survives four halvings with an 11-pixel window.
pub const MS_SSIM_MIN_SIDE: usize = WINDOW << 4;

fn gaussian_window() -> [f64; WINDOW] {
    let mut g = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.map(|v| v / s)
}

/// Separable valid-mode filtering of an `h×w` plane.
fn blur(p: &[f64], h: usize, w: usize, g: &[f64; WINDOW]) -> (Vec<f64>, usize, usize) {
    let ow = w - WINDOW + 1;
    let oh = h - WINDOW + 1;
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = (0..WINDOW).map(|k| g[k] * p[r * w + c + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..WINDOW).map(|k| g[k] * rows[(r + k) * ow + c]).sum();
        }
    }
    (out, oh, ow)
}

/// Mean SSIM and mean contrast-structure term of one plane pair.
fn ssim_cs(x: &[f64], y: &[f64], h: usize, w: usize, g: &[f64; WINDOW]) -> (f64, f64) {
    const C1: f64 = 0.01 * 0.01;
    const C2: f64 = 0.03 * 0.03;
    let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
    let (mx, oh, ow) = blur(x, h, w, g);
    let (my, _, _) = blur(y, h, w, g);
    let (sxx, _, _) = blur(&prod(x, x), h, w, g);
    let (syy, _, _) = blur(&prod(y, y), h, w, g);
    let (sxy, _, _) = blur(&prod(x, y), h, w, g);
    let n = (oh * ow) as f64;
    let (mut ssim, mut cs) = (0.0, 0.0);
    for i in 0..oh * ow {
        let (vx, vy, cov) = (sxx[i] - mx[i] * mx[i], syy[i] - my[i] * my[i], sxy[i] - mx[i] * my[i]);
        let c = (2.0 * cov + C2) / (vx + vy + C2);
        cs += c;
        ssim += c * (2.0 * mx[i] * my[i] + C1) / (mx[i] * mx[i] + my[i] * my[i] + C1);
    }
    (ssim / n, cs / n)
}

fn pool2(p: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (p[2 * r * w + 2 * c] + p[2 * r * w + 2 * c + 1] + p[(2 * r + 1) * w + 2 * c] + p[(2 * r + 1) * w + 2 * c + 1]) / 4.0;
        }
    }
    (out, oh, ow)
}

/// Five-scale MS-SSIM for `[0, 1]` images, averaged over channels.
pub fn ms_ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_same(a, b)?;
    let (c, h, w) = a.chw();
    if h < MS_SSIM_MIN_SIDE || w < MS_SSIM_MIN_SIDE {
        return Err(usage!("MS-SSIM needs sides of at least {MS_SSIM_MIN_SIDE}, got {h}x{w}"));
    }
    let g = gaussian_window();
    let mut total = 0.0;
    for ch in 0..c {
        let plane = |t: &Tensor| t.data()[ch * h * w..(ch + 1) * h * w].iter().map(|&v| v as f64).collect::<Vec<_>>();
        let (mut x, mut y, mut hh, mut ww) = (plane(a), plane(b), h, w);
        let mut score = 1.0;
        for (s, &wt) in MS_WEIGHTS.iter().enumerate() {
            let (ssim, cs) = ssim_cs(&x, &y, hh, ww, &g);
            if s + 1 == MS_WEIGHTS.len() {
                score *= ssim.max(0.0).powf(wt);
            } else {
                score *= cs.max(0.0).powf(wt);
                let (px, ph, pw) = pool2(&x, hh, ww);
                y = pool2(&y, hh, ww).0;
                (x, hh, ww) = (px, ph, pw);
            }
        }
        total += score;
    }
    Ok(total / c as f64)
}
