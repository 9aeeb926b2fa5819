//! RD curve CSV files and JSON evaluation reports.

use serde::{Deserialize, Serialize};

use super::bdrate::RdPoint;
use crate::error::{format_err, Result};

/// One `bpp,psnr[,msssim]` line per point, with an optional header line.
pub fn parse_curve(text: &str) -> Result<Vec<RdPoint>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || (n == 0 && line.starts_with("bpp")) {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        let num = |s: &str| s.parse::<f64>().map_err(|_| format_err!("line {}: {s:?} is not a number", n + 1));
        let point = match f.len() {
            2 => RdPoint { bpp: num(f[0])?, psnr: num(f[1])?, ms_ssim: None },
            3 => RdPoint { bpp: num(f[0])?, psnr: num(f[1])?, ms_ssim: Some(num(f[2])?) },
            k => return Err(format_err!("line {}: expected 2 or 3 fields, got {k}", n + 1)),
        };
        out.push(point);
    }
    Ok(out)
}

pub fn write_curve(points: &[RdPoint]) -> String {
    let with_ssim = points.iter().all(|p| p.ms_ssim.is_some()) && !points.is_empty();
    let mut s = String::from(if with_ssim { "bpp,psnr,msssim\n" } else { "bpp,psnr\n" });
    for p in points {
        match (with_ssim, p.ms_ssim) {
            (true, Some(m)) => s.push_str(&format!("{:.6},{:.4},{:.6}\n", p.bpp, p.psnr, m)),
            _ => s.push_str(&format!("{:.6},{:.4}\n", p.bpp, p.psnr)),
        }
    }
    s
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ImageReport {
    pub name: String,
    pub width: usize,
    pub height: usize,
    pub bpp: f64,
    /// `None` for a lossless reconstruction.
    pub psnr: Option<f64>,
    pub ms_ssim: Option<f64>,
    pub encode_seconds: f64,
    pub decode_seconds: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    pub profile: String,
    pub lambda: f64,
    pub images: Vec<ImageReport>,
    pub mean_bpp: f64,
    pub mean_psnr: f64,
    pub mean_ms_ssim: Option<f64>,
}

impl EvalReport {
    pub fn new(profile: String, lambda: f64, images: Vec<ImageReport>) -> Self {
        let n = images.len().max(1) as f64;
        let mean_bpp = images.iter().map(|i| i.bpp).sum::<f64>() / n;
        let finite: Vec<f64> = images.iter().filter_map(|i| i.psnr).collect();
        let mean_psnr = finite.iter().sum::<f64>() / finite.len().max(1) as f64;
        let ssim: Vec<f64> = images.iter().filter_map(|i| i.ms_ssim).collect();
        let mean_ms_ssim = (!ssim.is_empty()).then(|| ssim.iter().sum::<f64>() / ssim.len() as f64);
        Self { profile, lambda, images, mean_bpp, mean_psnr, mean_ms_ssim }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// The report's mean operating point.
    pub fn point(&self) -> RdPoint {
        RdPoint { bpp: self.mean_bpp, psnr: self.mean_psnr, ms_ssim: self.mean_ms_ssim }
    }
}
