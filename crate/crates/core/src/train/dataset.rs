//! Image folders as reproducible streams of random crops, plus a
//! procedural image generator for corpora without real photographs.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{usage, Result};
use crate::io::load_image;
use crate::tensor::Tensor;

pub struct Dataset {
    pub images: Vec<Tensor>,
    pub paths: Vec<PathBuf>,
    /// Files that could not be decoded, with the reason.
    pub skipped: Vec<(PathBuf, String)>,
}

fn is_image(p: &Path) -> bool {
    matches!(p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(), Some("png" | "ppm" | "pnm"))
}

/// Loads every PNG/PPM in `dir` (sorted by name). Unreadable files are
/// skipped and logged.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_file() && is_image(p)).collect();
    files.sort();
    let mut ds = Dataset { images: Vec::new(), paths: Vec::new(), skipped: Vec::new() };
    for f in files {
        match load_image(&f) {
            Ok(t) => {
                ds.images.push(t);
                ds.paths.push(f);
            }
            Err(e) => {
                log::warn!("skipping {}: {e}", f.display());
                ds.skipped.push((f, e.to_string()));
            }
        }
    }
    if ds.images.is_empty() {
        return Err(usage!("no readable PNG/PPM images in {}", dir.display()));
    }
    if !ds.skipped.is_empty() {
        log::warn!("{} of {} files skipped", ds.skipped.len(), ds.skipped.len() + ds.images.len());
    }
    Ok(ds)
}

/// Random `size×size` crop; smaller images are replicate-padded first.
pub fn random_crop<R: Rng + ?Sized>(img: &Tensor, size: usize, rng: &mut R) -> Tensor {
    let (c, h, w) = img.chw();
    let (ph, pw) = (h.max(size), w.max(size));
    let mut src = img.clone();
    if (ph, pw) != (h, w) {
        src = Tensor::zeros(&[c, ph, pw]);
        for ch in 0..c {
            for r in 0..ph {
                for col in 0..pw {
                    src.set3(ch, r, col, img.at3(ch, r.min(h - 1), col.min(w - 1)));
                }
            }
        }
    }
    let (r0, c0) = (rng.gen_range(0..=ph - size), rng.gen_range(0..=pw - size));
    let mut out = Tensor::zeros(&[c, size, size]);
    for ch in 0..c {
        for r in 0..size {
            for col in 0..size {
                out.set3(ch, r, col, src.at3(ch, r0 + r, c0 + col));
            }
        }
    }
    out
}

/// Endless, seed-reproducible stream of crops drawn uniformly over images.
pub struct CropStream<'a> {
    images: &'a [Tensor],
    size: usize,
    rng: ChaCha8Rng,
}

impl<'a> CropStream<'a> {
    pub fn new(images: &'a [Tensor], size: usize, seed: u64) -> Result<Self> {
        if images.is_empty() {
            return Err(usage!("crop stream needs at least one image"));
        }
        Ok(Self { images, size, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    pub fn batch(&mut self, n: usize) -> Vec<Tensor> {
        (0..n).map(|_| self.next().unwrap()).collect()
    }
}

impl Iterator for CropStream<'_> {
    type Item = Tensor;

    fn next(&mut self) -> Option<Tensor> {
        let k = self.rng.gen_range(0..self.images.len());
        Some(random_crop(&self.images[k], self.size, &mut self.rng))
    }
}

/// A procedural RGB image: smooth colour gradients, a few flat shapes with
/// soft edges, a periodic texture and mild noise.
pub fn synthetic_image(width: usize, height: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: [[f32; 3]; 3] = std::array::from_fn(|_| std::array::from_fn(|_| rng.gen_range(0.1..0.9)));
    let shapes: Vec<(f32, f32, f32, [f32; 3], bool)> = (0..rng.gen_range(2..6))
        .map(|_| {
            (
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.08..0.35),
                std::array::from_fn(|_| rng.gen_range(0.0..1.0)),
                rng.gen_bool(0.5),
            )
        })
        .collect();
    let (fx, fy, amp) = (rng.gen_range(2.0..12.0f32), rng.gen_range(2.0..12.0f32), rng.gen_range(0.0..0.08f32));
    let noise = rng.gen_range(0.0..0.03f32);
    let mut t = Tensor::zeros(&[3, height, width]);
    for r in 0..height {
        let v = r as f32 / height.max(1) as f32;
        for col in 0..width {
            let u = col as f32 / width.max(1) as f32;
            let mut px: [f32; 3] = std::array::from_fn(|c| base[0][c] * (1.0 - u) + base[1][c] * u * (1.0 - v) + base[2][c] * u * v);
            for &(cx, cy, rad, color, round) in &shapes {
                let d = if round { ((u - cx).powi(2) + (v - cy).powi(2)).sqrt() } else { (u - cx).abs().max((v - cy).abs()) };
                let a = ((rad - d) * 60.0).clamp(0.0, 1.0);
                for c in 0..3 {
                    px[c] = px[c] * (1.0 - a) + color[c] * a;
                }
            }
            let tex = amp * ((u * fx * std::f32::consts::TAU).sin() * (v * fy * std::f32::consts::TAU).cos());
            for (c, p) in px.iter().enumerate() {
                let n = noise * rng.gen_range(-1.0..1.0f32);
                t.set3(c, r, col, (p + tex + n).clamp(0.0, 1.0));
            }
        }
    }
    t
}

/// Writes `count` synthetic PNGs named `img_NNNN.png` into `dir`.
pub fn write_synthetic_corpus(dir: &Path, count: usize, width: usize, height: usize, seed: u64) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    (0..count)
        .map(|k| {
            let p = dir.join(format!("img_{k:04}.png"));
            crate::io::save_png(&p, &synthetic_image(width, height, seed.wrapping_mul(1_000_003).wrapping_add(k as u64)))?;
            Ok(p)
        })
        .collect()
}
