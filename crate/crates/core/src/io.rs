//! Image files to `3×H×W` tensors in `[0, 1]` and back.

use std::path::Path;

use image::RgbImage;

use crate::error::{usage, Result};
use crate::tensor::Tensor;

/// Loads a PNG or binary PPM (anything the image decoder recognises).
pub fn load_image(path: &Path) -> Result<Tensor> {
    let img = image::open(path)?.to_rgb8();
    Ok(from_rgb(&img))
}

pub fn from_rgb(img: &RgbImage) -> Tensor {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            data[(c * h + y as usize) * w + x as usize] = px[c] as f32 / 255.0;
        }
    }
    Tensor::new(&[3, h, w], data).unwrap()
}

/// Rounds to 8 bits after clamping to `[0, 1]`.
pub fn to_rgb(t: &Tensor) -> Result<RgbImage> {
    let (c, h, w) = t.chw();
    if c != 3 {
        return Err(usage!("expected a 3-channel image, got {c} channels"));
    }
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        image::Rgb(std::array::from_fn(|ch| (t.at3(ch, y as usize, x as usize).clamp(0.0, 1.0) * 255.0).round() as u8))
    }))
}

pub fn save_png(path: &Path, t: &Tensor) -> Result<()> {
    to_rgb(t)?.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}
