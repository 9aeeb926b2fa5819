//! Encode and decode pipelines, padding, and latent overfitting.

pub mod lof;
mod runner;

use std::time::Instant;

pub use lof::{overfit_latent, LofConfig, LofResult};
pub use runner::{run_schedule, RunStats};

use crate::entropy::bitstream::{parse_bitstream, serialize_bitstream, Header};
use crate::entropy::{CdfTable, RangeDecoder, RangeEncoder};
use crate::error::{format_err, usage, Error, Result};
use crate::model::{lambda_index, Model};
use crate::msp::Context;
use crate::tensor::Tensor;
use crate::transforms::{quantize_latent, Quantizer, DOWNSAMPLE};

/// One symbol step of the range coder; the encoder writes `symbol`, the
/// decoder ignores it and returns what it reads.
pub trait SymbolCoder {
    fn code(&mut self, table: &CdfTable, symbol: usize) -> Result<usize>;
}

impl SymbolCoder for RangeEncoder {
    fn code(&mut self, table: &CdfTable, symbol: usize) -> Result<usize> {
        self.encode(table, symbol);
        Ok(symbol)
    }
}

impl SymbolCoder for RangeDecoder<'_> {
    fn code(&mut self, table: &CdfTable, _symbol: usize) -> Result<usize> {
        self.decode(table)
    }
}

/// Replicates the last row and column until both sides are multiples of
/// `multiple`.
pub fn pad_image(x: &Tensor, multiple: usize) -> Tensor {
    let (c, h, w) = x.chw();
    let (ph, pw) = (h.div_ceil(multiple) * multiple, w.div_ceil(multiple) * multiple);
    if (ph, pw) == (h, w) {
        return x.clone();
    }
    let mut out = Tensor::zeros(&[c, ph, pw]);
    for ch in 0..c {
        for r in 0..ph {
            for col in 0..pw {
                out.set3(ch, r, col, x.at3(ch, r.min(h - 1), col.min(w - 1)));
            }
        }
    }
    out
}

/// Top-left `h×w` region.
pub fn crop_image(x: &Tensor, h: usize, w: usize) -> Tensor {
    let (c, xh, xw) = x.chw();
    assert!(h <= xh && w <= xw, "crop {h}x{w} exceeds {xh}x{xw}");
    let mut data = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for r in 0..h {
            let start = (ch * xh + r) * xw;
            data.extend_from_slice(&x.data()[start..start + w]);
        }
    }
    Tensor::new(&[c, h, w], data).unwrap()
}

#[derive(Clone, Debug)]
pub struct Encoded {
    pub bytes: Vec<u8>,
    /// The coded integer latent.
    pub latent: Tensor,
    pub stats: RunStats,
    pub payload_bytes: usize,
    /// Payload bits per original pixel.
    pub bpp: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct Decoded {
    pub image: Tensor,
    pub latent: Tensor,
    pub stats: RunStats,
    pub seconds: f64,
}

/// Quantizes the analysis of the padded image (or the LOF result) and
/// codes it.
pub fn encode_image(model: &Model, x: &Tensor, lof: Option<&LofConfig>) -> Result<Encoded> {
    let start = Instant::now();
    let (c, h, w) = x.chw();
    if c != 3 || h == 0 || w == 0 {
        return Err(usage!("expected a non-empty 3-channel image, got {c}x{h}x{w}"));
    }
    let padded = pad_image(x, model.profile().pad_multiple());
    let latent = match lof {
        Some(cfg) => overfit_latent(model, &padded, (h, w), cfg)?.latent,
        None => quantize_latent(&model.analyze(&padded)?, Quantizer::Round)?,
    };
    let mut enc = encode_latent(model, &latent, w, h, Context::Learned)?;
    enc.seconds = start.elapsed().as_secs_f64();
    Ok(enc)
}

/// Codes an integer latent for an image of `width×height` original pixels.
pub fn encode_latent(model: &Model, latent: &Tensor, width: usize, height: usize, context: Context) -> Result<Encoded> {
    let start = Instant::now();
    let (c, lh, lw) = latent.chw();
    let m = model.profile().pad_multiple();
    if lh * DOWNSAMPLE != height.div_ceil(m) * m || lw * DOWNSAMPLE != width.div_ceil(m) * m {
        return Err(usage!("latent {lh}x{lw} does not belong to a {width}x{height} image"));
    }
    if c != model.config.channels {
        return Err(usage!("latent has {c} channels, model codes {}", model.config.channels));
    }
    let narrow = |v: usize, what: &str| u16::try_from(v).map_err(|_| usage!("{what} {v} does not fit the header"));
    let header = Header {
        profile: model.profile().id(),
        width: u32::try_from(width).map_err(|_| usage!("width {width} too large"))?,
        height: u32::try_from(height).map_err(|_| usage!("height {height} too large"))?,
        channels: narrow(c, "channel count")?,
        latent_h: narrow(lh, "latent height")?,
        latent_w: narrow(lw, "latent width")?,
        lambda_index: lambda_index(model.config.lambda),
        digest: model.digest(),
    };
    let mut coded = quantize_latent(latent, Quantizer::Round)?;
    let mut encoder = RangeEncoder::new();
    let stats = run_schedule(model, &mut coded, &mut encoder, context)?;
    let payload = encoder.finish();
    let bytes = serialize_bitstream(&header, &payload);
    Ok(Encoded {
        bpp: payload.len() as f64 * 8.0 / (width * height) as f64,
        payload_bytes: payload.len(),
        latent: coded,
        stats,
        bytes,
        seconds: start.elapsed().as_secs_f64(),
    })
}

pub fn decode_image(model: &Model, bytes: &[u8]) -> Result<Decoded> {
    decode_with(model, bytes, Context::Learned)
}

pub fn decode_with(model: &Model, bytes: &[u8], context: Context) -> Result<Decoded> {
    let start = Instant::now();
    let (header, payload) = parse_bitstream(bytes)?;
    let digest = model.digest();
    if header.digest != digest {
        return Err(Error::WrongModel { expected: header.digest, actual: digest });
    }
    if header.profile != model.profile().id() {
        return Err(format_err!("bitstream profile {} does not match the model's {}", header.profile, model.profile().id()));
    }
    let (w, h) = (header.width as usize, header.height as usize);
    let m = model.profile().pad_multiple();
    let (lh, lw) = (header.latent_h as usize, header.latent_w as usize);
    if w == 0 || h == 0 || lh * DOWNSAMPLE != h.div_ceil(m) * m || lw * DOWNSAMPLE != w.div_ceil(m) * m {
        return Err(format_err!("header latent {lh}x{lw} is inconsistent with a {w}x{h} image"));
    }
    if header.channels as usize != model.config.channels {
        return Err(format_err!("bitstream has {} channels, model codes {}", header.channels, model.config.channels));
    }
    let mut latent = Tensor::zeros(&[model.config.channels, lh, lw]);
    let mut decoder = RangeDecoder::new(payload)?;
    let stats = run_schedule(model, &mut latent, &mut decoder, context)?;
    let image = crop_image(&model.synthesize(&latent)?, h, w);
    Ok(Decoded { image, latent, stats, seconds: start.elapsed().as_secs_f64() })
}
