//! The context tensor pair (ȳ, m) used while decoding one scale.

use super::schedule::DecodingUnit;
use crate::autodiff::upsample2;
use crate::error::{usage, Result};
use crate::tensor::Tensor;

/// Mixture of true values and upsampled predictions at one scale.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureState {
    pub ybar: Tensor,
    /// `1.0` where `ybar` holds a true value.
    pub mask: Tensor,
}

/// Nearest-neighbour upsampling of the coarse grid to `h×w`; the positions
/// the coarse scale owns are marked as known.
pub fn init_mixture(coarse: &Tensor, h: usize, w: usize) -> Result<MixtureState> {
    let (c, ch, cw) = coarse.chw();
    if ch != h.div_ceil(2) || cw != w.div_ceil(2) {
        return Err(usage!("coarse grid {ch}x{cw} does not match a {h}x{w} scale"));
    }
    Ok(MixtureState { ybar: upsample2(coarse, h, w), mask: coarse_mask(c, h, w) })
}

pub fn coarse_mask(c: usize, h: usize, w: usize) -> Tensor {
    let plane: Vec<f32> = (0..h * w).map(|i| ((i / w).is_multiple_of(2) && (i % w).is_multiple_of(2)) as u8 as f32).collect();
    Tensor::new(&[c, h, w], plane.repeat(c)).unwrap()
}

impl MixtureState {
    /// Copies the unit's elements of `values` (same shape as `ybar`) into the
    /// mixture and marks them known.
    pub fn write(&mut self, unit: &DecodingUnit, values: &Tensor) {
        let (_, h, w) = self.ybar.chw();
        for ch in unit.channels.clone() {
            for &(r, col) in &unit.positions {
                let i = (ch * h + r) * w + col;
                self.ybar.data_mut()[i] = values.data()[i];
                self.mask.data_mut()[i] = 1.0;
            }
        }
    }

    /// Order-sensitive FNV-1a hash of both tensors' bit patterns.
    pub fn fingerprint(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for v in self.ybar.data().iter().chain(self.mask.data()) {
            for b in v.to_bits().to_le_bytes() {
                h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}
