//! Entropy coding: CDF tables, the range coder and the bitstream container.

pub mod bitstream;
pub mod cdf;
pub mod range_coder;

pub use bitstream::{parse_bitstream, serialize_bitstream, Header};
pub use cdf::{quantize_cdf, CdfTable};
pub use range_coder::{range_decode, range_encode, RangeDecoder, RangeEncoder};
