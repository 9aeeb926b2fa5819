//! Byte-oriented range coder with a 32-bit range and carry propagation
//! through a cached byte (the LZMA scheme).

use super::cdf::{CdfTable, PRECISION, TOTAL};
use crate::error::{coding, Result};

const TOP: u32 = 1 << 24;

pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self { low: 0, range: u32::MAX, cache: 0, cache_size: 1, out: Vec::new() }
    }

    pub fn encode(&mut self, table: &CdfTable, symbol: usize) {
        let r = self.range >> PRECISION;
        self.low += r as u64 * table.start(symbol) as u64;
        self.range = r * table.width(symbol);
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || (self.low >> 32) != 0 {
            let carry = (self.low >> 32) as u8;
            let mut temp = self.cache;
            loop {
                self.out.push(temp.wrapping_add(carry));
                temp = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = (self.low >> 24) as u8;
        }
        self.cache_size += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

pub struct RangeDecoder<'a> {
    bytes: &'a [u8],
    pos: usize,
    code: u32,
    range: u32,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(bytes: &'a [u8]) -> Result<Self> {
        let mut d = Self { bytes, pos: 0, code: 0, range: u32::MAX };
        for _ in 0..5 {
            d.code = (d.code << 8) | d.next()? as u32;
        }
        Ok(d)
    }

    fn next(&mut self) -> Result<u8> {
        let b = *self.bytes.get(self.pos).ok_or_else(|| coding!("payload truncated at byte {}", self.pos))?;
        self.pos += 1;
        Ok(b)
    }

    /// Bytes consumed so far.
    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn decode(&mut self, table: &CdfTable) -> Result<usize> {
        if self.code >= self.range {
            return Err(coding!("corrupt payload near byte {}", self.pos));
        }
        let r = self.range >> PRECISION;
        let value = (self.code / r).min(TOTAL - 1);
        let symbol = table.find(value);
        self.code -= r * table.start(symbol);
        self.range = r * table.width(symbol);
        while self.range < TOP {
            self.code = (self.code << 8) | self.next()? as u32;
            self.range <<= 8;
        }
        Ok(symbol)
    }
}

pub fn range_encode<'t>(symbols: impl IntoIterator<Item = (usize, &'t CdfTable)>) -> Vec<u8> {
    let mut enc = RangeEncoder::new();
    for (s, t) in symbols {
        enc.encode(t, s);
    }
    enc.finish()
}

/// Decodes `count` symbols; `table(k)` supplies the table of symbol `k`.
pub fn range_decode<'t>(bytes: &[u8], count: usize, mut table: impl FnMut(usize) -> &'t CdfTable) -> Result<Vec<usize>> {
    let mut dec = RangeDecoder::new(bytes)?;
    (0..count).map(|k| dec.decode(table(k))).collect()
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::entropy::cdf::quantize_cdf;
    use crate::msp::gaussian::gaussian_pmf_table;

    fn random_table(rng: &mut ChaCha8Rng) -> CdfTable {
        let mu = rng.gen_range(-130.0..130.0);
        let sigma = 0.04 * 6400f64.powf(rng.gen::<f64>());
        quantize_cdf(&gaussian_pmf_table(mu, sigma)).unwrap()
    }

    #[test]
    fn empty_stream_is_tiny() {
        let bytes = range_encode(std::iter::empty());
        assert!(bytes.len() <= 8);
        assert!(range_decode(&bytes, 0, |_| unreachable!()).unwrap().is_empty());
    }

    #[test]
    fn uniform_symbols_cost_a_byte_each() {
        let t = quantize_cdf(&[1.0 / 256.0; 256]).unwrap();
        let syms: Vec<usize> = (0..1024).map(|k| (k * 37) % 256).collect();
        let bytes = range_encode(syms.iter().map(|&s| (s, &t)));
        assert!((bytes.len() as i64 - 1024).abs() <= 16, "{}", bytes.len());
        assert_eq!(range_decode(&bytes, 1024, |_| &t).unwrap(), syms);
    }

    #[test]
    fn fuzzed_roundtrips_and_size_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for case in 0..10_000 {
            let n = rng.gen_range(0..24);
            let tables: Vec<CdfTable> = (0..n.clamp(1, 4)).map(|_| random_table(&mut rng)).collect();
            let pick: Vec<usize> = (0..n).map(|_| rng.gen_range(0..tables.len())).collect();
            let syms: Vec<usize> = pick
                .iter()
                .map(|&t| {
                    if rng.gen_bool(0.8) {
                        // draw from the table itself
                        tables[t].find(rng.gen_range(0..TOTAL))
                    } else {
                        rng.gen_range(0..256)
                    }
                })
                .collect();
            let bytes = range_encode(syms.iter().zip(&pick).map(|(&s, &t)| (s, &tables[t])));
            let ideal: f64 = syms.iter().zip(&pick).map(|(&s, &t)| tables[t].cost(s)).sum();
            let bits = bytes.len() as f64 * 8.0;
            assert!(bits <= ideal + 128.0 && bits >= ideal - 8.0, "case {case}: {bits} bits for {ideal}");
            let back = range_decode(&bytes, n, |k| &tables[pick[k]]).unwrap();
            assert_eq!(back, syms, "case {case}");
        }
    }

    #[test]
    fn long_skewed_stream_is_near_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = quantize_cdf(&gaussian_pmf_table(0.2, 0.7)).unwrap();
        let syms: Vec<usize> = (0..50_000).map(|_| t.find(rng.gen_range(0..TOTAL))).collect();
        let bytes = range_encode(syms.iter().map(|&s| (s, &t)));
        let ideal: f64 = syms.iter().map(|&s| t.cost(s)).sum();
        assert!(bytes.len() as f64 * 8.0 <= ideal * 1.001 + 128.0);
        assert_eq!(range_decode(&bytes, syms.len(), |_| &t).unwrap(), syms);
    }

    #[test]
    fn wrong_tables_change_the_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = quantize_cdf(&gaussian_pmf_table(0.0, 2.0)).unwrap();
        let b = quantize_cdf(&gaussian_pmf_table(40.0, 2.0)).unwrap();
        let syms: Vec<usize> = (0..64).map(|_| a.find(rng.gen_range(0..TOTAL))).collect();
        let bytes = range_encode(syms.iter().map(|&s| (s, &a)));
        match range_decode(&bytes, syms.len(), |_| &b) {
            Ok(got) => assert_ne!(got, syms),
            Err(e) => assert!(matches!(e, crate::Error::Coding(_))),
        }
    }

    #[test]
    fn truncation_reports_position() {
        let t = quantize_cdf(&[1.0 / 256.0; 256]).unwrap();
        let syms: Vec<usize> = (0..100).collect();
        let bytes = range_encode(syms.iter().map(|&s| (s, &t)));
        let err = range_decode(&bytes[..50], 100, |_| &t).unwrap_err();
        assert!(err.to_string().contains("byte 50"), "{err}");
    }
}
