use std::fmt;
use std::str::FromStr;

use crate::error::{config, usage, Error, Result};

/// Grouping configuration of the MSP probability model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MspProfile {
    scales: usize,
    block: (usize, usize),
    seeds: usize,
    filters: usize,
}

impl MspProfile {
    pub fn new(scales: usize, block_rows: usize, block_cols: usize, seeds: usize, filters: usize) -> Result<Self> {
        if scales == 0 {
            return Err(config!("profile needs at least one scale"));
        }
        if block_rows == 0 || block_cols == 0 {
            return Err(config!("subgroup block dimensions must be positive"));
        }
        if block_rows == 1 && block_cols == 1 {
            return Err(config!("1x1 subgroup blocks hold no position outside the coarser scale"));
        }
        if filters == 0 {
            return Err(config!("filter count must be positive"));
        }
        Ok(Self { scales, block: (block_rows, block_cols), seeds, filters })
    }

    pub fn baseline() -> Self {
        Self { scales: 3, block: (2, 2), seeds: 0, filters: 64 }
    }

    pub fn normal() -> Self {
        Self { scales: 3, block: (2, 2), seeds: 2, filters: 64 }
    }

    pub fn extra() -> Self {
        Self { scales: 4, block: (2, 4), seeds: 4, filters: 128 }
    }

    pub fn named(name: &str) -> Option<Self> {
        match name {
            "baseline" => Some(Self::baseline()),
            "normal" => Some(Self::normal()),
            "extra" => Some(Self::extra()),
            _ => None,
        }
    }

    /// Same grouping with a different filter count for the parameter network.
    pub fn with_filters(self, filters: usize) -> Self {
        Self { filters: filters.max(1), ..self }
    }

    pub fn scales(&self) -> usize {
        self.scales
    }

    pub fn block(&self) -> (usize, usize) {
        self.block
    }

    pub fn seeds(&self) -> usize {
        self.seeds
    }

    pub fn filters(&self) -> usize {
        self.filters
    }

    /// Subgroups per block: block positions that are not on the coarser grid.
    pub fn subgroups(&self) -> usize {
        let (br, bc) = self.block;
        br * bc - br.div_ceil(2) * bc.div_ceil(2)
    }

    /// Model evaluations needed to decode a latent: `s·b·(a+1) + 1`.
    pub fn decode_steps(&self) -> usize {
        self.scales * self.subgroups() * (self.seeds + 1) + 1
    }

    /// Bitstream profile id; `255` marks a custom grouping whose parameters
    /// travel with the model weights.
    pub fn id(&self) -> u8 {
        // filters are a model property; only the grouping names a profile
        let grouping = |p: Self| (p.scales, p.block, p.seeds) == (self.scales, self.block, self.seeds);
        if grouping(Self::baseline()) {
            0
        } else if grouping(Self::normal()) {
            1
        } else if grouping(Self::extra()) {
            2
        } else {
            255
        }
    }

    /// Smallest multiple that image sides are padded to: `16·2^s`.
    pub fn pad_multiple(&self) -> usize {
        16 << self.scales
    }
}

impl fmt::Display for MspProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}x{}:{}:{}", self.scales, self.block.0, self.block.1, self.seeds, self.filters)
    }
}

/// Accepts a profile name or an explicit `s:BRxBC:a:filters` quadruple.
impl FromStr for MspProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(p) = Self::named(s) {
            return Ok(p);
        }
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || usage!("profile must be baseline, normal, extra or s:BRxBC:a:filters, got {s:?}");
        if parts.len() != 4 {
            return Err(bad());
        }
        let num = |t: &str| t.trim().parse::<usize>().map_err(|_| bad());
        let (br, bc) = parts[1].split_once('x').ok_or_else(bad)?;
        Self::new(num(parts[0])?, num(br)?, num(bc)?, num(parts[2])?, num(parts[3])?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn named_profiles_step_counts() {
        assert_eq!((MspProfile::baseline().subgroups(), MspProfile::baseline().decode_steps()), (3, 10));
        assert_eq!((MspProfile::normal().subgroups(), MspProfile::normal().decode_steps()), (3, 28));
        assert_eq!((MspProfile::extra().subgroups(), MspProfile::extra().decode_steps()), (6, 121));
    }

    #[test]
    fn one_by_one_block_rejected() {
        assert!(MspProfile::new(3, 1, 1, 0, 8).is_err());
        assert_eq!(MspProfile::new(3, 1, 2, 0, 8).unwrap().subgroups(), 1);
        assert_eq!(MspProfile::new(2, 3, 3, 0, 8).unwrap().subgroups(), 5);
    }

    #[test]
    fn parse_profiles() {
        assert_eq!("extra".parse::<MspProfile>().unwrap(), MspProfile::extra());
        let p: MspProfile = "2:2x4:1:16".parse().unwrap();
        assert_eq!((p.scales(), p.block(), p.seeds(), p.filters()), (2, (2, 4), 1, 16));
        assert_eq!(p.to_string().parse::<MspProfile>().unwrap(), p);
        assert!("2:1x1:0:8".parse::<MspProfile>().is_err());
        assert!("fast".parse::<MspProfile>().is_err());
    }

    #[test]
    fn ids() {
        assert_eq!(MspProfile::baseline().with_filters(16).id(), 0);
        assert_eq!(MspProfile::extra().id(), 2);
        assert_eq!(MspProfile::new(2, 2, 2, 0, 8).unwrap().id(), 255);
    }
}
