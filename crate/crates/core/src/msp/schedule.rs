//! Scale groups, subgroup assignment and the decode schedule.
//!
//! Scale `i` lives on the grid of latent positions whose row and column are
//! both multiples of `2^i`. Positions on that grid are addressed in grid
//! coordinates (full-resolution coordinate divided by `2^i`); a grid point
//! is owned by scale `i+1` exactly when both grid coordinates are even.

use std::ops::Range;

use super::profile::MspProfile;
use crate::error::{config, Result};

/// Full-resolution coordinates of each scale group `y^(0)..y^(s)`.
pub fn partition_scales(h: usize, w: usize, s: usize) -> Vec<Vec<(usize, usize)>> {
    let mut groups = vec![Vec::new(); s + 1];
    for r in 0..h {
        for c in 0..w {
            groups[scale_of(r, c, s)].push((r, c));
        }
    }
    groups
}

/// The scale group owning full-resolution position `(r, c)`.
pub fn scale_of(r: usize, c: usize, s: usize) -> usize {
    let tz = |v: usize| if v == 0 { usize::MAX } else { v.trailing_zeros() as usize };
    tz(r).min(tz(c)).min(s)
}

/// Grid dimensions of every scale `0..=s`.
pub fn scale_dims(h: usize, w: usize, s: usize) -> Vec<(usize, usize)> {
    let mut dims = vec![(h, w)];
    for _ in 0..s {
        let (ph, pw) = *dims.last().unwrap();
        dims.push((ph.div_ceil(2), pw.div_ceil(2)));
    }
    dims
}

/// Maps in-block positions to 1-based subgroup indices.
#[derive(Clone, Debug)]
pub struct SubgroupMap {
    rows: usize,
    cols: usize,
    rank: Vec<usize>,
    count: usize,
}

impl SubgroupMap {
    /// Positions of a `rows×cols` block with at least one odd coordinate are
    /// numbered in raster order.
    pub fn new(rows: usize, cols: usize) -> Self {
        let mut rank = vec![0; rows * cols];
        let mut next = 0;
        for r in 0..rows {
            for c in 0..cols {
                if r % 2 == 1 || c % 2 == 1 {
                    next += 1;
                    rank[r * cols + c] = next;
                }
            }
        }
        Self { rows, cols, rank, count: next }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Subgroup of a grid point not owned by the coarser scale. With odd
    /// block sides a block can straddle the coarse parity pattern; such
    /// points take the last subgroup.
    pub fn subgroup(&self, gr: usize, gc: usize) -> usize {
        debug_assert!(gr % 2 == 1 || gc % 2 == 1, "({gr}, {gc}) belongs to the coarser scale");
        match self.rank[(gr % self.rows) * self.cols + gc % self.cols] {
            0 => self.count,
            j => j,
        }
    }
}

/// Subgroup index (1-based) for each grid coordinate of a scale group.
pub fn assign_subgroups(coords: &[(usize, usize)], block: (usize, usize)) -> Vec<usize> {
    let map = SubgroupMap::new(block.0, block.1);
    coords.iter().map(|&(r, c)| map.subgroup(r, c)).collect()
}

/// One parallel decoding step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecodingUnit {
    pub scale: usize,
    /// 1-based subgroup, `0` for the last-scale unit.
    pub subgroup: usize,
    pub channels: Range<usize>,
    /// Grid coordinates at `scale`, raster order.
    pub positions: Vec<(usize, usize)>,
}

impl DecodingUnit {
    pub fn element_count(&self) -> usize {
        self.positions.len() * self.channels.len()
    }

    /// Element mask over a `c×h×w` scale grid.
    pub fn mask(&self, c: usize, h: usize, w: usize) -> Vec<bool> {
        let mut m = vec![false; c * h * w];
        for ch in self.channels.clone() {
            for &(r, col) in &self.positions {
                m[(ch * h + r) * w + col] = true;
            }
        }
        m
    }
}

#[derive(Clone, Debug)]
pub struct GroupSchedule {
    pub profile: MspProfile,
    pub channels: usize,
    /// Grid dimensions of scales `0..=s`.
    pub dims: Vec<(usize, usize)>,
    /// The last-scale unit first, then scales `s-1..0`.
    pub units: Vec<DecodingUnit>,
}

impl GroupSchedule {
    pub fn scales(&self) -> usize {
        self.profile.scales()
    }

    /// Units that run the parameter network at `scale`.
    pub fn units_at(&self, scale: usize) -> impl Iterator<Item = &DecodingUnit> {
        self.units.iter().filter(move |u| u.scale == scale && u.subgroup > 0)
    }

    pub fn last_unit(&self) -> &DecodingUnit {
        &self.units[0]
    }
}

pub fn build_schedule(profile: &MspProfile, c: usize, h: usize, w: usize) -> Result<GroupSchedule> {
    let a = profile.seeds();
    if c <= a {
        return Err(config!("{c} latent channels cannot hold {a} seed channels plus a tail"));
    }
    if h == 0 || w == 0 {
        return Err(config!("latent dimensions must be positive, got {h}x{w}"));
    }
    let s = profile.scales();
    let dims = scale_dims(h, w, s);
    let (sh, sw) = dims[s];
    let last = DecodingUnit {
        scale: s,
        subgroup: 0,
        channels: 0..c,
        positions: (0..sh).flat_map(|r| (0..sw).map(move |col| (r, col))).collect(),
    };
    let mut units = vec![last];
    let map = SubgroupMap::new(profile.block().0, profile.block().1);
    let b = map.count();
    for i in (0..s).rev() {
        let (gh, gw) = dims[i];
        let mut by_subgroup = vec![Vec::new(); b + 1];
        for r in 0..gh {
            for col in 0..gw {
                if r % 2 == 0 && col % 2 == 0 {
                    continue;
                }
                by_subgroup[map.subgroup(r, col)].push((r, col));
            }
        }
        for (j, positions) in by_subgroup.into_iter().enumerate().skip(1) {
            if positions.is_empty() {
                continue;
            }
            let slices = (0..a).map(|l| l..l + 1).chain(std::iter::once(a..c));
            for channels in slices {
                units.push(DecodingUnit { scale: i, subgroup: j, channels, positions: positions.clone() });
            }
        }
    }
    Ok(GroupSchedule { profile: *profile, channels: c, dims, units })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eight_by_eight_three_scales() {
        let g = partition_scales(8, 8, 3);
        let sizes: Vec<usize> = g.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![48, 12, 3, 1]);
    }

    #[test]
    fn six_by_six_one_scale() {
        let g = partition_scales(6, 6, 1);
        assert_eq!((g[1].len(), g[0].len()), (9, 27));
    }

    #[test]
    fn oversized_scale_count_leaves_empty_groups() {
        let g = partition_scales(3, 2, 5);
        assert_eq!(g.iter().map(Vec::len).sum::<usize>(), 6);
        assert_eq!(g[5], vec![(0, 0)]);
        assert!(g[2].is_empty() && g[3].is_empty() && g[4].is_empty());
    }

    #[test]
    fn block_2x2_ranks() {
        let s = assign_subgroups(&[(0, 1), (1, 0), (1, 1)], (2, 2));
        assert_eq!(s, vec![1, 2, 3]);
    }

    #[test]
    fn block_2x4_ranks() {
        let s = assign_subgroups(&[(0, 1), (0, 3), (1, 0), (1, 1), (1, 2), (1, 3)], (2, 4));
        assert_eq!(s, vec![1, 2, 3, 4, 5, 6]);
        // the next block repeats the pattern
        assert_eq!(assign_subgroups(&[(2, 5), (3, 7)], (2, 4)), vec![1, 6]);
    }

    #[test]
    fn schedule_sizes() {
        for (p, n) in [(MspProfile::baseline(), 10), (MspProfile::normal(), 28)] {
            assert_eq!(build_schedule(&p, 8, 8, 8).unwrap().units.len(), n);
        }
        // extra needs a 2×4 block at the coarsest scale it predicts
        assert_eq!(build_schedule(&MspProfile::extra(), 8, 16, 32).unwrap().units.len(), 121);
    }

    #[test]
    fn no_seed_units_cover_all_channels() {
        let sched = build_schedule(&MspProfile::baseline(), 5, 8, 8).unwrap();
        assert!(sched.units.iter().all(|u| u.channels == (0..5)));
    }

    #[test]
    fn too_few_channels() {
        assert!(build_schedule(&MspProfile::extra(), 4, 32, 32).is_err());
    }
}
