//! Energy and correlation statistics of latent channels.

use crate::error::{usage, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelStats {
    /// `(channel, share of total energy)`, largest share first.
    pub shares: Vec<(usize, f64)>,
    /// Pearson correlation between the `top` highest-energy channels, in
    /// share order.
    pub correlation: Vec<Vec<f64>>,
    /// Channels among the top ones with zero variance; their correlations
    /// are reported as 0.
    pub constant: Vec<usize>,
}

/// Energy is the mean square per channel over all positions of all latents.
pub fn channel_stats(latents: &[Tensor], top: usize) -> Result<ChannelStats> {
    let first = latents.first().ok_or_else(|| usage!("channel statistics need at least one latent"))?;
    let c = first.chw().0;
    if let Some(t) = latents.iter().find(|t| t.chw().0 != c) {
        return Err(usage!("latents disagree on channel count: {c} vs {}", t.chw().0));
    }
    let samples: Vec<Vec<f64>> = (0..c)
        .map(|ch| {
            latents
                .iter()
                .flat_map(|t| {
                    let (_, h, w) = t.chw();
                    t.data()[ch * h * w..(ch + 1) * h * w].iter().map(|&v| v as f64)
                })
                .collect()
        })
        .collect();
    let energy: Vec<f64> = samples.iter().map(|s| s.iter().map(|v| v * v).sum::<f64>() / s.len().max(1) as f64).collect();
    let total: f64 = energy.iter().sum();
    let mut shares: Vec<(usize, f64)> = energy.iter().enumerate().map(|(k, &e)| (k, if total > 0.0 { e / total } else { 1.0 / c as f64 })).collect();
    shares.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let picked: Vec<usize> = shares.iter().take(top.min(c)).map(|&(k, _)| k).collect();
    let centred: Vec<(Vec<f64>, f64)> = picked
        .iter()
        .map(|&k| {
            let s = &samples[k];
            let mean = s.iter().sum::<f64>() / s.len() as f64;
            let d: Vec<f64> = s.iter().map(|v| v - mean).collect();
            let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            (d, norm)
        })
        .collect();
    let constant = picked.iter().zip(&centred).filter(|(_, (_, n))| *n == 0.0).map(|(&k, _)| k).collect();
    let n = picked.len();
    let mut correlation = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let ((a, na), (b, nb)) = (&centred[i], &centred[j]);
            if *na > 0.0 && *nb > 0.0 {
                correlation[i][j] = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb);
            }
        }
    }
    Ok(ChannelStats { shares, correlation, constant })
}

impl ChannelStats {
    /// Rows `rank,channel,share,corr_0,…`.
    pub fn to_csv(&self) -> String {
        let n = self.correlation.len();
        let mut out = String::from("rank,channel,share");
        for k in 0..n {
            out.push_str(&format!(",corr_{k}"));
        }
        out.push('\n');
        for (rank, &(ch, share)) in self.shares.iter().enumerate() {
            out.push_str(&format!("{rank},{ch},{share:.9}"));
            for k in 0..n {
                match self.correlation.get(rank) {
                    Some(row) => out.push_str(&format!(",{:.6}", row[k])),
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }

    /// Share of total energy held by the top quarter of channels.
    pub fn top_quartile_share(&self) -> f64 {
        let k = self.shares.len().div_ceil(4);
        self.shares.iter().take(k).map(|s| s.1).sum()
    }
}
