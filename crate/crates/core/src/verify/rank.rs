use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::{check_pair, EnsembleForecast};
use crate::error::{Error, Result};
use crate::fieldio::GridField;

/// Counts of the observation's rank among `k` members, ranks `0..=k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankHistogram {
    pub counts: Vec<u64>,
}

impl RankHistogram {
    pub fn new(k: usize) -> Self {
        Self { counts: vec![0; k + 1] }
    }

    pub fn k(&self) -> usize {
        self.counts.len() - 1
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Ties between the observation and members are broken uniformly.
    pub fn add_pixel(&mut self, members: &[f64], obs: f64, rng: &mut impl Rng) -> Result<()> {
        if members.len() != self.k() {
            return Err(Error::InvalidArgument(format!("ensemble size {} in a histogram for k = {}", members.len(), self.k())));
        }
        let below = members.iter().filter(|m| **m < obs).count();
        let ties = members.iter().filter(|m| **m == obs).count();
        let rank = if ties == 0 { below } else { below + rng.random_range(0..=ties) };
        self.counts[rank] += 1;
        Ok(())
    }

    pub fn add(&mut self, ens: &EnsembleForecast, obs: &GridField, rng: &mut impl Rng) -> Result<()> {
        check_pair(ens, obs)?;
        let mut buf = Vec::with_capacity(ens.k());
        for (p, o) in obs.values().iter().enumerate() {
            ens.pixel(p, &mut buf);
            self.add_pixel(&buf, *o as f64, rng)?;
        }
        Ok(())
    }

    /// Pearson statistic against a flat histogram and its p-value.
    pub fn chi_square(&self) -> (f64, f64) {
        chi_square_uniformity(&self.counts)
    }
}

/// Pearson chi-square against equal expected counts and its p-value.
pub fn chi_square_uniformity(counts: &[u64]) -> (f64, f64) {
    let n: u64 = counts.iter().sum();
    if n == 0 || counts.len() < 2 {
        return (0.0, 1.0);
    }
    let expected = n as f64 / counts.len() as f64;
    let stat = counts.iter().map(|c| (*c as f64 - expected).powi(2) / expected).sum::<f64>();
    let dist = ChiSquared::new((counts.len() - 1) as f64).expect("positive degrees of freedom");
    (stat, dist.sf(stat))
}
