use serde::{Deserialize, Serialize};

use super::{check_pair, event_probability, CompensatedSum, EnsembleForecast};
use crate::error::{Error, Result};
use crate::fieldio::GridField;

pub const N_BINS: usize = 5;

/// Bin of width 0.2; the last bin is closed on the right.
pub fn bin_of(p: f64) -> usize {
    ((p * N_BINS as f64 + 1e-9).floor() as usize).min(N_BINS - 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityRow {
    pub threshold: f64,
    pub bin_lo: f64,
    pub bin_hi: f64,
    /// `None` for empty bins.
    pub mean_prob: Option<f64>,
    pub obs_freq: Option<f64>,
    pub count: u64,
}

#[derive(Debug, Clone, Default)]
struct Bin {
    count: u64,
    prob: CompensatedSum,
    hits: u64,
}

/// Streaming reliability statistics for a set of thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityTable {
    pub thresholds: Vec<f64>,
    pub rows: Vec<ReliabilityRow>,
}

#[derive(Debug, Clone)]
pub struct ReliabilityAccumulator {
    thresholds: Vec<f64>,
    bins: Vec<[Bin; N_BINS]>,
}

impl ReliabilityAccumulator {
    pub fn new(thresholds: &[f64]) -> Self {
        Self { thresholds: thresholds.to_vec(), bins: thresholds.iter().map(|_| Default::default()).collect() }
    }

    pub fn add(&mut self, ens: &EnsembleForecast, obs: &GridField) -> Result<()> {
        check_pair(ens, obs)?;
        for (t, bins) in self.thresholds.iter().zip(self.bins.iter_mut()) {
            let probs = event_probability(ens, *t);
            for (p, o) in probs.iter().zip(obs.values()) {
                add_one(bins, *p, *o as f64 > *t);
            }
        }
        Ok(())
    }

    /// Adds raw `(probability, outcome)` pairs for threshold slot `slot`.
    pub fn add_probabilities(&mut self, slot: usize, probs: &[f64], outcomes: &[bool]) {
        for (p, o) in probs.iter().zip(outcomes) {
            add_one(&mut self.bins[slot], *p, *o);
        }
    }

    pub fn finish(&self) -> Result<ReliabilityTable> {
        if self.bins.first().is_none_or(|b| b.iter().all(|x| x.count == 0)) {
            return Err(Error::InvalidArgument("reliability over an empty stream".into()));
        }
        let mut rows = Vec::with_capacity(self.thresholds.len() * N_BINS);
        for (t, bins) in self.thresholds.iter().zip(&self.bins) {
            for (i, b) in bins.iter().enumerate() {
                let populated = b.count > 0;
                rows.push(ReliabilityRow {
                    threshold: *t,
                    bin_lo: i as f64 / N_BINS as f64,
                    bin_hi: (i + 1) as f64 / N_BINS as f64,
                    mean_prob: populated.then(|| b.prob.value() / b.count as f64),
                    obs_freq: populated.then(|| b.hits as f64 / b.count as f64),
                    count: b.count,
                });
            }
        }
        Ok(ReliabilityTable { thresholds: self.thresholds.clone(), rows })
    }
}

fn add_one(bins: &mut [Bin; N_BINS], p: f64, hit: bool) {
    let b = &mut bins[bin_of(p)];
    b.count += 1;
    b.prob.add(p);
    b.hits += hit as u64;
}

impl ReliabilityTable {
    pub fn rows_for(&self, threshold: f64) -> impl Iterator<Item = &ReliabilityRow> {
        self.rows.iter().filter(move |r| r.threshold == threshold)
    }

    /// Mean `|obs_freq - mean_prob|` over populated bins at `threshold`.
    pub fn calibration_error(&self, threshold: f64) -> Option<f64> {
        let gaps: Vec<f64> = self
            .rows_for(threshold)
            .filter_map(|r| Some((r.obs_freq? - r.mean_prob?).abs()))
            .collect();
        (!gaps.is_empty()).then(|| gaps.iter().sum::<f64>() / gaps.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fieldio::Space;
    use rand::Rng;

    #[test]
    fn binning_contract() {
        assert_eq!(bin_of(0.0), 0);
        assert_eq!(bin_of(0.1), 0);
        assert_eq!(bin_of(0.2), 1);
        assert_eq!(bin_of(0.6), 3);
        assert_eq!(bin_of(0.8), 4);
        assert_eq!(bin_of(1.0), 4);
    }

    #[test]
    fn certain_forecasts_of_certain_events() {
        let members = (0..4).map(|_| GridField::filled(5.0, 2, 2, Space::RawMm).unwrap()).collect();
        let ens = EnsembleForecast::new(members).unwrap();
        let obs = GridField::filled(3.0, 2, 2, Space::RawMm).unwrap();
        let mut acc = ReliabilityAccumulator::new(&[1.0, 10.0]);
        acc.add(&ens, &obs).unwrap();
        let t = acc.finish().unwrap();
        let top = t.rows_for(1.0).last().unwrap();
        assert_eq!((top.count, top.obs_freq, top.mean_prob), (4, Some(1.0), Some(1.0)));
        assert_eq!(t.rows.iter().map(|r| r.count).sum::<u64>(), 8);
        assert_eq!(t.rows.len(), 10);
    }

    #[test]
    fn single_low_probability_pixel() {
        let mut acc = ReliabilityAccumulator::new(&[1.0]);
        acc.add_probabilities(0, &[0.1], &[false]);
        let t = acc.finish().unwrap();
        assert_eq!(t.rows[0].count, 1);
        assert_eq!((t.rows[0].bin_lo, t.rows[0].bin_hi), (0.0, 0.2));
        assert!(ReliabilityAccumulator::new(&[1.0]).finish().is_err());
    }

    #[test]
    fn calibrated_stream_lands_on_diagonal() {
        let mut r = crate::rng::stream(12, &[]);
        let probs: Vec<f64> = (0..100_000).map(|_| r.random_range(0..=10) as f64 / 10.0).collect();
        let outcomes: Vec<bool> = probs.iter().map(|p| r.random_bool(*p)).collect();
        let mut acc = ReliabilityAccumulator::new(&[1.0]);
        acc.add_probabilities(0, &probs, &outcomes);
        let t = acc.finish().unwrap();
        for row in &t.rows {
            assert!((row.obs_freq.unwrap() - row.mean_prob.unwrap()).abs() < 0.02);
        }
    }
}
