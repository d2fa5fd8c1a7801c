use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::deterministic::{DeterministicAccumulator, DeterministicScores};
use super::rank::RankHistogram;
use super::reliability::{ReliabilityAccumulator, ReliabilityTable};
use super::{check_pair, crps_field, event_probability, exceeds, CompensatedSum, EnsembleForecast};
use crate::error::{Error, Result};
use crate::fieldio::GridField;
use crate::rng::{label, stream, StreamRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub k: usize,
    /// Event thresholds in mm for Brier scores and reliability.
    pub thresholds: Vec<f64>,
    /// Thresholds for the per-member deterministic scores.
    pub deterministic_thresholds: Vec<f64>,
    pub fss_window: usize,
    pub rank_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k: 10,
            thresholds: vec![1.0, 5.0, 10.0, 30.0],
            deterministic_thresholds: vec![1.0, 4.0, 5.0, 10.0, 30.0],
            fss_window: 16,
            rank_seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.fss_window == 0 {
            return Err(Error::InvalidArgument("evaluation k and fss_window must be positive".into()));
        }
        for list in [&self.thresholds, &self.deterministic_thresholds] {
            if list.is_empty() || list.iter().any(|t| !(*t > 0.0)) || list.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidArgument(format!("thresholds must be positive and ascending: {list:?}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdValue {
    pub threshold: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub model: String,
    pub mode: String,
    pub k: usize,
    pub patches: u64,
    pub pixels: u64,
    pub crps: f64,
    pub brier: Vec<ThresholdValue>,
    pub reliability: ReliabilityTable,
    /// Mean distance of populated reliability bins from the diagonal.
    pub calibration_error: Vec<ThresholdValue>,
    pub rank_histogram: RankHistogram,
    pub rank_chi_square: f64,
    pub rank_p_value: f64,
    pub deterministic: DeterministicScores,
}

impl MetricReport {
    pub fn brier_at(&self, threshold: f64) -> Option<f64> {
        self.brier.iter().find(|b| b.threshold == threshold).map(|b| b.value)
    }
}

/// Streaming evaluation of matched ensembles and observations.
pub struct Evaluator {
    cfg: EvalConfig,
    k: Option<usize>,
    patches: u64,
    pixels: u64,
    crps: CompensatedSum,
    brier: Vec<CompensatedSum>,
    reliability: ReliabilityAccumulator,
    ranks: Option<RankHistogram>,
    rank_rng: StreamRng,
    deterministic: DeterministicAccumulator,
}

impl Evaluator {
    pub fn new(cfg: &EvalConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg: cfg.clone(),
            k: None,
            patches: 0,
            pixels: 0,
            crps: CompensatedSum::default(),
            brier: vec![CompensatedSum::default(); cfg.thresholds.len()],
            reliability: ReliabilityAccumulator::new(&cfg.thresholds),
            ranks: None,
            rank_rng: stream(cfg.rank_seed, &[label::RANKS]),
            deterministic: DeterministicAccumulator::new(&cfg.deterministic_thresholds, cfg.fss_window),
        })
    }

    pub fn add(&mut self, ens: &EnsembleForecast, obs: &GridField) -> Result<()> {
        check_pair(ens, obs)?;
        match self.k {
            None => self.k = Some(ens.k()),
            Some(k) if k != ens.k() => {
                return Err(Error::InvalidArgument(format!("ensemble size changed from {k} to {}", ens.k())));
            }
            _ => {}
        }
        let n = obs.values().len() as u64;
        self.crps.add(crps_field(ens, obs)? * n as f64);
        for (t, acc) in self.cfg.thresholds.iter().zip(self.brier.iter_mut()) {
            let probs = event_probability(ens, *t);
            for (p, o) in probs.iter().zip(exceeds(obs, *t)) {
                acc.add((p - o as u8 as f64).powi(2));
            }
        }
        self.reliability.add(ens, obs)?;
        self.ranks.get_or_insert_with(|| RankHistogram::new(ens.k())).add(ens, obs, &mut self.rank_rng)?;
        self.deterministic.add(ens, obs)?;
        self.patches += 1;
        self.pixels += n;
        Ok(())
    }

    pub fn finish(self, model: &str, mode: &str) -> Result<MetricReport> {
        let ranks = self.ranks.ok_or_else(|| Error::InvalidArgument("nothing to evaluate".into()))?;
        let pixels = self.pixels as f64;
        let reliability = self.reliability.finish()?;
        let (chi, p) = ranks.chi_square();
        Ok(MetricReport {
            model: model.into(),
            mode: mode.into(),
            k: self.k.unwrap_or(0),
            patches: self.patches,
            pixels: self.pixels,
            crps: self.crps.value() / pixels,
            brier: self
                .cfg
                .thresholds
                .iter()
                .zip(&self.brier)
                .map(|(t, s)| ThresholdValue { threshold: *t, value: s.value() / pixels })
                .collect(),
            calibration_error: self
                .cfg
                .thresholds
                .iter()
                .filter_map(|t| Some(ThresholdValue { threshold: *t, value: reliability.calibration_error(*t)? }))
                .collect(),
            reliability,
            rank_histogram: ranks,
            rank_chi_square: chi,
            rank_p_value: p,
            deterministic: self.deterministic.finish()?,
        })
    }
}

pub fn evaluate(model: &str, mode: &str, pairs: &[(EnsembleForecast, GridField)], cfg: &EvalConfig) -> Result<MetricReport> {
    let mut ev = Evaluator::new(cfg)?;
    for (e, o) in pairs {
        ev.add(e, o)?;
    }
    ev.finish(model, mode)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_reliability_csv(path: impl AsRef<Path>, table: &ReliabilityTable) -> Result<()> {
    let mut s = String::from("threshold,bin_lo,bin_hi,mean_prob,obs_freq,count\n");
    for r in &table.rows {
        let _ = writeln!(s, "{},{},{},{},{},{}", r.threshold, r.bin_lo, r.bin_hi, opt(r.mean_prob), opt(r.obs_freq), r.count);
    }
    std::fs::write(path, s)?;
    Ok(())
}

pub fn write_rank_csv(path: impl AsRef<Path>, hist: &RankHistogram) -> Result<()> {
    let mut s = String::from("rank,count\n");
    for (i, c) in hist.counts.iter().enumerate() {
        let _ = writeln!(s, "{i},{c}");
    }
    std::fs::write(path, s)?;
    Ok(())
}
