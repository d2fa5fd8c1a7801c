//! Probabilistic and deterministic verification on raw-space ensembles.

mod deterministic;
mod rank;
mod reliability;
mod report;

pub use deterministic::{deterministic_suite, fss, precision_recall, rmse, DeterministicAccumulator, DeterministicScores, ThresholdScores};
pub use rank::{chi_square_uniformity, RankHistogram};
pub use reliability::{ReliabilityAccumulator, ReliabilityRow, ReliabilityTable, N_BINS};
pub use report::{evaluate, write_rank_csv, write_reliability_csv, EvalConfig, Evaluator, MetricReport, ThresholdValue};

use crate::error::{Error, Result};
use crate::datagen::{denormalize, InputPatch, NormalizationSpec, MEMBERS};
use crate::fieldio::{regrid_bilinear, GridField, Space};

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: &CompensatedSum) {
        self.add(other.sum);
        self.add(other.comp);
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = Self::default();
        iter.into_iter().for_each(|v| s.add(v));
        s
    }
}

/// `k` raw-space members over a common grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleForecast {
    members: Vec<GridField>,
}

impl EnsembleForecast {
    pub fn new(members: Vec<GridField>) -> Result<Self> {
        let first = members.first().ok_or_else(|| Error::InvalidArgument("ensemble needs at least one member".into()))?;
        for m in &members {
            if m.space() != Space::RawMm {
                return Err(Error::Space("ensembles are verified on raw_mm values; got normalized data".into()));
            }
            if m.dims() != first.dims() {
                return Err(Error::Shape(format!("member dims {:?} vs {:?}", m.dims(), first.dims())));
            }
        }
        Ok(Self { members })
    }

    pub fn k(&self) -> usize {
        self.members.len()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.members[0].dims()
    }

    pub fn members(&self) -> &[GridField] {
        &self.members
    }

    pub fn into_members(self) -> Vec<GridField> {
        self.members
    }

    /// Member values at pixel `p`, as f64.
    pub fn pixel(&self, p: usize, out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.members.iter().map(|m| m.values()[p] as f64));
    }
}

pub(crate) fn check_pair(ens: &EnsembleForecast, obs: &GridField) -> Result<()> {
    if obs.space() != Space::RawMm {
        return Err(Error::Space("observations must be raw_mm".into()));
    }
    if obs.dims() != ens.dims() {
        return Err(Error::Shape(format!("observation {:?} vs ensemble {:?}", obs.dims(), ens.dims())));
    }
    Ok(())
}

/// Empirical-CDF CRPS: `mean|x_i - y| - (1 / 2k^2) sum_ij |x_i - x_j|`.
pub fn crps_ensemble(members: &[f64], obs: f64) -> Result<f64> {
    if members.is_empty() {
        return Err(Error::InvalidArgument("CRPS of an empty ensemble".into()));
    }
    if !obs.is_finite() || members.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("CRPS inputs must be finite".into()));
    }
    let mut sorted = members.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(crps_sorted(&sorted, obs))
}

fn crps_sorted(sorted: &[f64], obs: f64) -> f64 {
    let k = sorted.len() as f64;
    let mut abs_err = 0.0;
    let mut spread = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        abs_err += (x - obs).abs();
        spread += x * (2.0 * i as f64 - k + 1.0);
    }
    (abs_err / k - spread / (k * k)).max(0.0)
}

/// Mean CRPS over all pixels of one patch.
pub fn crps_field(ens: &EnsembleForecast, obs: &GridField) -> Result<f64> {
    check_pair(ens, obs)?;
    let mut buf = Vec::with_capacity(ens.k());
    let mut total = CompensatedSum::default();
    for (p, &o) in obs.values().iter().enumerate() {
        ens.pixel(p, &mut buf);
        buf.sort_by(f64::total_cmp);
        total.add(crps_sorted(&buf, o as f64));
    }
    Ok(total.value() / obs.values().len() as f64)
}

pub fn brier(probs: &[f64], outcomes: &[bool]) -> Result<f64> {
    if probs.len() != outcomes.len() {
        return Err(Error::Shape(format!("{} probabilities vs {} outcomes", probs.len(), outcomes.len())));
    }
    if probs.is_empty() {
        return Err(Error::InvalidArgument("Brier score of an empty sample".into()));
    }
    if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidArgument(format!("probability {p} outside [0, 1]")));
    }
    let s: CompensatedSum = probs.iter().zip(outcomes).map(|(p, &o)| (p - o as u8 as f64).powi(2)).collect();
    Ok(s.value() / probs.len() as f64)
}

/// Per-pixel fraction of members strictly above `threshold`.
pub fn event_probability(ens: &EnsembleForecast, threshold: f64) -> Vec<f64> {
    let n = ens.members[0].values().len();
    let mut counts = vec![0u32; n];
    for m in &ens.members {
        for (c, v) in counts.iter_mut().zip(m.values()) {
            *c += (*v as f64 > threshold) as u32;
        }
    }
    let k = ens.k() as f64;
    counts.into_iter().map(|c| c as f64 / k).collect()
}

pub fn exceeds(obs: &GridField, threshold: f64) -> Vec<bool> {
    obs.values().iter().map(|v| *v as f64 > threshold).collect()
}

/// Reference ensemble: every coarse precipitation member of `x`, back in
/// millimetres and bilinearly interpolated to `size x size`.
pub fn interpolation_baseline(x: &InputPatch, norm: &NormalizationSpec, size: usize) -> Result<EnsembleForecast> {
    let members = (0..MEMBERS)
        .map(|j| regrid_bilinear(&denormalize(&x.channel(j), norm)?, size, size))
        .collect::<Result<Vec<_>>>()?;
    EnsembleForecast::new(members)
}
