//! Patch assembly, normalization, weighted sampling and the synthetic
//! toy-weather generator.

mod patch;
mod store;
mod synth;

use serde::{Deserialize, Serialize};

pub use patch::{build_input_patch, ChannelKind, InputPatch, PatchPair, PatchSources, CONTEXT_SIZE, INPUT_CHANNELS, MEMBERS};
pub use store::{load_dataset, save_dataset, Dataset, DatasetManifest, PairRecord, Split};
pub use synth::{synth_dataset, synth_truth, SynthConfig, SynthPatch, VariableRanges};

use crate::error::{Error, Result};
use crate::fieldio::{GridField, Space};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    pub y_max_mm: f32,
}

impl Default for NormalizationSpec {
    fn default() -> Self {
        Self { y_max_mm: 100.0 }
    }
}

impl NormalizationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.y_max_mm.is_finite() && self.y_max_mm > 0.0) {
            return Err(Error::InvalidArgument(format!("y_max_mm must be positive, got {}", self.y_max_mm)));
        }
        Ok(())
    }

    pub fn forward(&self, v: f32) -> f32 {
        let den = (self.y_max_mm as f64).ln_1p();
        ((v.min(self.y_max_mm) as f64).ln_1p() / den) as f32
    }

    pub fn inverse(&self, u: f32) -> f32 {
        let den = (self.y_max_mm as f64).ln_1p();
        ((u as f64) * den).exp_m1() as f32
    }
}

pub fn normalize(field: &GridField, spec: &NormalizationSpec) -> Result<GridField> {
    spec.validate()?;
    if field.space() != Space::RawMm {
        return Err(Error::Space(format!("normalize expects raw_mm input, got {}", field.space().as_str())));
    }
    if let Some(v) = field.values().iter().find(|v| **v < 0.0) {
        return Err(Error::Data(format!("negative precipitation value {v}")));
    }
    field.map(Space::Normalized, |v| spec.forward(v))
}

pub fn denormalize(field: &GridField, spec: &NormalizationSpec) -> Result<GridField> {
    spec.validate()?;
    if field.space() != Space::Normalized {
        return Err(Error::Space(format!("denormalize expects normalized input, got {}", field.space().as_str())));
    }
    if let Some(v) = field.values().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Data(format!("normalized value {v} outside [0, 1]")));
    }
    field.map(Space::RawMm, |u| spec.inverse(u))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerWeights {
    pub w_min: f64,
    pub w_max: f64,
    pub a: i32,
    pub rain_threshold_mm: f32,
}

impl Default for SamplerWeights {
    fn default() -> Self {
        Self { w_min: 0.02, w_max: 0.4, a: 4, rain_threshold_mm: 0.025 }
    }
}

impl SamplerWeights {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.w_min && self.w_min < self.w_max && self.w_max <= 1.0) || self.a < 1 {
            return Err(Error::InvalidArgument(format!("invalid sampler weights {self:?}")));
        }
        Ok(())
    }

    pub fn weight_for_fraction(&self, frac: f64) -> f64 {
        self.w_min + (1.0 - (frac - 1.0).powi(self.a)) * (self.w_max - self.w_min)
    }
}

/// Sampling weight from the fraction of raw pixels above the rain threshold.
pub fn patch_weight(y: &GridField, sw: &SamplerWeights) -> f64 {
    let wet = y.values().iter().filter(|v| **v > sw.rain_threshold_mm).count();
    sw.weight_for_fraction(wet as f64 / y.values().len() as f64)
}

/// Draws `n` indices i.i.d. with probability proportional to `weights`.
pub fn weighted_indices(weights: &[f64], n: usize, rng: &mut impl rand::Rng) -> Result<Vec<usize>> {
    use rand::distr::weighted::WeightedIndex;
    use rand::distr::Distribution;
    if weights.is_empty() {
        return Err(Error::InvalidArgument("cannot sample from an empty set".into()));
    }
    let dist = WeightedIndex::new(weights).map_err(|e| Error::InvalidArgument(format!("sampling weights: {e}")))?;
    Ok((0..n).map(|_| dist.sample(rng)).collect())
}

/// `n` draws with replacement, deterministic for a given seed.
pub fn weighted_sample(pairs: &[PatchPair], n: usize, seed: u64) -> Result<Vec<&PatchPair>> {
    let weights: Vec<f64> = pairs.iter().map(|p| p.weight).collect();
    let mut rng = crate::rng::stream(seed, &[crate::rng::label::SAMPLER]);
    Ok(weighted_indices(&weights, n, &mut rng)?.into_iter().map(|i| &pairs[i]).collect())
}
