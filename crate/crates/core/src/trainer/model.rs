//! A trained generator bound to its input convention.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{configure_mode, InputKind, Mode, PipelinePlan};
use crate::datagen::{normalize, InputPatch, NormalizationSpec, PatchPair, MEMBERS};
use crate::error::{Error, Result};
use crate::fieldio::{coarsen, GridField, Space};
use crate::netcore::{load_checkpoint, save_checkpoint, ArchSpec, Checkpoint, Generator, ModelParams, NoiseSample, Tensor, UPSCALE};
use crate::rng::{label, stream};
use crate::verify::EnsembleForecast;

pub(crate) const GEN_PREFIX: &str = "gen";

pub(crate) fn field_tensor(f: &GridField) -> Tensor<f32> {
    let (h, w) = f.dims();
    Tensor { c: 1, h, w, data: f.values().to_vec() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelMeta {
    mode: Mode,
    normalization: NormalizationSpec,
    #[serde(default)]
    selected_epoch: Option<usize>,
}

pub struct Model {
    pub generator: Generator,
    pub params: ModelParams<f32>,
    pub plan: PipelinePlan,
    pub normalization: NormalizationSpec,
}

impl Model {
    pub fn new(mode: Mode, arch: ArchSpec, params: ModelParams<f32>, normalization: NormalizationSpec) -> Result<Self> {
        let plan = configure_mode(mode);
        if arch.in_channels != plan.in_channels {
            return Err(Error::InvalidArgument(format!("{} models take {} input channels, arch has {}", mode.as_str(), plan.in_channels, arch.in_channels)));
        }
        let generator = Generator::new(arch)?;
        generator.init_params::<f32>(0).check_compatible(&params)?;
        Ok(Self { generator, params, plan, normalization })
    }

    /// Network input for the training example, as seen during optimisation.
    pub fn training_input(&self, pair: &PatchPair, rng: &mut impl Rng) -> Result<Tensor<f32>> {
        Ok(match self.plan.input {
            InputKind::FullStack => pair.x.to_tensor(),
            InputKind::SingleMember => pair.x.precip_member(rng.random_range(0..MEMBERS)),
            InputKind::CoarseTruth => field_tensor(&normalize(&coarsen(&pair.y_raw, UPSCALE)?, &self.normalization)?),
        })
    }

    /// Deterministic counterpart of [`Model::training_input`] for held-out losses.
    pub fn heldout_input(&self, pair: &PatchPair) -> Result<Tensor<f32>> {
        match self.plan.input {
            InputKind::SingleMember => Ok(pair.x.precip_member(0)),
            _ => self.training_input(pair, &mut stream(0, &[])),
        }
    }

    /// Network input for ensemble member `j`.
    pub fn member_input(&self, x: &InputPatch, j: usize) -> Tensor<f32> {
        match self.plan.input {
            InputKind::FullStack => x.to_tensor(),
            InputKind::SingleMember | InputKind::CoarseTruth => x.precip_member(j),
        }
    }

    pub fn noise(&self, rng: &mut impl Rng) -> NoiseSample<f32> {
        let n = self.generator.spec.lo_size;
        if self.plan.stochastic {
            NoiseSample::standard_normal(n, rng)
        } else {
            NoiseSample::zeros(n)
        }
    }

    /// `k` raw-space members; member `j` depends only on `(seed, j)`.
    pub fn sample_ensemble(&self, x: &InputPatch, k: usize, seed: u64) -> Result<EnsembleForecast> {
        if k == 0 {
            return Err(Error::InvalidArgument("ensemble size must be at least 1".into()));
        }
        let hi = self.generator.spec.hi_size();
        let members = (0..k)
            .map(|j| {
                let mut rng = stream(seed, &[label::ENSEMBLE, j as u64]);
                let z = self.noise(&mut rng);
                let (out, _) = self.generator.forward(&self.params, &self.member_input(x, j), &z)?;
                let norm = GridField::new(out.hi_res.data, hi, hi, Space::Normalized)?;
                norm.map(Space::RawMm, |u| self.normalization.inverse(u))
            })
            .collect::<Result<Vec<_>>>()?;
        EnsembleForecast::new(members)
    }

    pub fn to_checkpoint(&self, seed: u64, selected_epoch: Option<usize>) -> Checkpoint {
        let mut ck = Checkpoint::new(self.generator.spec, seed, "model");
        ck.insert_params(GEN_PREFIX, &self.params);
        ck.metadata = serde_json::to_value(ModelMeta { mode: self.plan.mode, normalization: self.normalization, selected_epoch }).expect("plain data");
        ck
    }

    pub fn save(&self, dir: impl AsRef<Path>, name: &str, seed: u64, selected_epoch: Option<usize>) -> Result<()> {
        save_checkpoint(dir, name, &self.to_checkpoint(seed, selected_epoch))?;
        Ok(())
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta: ModelMeta = serde_json::from_value(ck.metadata.clone())
            .map_err(|e| Error::Format(format!("checkpoint is not a model checkpoint: {e}")))?;
        let generator = Generator::new(ck.arch)?;
        let mut params = generator.init_params(ck.seed);
        ck.extract_params(GEN_PREFIX, &mut params)?;
        Self::new(meta.mode, ck.arch, params, meta.normalization)
    }

    pub fn load(dir: impl AsRef<Path>, name: &str) -> Result<Self> {
        Self::from_checkpoint(&load_checkpoint(dir, name)?)
    }
}
