use serde::{Deserialize, Serialize};

use crate::datagen::INPUT_CHANNELS;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::netcore::ArchSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    CorrectorGan,
    /// No pre-training: adversarial stage only.
    Npt,
    /// Single precipitation member in, adversarial stage only.
    LeinStyle,
    /// Deterministic super-resolution of coarsened truth.
    PureSr,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::CorrectorGan => "corrector_gan",
            Mode::Npt => "npt",
            Mode::LeinStyle => "lein_style",
            Mode::PureSr => "pure_sr",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase().replace('-', "_")))
            .map_err(|_| Error::InvalidArgument(format!("unknown mode {s:?}")))
    }
}

/// What the network sees as its low-resolution input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    /// All 24 forecast channels.
    FullStack,
    /// One precipitation member.
    SingleMember,
    /// Coarsened truth in training, one member per output at evaluation.
    CoarseTruth,
}

/// Effective pipeline for a mode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelinePlan {
    pub mode: Mode,
    pub stages: Vec<u8>,
    pub in_channels: usize,
    pub input: InputKind,
    pub stochastic: bool,
}

pub fn configure_mode(mode: Mode) -> PipelinePlan {
    let (stages, in_channels, input, stochastic) = match mode {
        Mode::CorrectorGan => (vec![1, 2, 3], INPUT_CHANNELS, InputKind::FullStack, true),
        Mode::Npt => (vec![3], INPUT_CHANNELS, InputKind::FullStack, true),
        Mode::LeinStyle => (vec![3], 1, InputKind::SingleMember, true),
        Mode::PureSr => (vec![2], 1, InputKind::CoarseTruth, false),
    };
    PipelinePlan { mode, stages, in_channels, input, stochastic }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.0, beta2: 0.9, eps: 1e-7 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageSchedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Truncates each epoch to at most this many optimizer steps.
    #[serde(default)]
    pub max_steps_per_epoch: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub mode: Mode,
    pub seed: u64,
    pub width_divisor: usize,
    pub stage1: StageSchedule,
    pub stage2: StageSchedule,
    pub stage3: StageSchedule,
    pub adam: AdamConfig,
    pub critic_steps_per_gen: usize,
    pub loss: LossWeights,
    /// Ensemble size for the per-epoch validation CRPS.
    pub validation_k: usize,
    /// Use at most this many validation patches per evaluation.
    pub validation_patches: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let s = |epochs, batch_size| StageSchedule { epochs, batch_size, lr: 5e-5, max_steps_per_epoch: None };
        Self {
            mode: Mode::CorrectorGan,
            seed: 0,
            width_divisor: 4,
            stage1: s(5, 128),
            stage2: s(7, 128),
            stage3: s(35, 256),
            adam: AdamConfig::default(),
            critic_steps_per_gen: 5,
            loss: LossWeights::default(),
            validation_k: 6,
            validation_patches: None,
        }
    }
}

impl TrainConfig {
    /// Small batches, larger steps and truncated epochs for single-core runs.
    pub fn desk() -> Self {
        Self {
            stage1: StageSchedule { epochs: 5, batch_size: 16, lr: 1e-3, max_steps_per_epoch: None },
            stage2: StageSchedule { epochs: 3, batch_size: 16, lr: 5e-4, max_steps_per_epoch: Some(40) },
            stage3: StageSchedule { epochs: 4, batch_size: 8, lr: 2e-4, max_steps_per_epoch: Some(10) },
            validation_patches: Some(60),
            ..Self::default()
        }
    }

    pub fn schedule(&self, stage: u8) -> &StageSchedule {
        match stage {
            1 => &self.stage1,
            2 => &self.stage2,
            _ => &self.stage3,
        }
    }

    pub fn plan(&self) -> PipelinePlan {
        configure_mode(self.mode)
    }

    pub fn arch(&self) -> ArchSpec {
        ArchSpec { in_channels: self.plan().in_channels, width_divisor: self.width_divisor, ..ArchSpec::default() }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, s) in [&self.stage1, &self.stage2, &self.stage3].into_iter().enumerate() {
            if s.epochs == 0 || s.batch_size == 0 || s.max_steps_per_epoch == Some(0) {
                return Err(Error::InvalidArgument(format!("stage {} needs positive epochs, batch size and step cap", i + 1)));
            }
            if !(s.lr >= 0.0 && s.lr.is_finite()) {
                return Err(Error::InvalidArgument(format!("stage {} learning rate {} is invalid", i + 1, s.lr)));
            }
        }
        let a = &self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return Err(Error::InvalidArgument(format!("invalid Adam settings {a:?}")));
        }
        if self.critic_steps_per_gen == 0 || self.validation_k == 0 || self.validation_patches == Some(0) {
            return Err(Error::InvalidArgument("critic steps, validation k and validation patches must be positive".into()));
        }
        self.loss.validate()?;
        self.arch().validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_plans() {
        assert_eq!(configure_mode(Mode::CorrectorGan).stages, vec![1, 2, 3]);
        assert_eq!(configure_mode(Mode::Npt).stages, vec![3]);
        let lein = configure_mode(Mode::LeinStyle);
        assert_eq!((lein.in_channels, lein.stages.clone()), (1, vec![3]));
        let sr = configure_mode(Mode::PureSr);
        assert!(!sr.stochastic && !sr.stages.contains(&1));
    }

    #[test]
    fn defaults_and_parsing() {
        let c = TrainConfig::default();
        assert_eq!((c.stage1.epochs, c.stage2.epochs, c.stage3.epochs), (5, 7, 35));
        assert_eq!((c.stage1.batch_size, c.stage3.batch_size), (128, 256));
        assert_eq!((c.stage1.lr, c.adam.beta1, c.adam.beta2), (5e-5, 0.0, 0.9));
        assert_eq!(c.critic_steps_per_gen, 5);
        c.validate().unwrap();
        TrainConfig::desk().validate().unwrap();
        assert_eq!("lein-style".parse::<Mode>().unwrap(), Mode::LeinStyle);
        assert!("gan".parse::<Mode>().is_err());
        let bad = TrainConfig { stage2: StageSchedule { epochs: 0, ..c.stage2 }, ..c };
        assert!(bad.validate().is_err());
    }
}
