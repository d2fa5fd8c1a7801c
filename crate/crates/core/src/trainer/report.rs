use serde::{Deserialize, Serialize};

use super::config::Mode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    /// Mean training objective over the epoch (generator objective in stage 3).
    pub train_loss: f64,
    #[serde(default)]
    pub critic_loss: Option<f64>,
    #[serde(default)]
    pub heldout_loss: Option<f64>,
    #[serde(default)]
    pub val_crps: Option<f64>,
    #[serde(default)]
    pub checkpoint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: u8,
    /// Held-out loss before the first update of the stage.
    pub initial_heldout: Option<f64>,
    pub epochs: Vec<EpochRecord>,
    pub critic_updates: u64,
    pub generator_updates: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub mode: Mode,
    pub seed: u64,
    pub stages: Vec<StageReport>,
    pub selected_checkpoint: Option<String>,
    pub selected_epoch: Option<usize>,
    pub selected_val_crps: Option<f64>,
    pub wall_clock_s: f64,
}

impl TrainReport {
    pub fn new(mode: Mode, seed: u64) -> Self {
        Self { mode, seed, stages: Vec::new(), selected_checkpoint: None, selected_epoch: None, selected_val_crps: None, wall_clock_s: 0.0 }
    }

    pub fn stage(&self, stage: u8) -> Option<&StageReport> {
        self.stages.iter().find(|s| s.stage == stage)
    }

    pub fn stages_run(&self) -> Vec<u8> {
        self.stages.iter().map(|s| s.stage).collect()
    }

    /// Every recorded loss and score in order; the reproducibility fingerprint.
    pub fn loss_trace(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for s in &self.stages {
            out.extend(s.initial_heldout);
            for e in &s.epochs {
                out.push(e.train_loss);
                out.extend(e.critic_loss);
                out.extend(e.heldout_loss);
                out.extend(e.val_crps);
            }
        }
        out
    }

    pub fn val_crps_trace(&self) -> Vec<(usize, f64)> {
        self.stage(3).map(|s| s.epochs.iter().filter_map(|e| Some((e.epoch, e.val_crps?))).collect()).unwrap_or_default()
    }
}
