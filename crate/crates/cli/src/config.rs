//! The experiment config: one JSON file, defaults filled in, leaves
//! overridable from the command line with `--set a.b.c=value`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use corrector_core::datagen::{Split, SynthConfig};
use corrector_core::losses::LossWeights;
use corrector_core::trainer::{AdamConfig, Mode, StageSchedule, TrainConfig};
use corrector_core::verify::EvalConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::Invalid;

pub const SCHEMA_VERSION: u32 = 1;
pub const EFFECTIVE_CONFIG: &str = "config.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Root of every artifact; `--out` takes precedence.
    pub output: Option<PathBuf>,
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub training: TrainingSection,
    pub generation: GenerationSection,
    pub evaluation: EvalConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSection {
    /// Existing dataset directory; defaults to `<out>/dataset`.
    pub path: Option<PathBuf>,
    pub n: usize,
    pub seed: u64,
    pub synth: SynthConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSection {
    pub mode: Mode,
    /// Divides every stated channel width; 1 is the full network.
    pub width_divisor: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Full-scale batches and uncapped epochs.
    Reference,
    /// Small batches and truncated epochs for a single CPU core.
    Desk,
}

/// Training settings other than the mode and width, which live in `model`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingSection {
    /// Chooses the defaults for every other field in this section.
    pub preset: Preset,
    pub seed: u64,
    pub stage1: StageSchedule,
    pub stage2: StageSchedule,
    pub stage3: StageSchedule,
    pub adam: AdamConfig,
    pub critic_steps_per_gen: usize,
    pub loss: LossWeights,
    pub validation_k: usize,
    pub validation_patches: Option<usize>,
}

impl TrainingSection {
    fn from_preset(preset: Preset) -> Self {
        let c = match preset {
            Preset::Reference => TrainConfig::default(),
            Preset::Desk => TrainConfig::desk(),
        };
        Self {
            preset,
            seed: c.seed,
            stage1: c.stage1,
            stage2: c.stage2,
            stage3: c.stage3,
            adam: c.adam,
            critic_steps_per_gen: c.critic_steps_per_gen,
            loss: c.loss,
            validation_k: c.validation_k,
            validation_patches: c.validation_patches,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationSection {
    pub seed: u64,
    pub split: Split,
}

impl ExperimentConfig {
    fn defaults(preset: Preset) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            output: None,
            dataset: DatasetSection { path: None, n: 2000, seed: 7, synth: SynthConfig::default() },
            model: ModelSection { mode: Mode::CorrectorGan, width_divisor: 4 },
            training: TrainingSection::from_preset(preset),
            generation: GenerationSection { seed: 1000, split: Split::Test },
            evaluation: EvalConfig::default(),
        }
    }

    /// Defaults, then the file (if any), then each `key=value` override.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let user = match file {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text).map_err(|e| Invalid(format!("config {}: {e}", p.display())))?
            }
            None => Value::Object(Map::new()),
        };
        if !user.is_object() {
            bail!(Invalid("config file must hold a JSON object".into()));
        }
        let mut patch = user.clone();
        let mut keys = leaf_paths(&user);
        for o in overrides {
            let (key, raw) = o.split_once('=').ok_or_else(|| Invalid(format!("override {o:?} is not key=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut patch, key, value)?;
            keys.push(key.to_string());
        }

        let preset = match patch.pointer("/training/preset") {
            Some(v) => serde_json::from_value(v.clone()).map_err(|e| Invalid(format!("training.preset: {e}")))?,
            None => Preset::Reference,
        };
        let mut merged = serde_json::to_value(Self::defaults(preset))?;
        merge(&mut merged, patch);
        let cfg: Self = serde_json::from_value(merged).map_err(|e| Invalid(format!("config: {e}")))?;

        // typos would otherwise be dropped silently by the defaults
        let effective = serde_json::to_value(&cfg)?;
        for key in keys {
            if effective.pointer(&pointer(&key)).is_none() {
                bail!(Invalid(format!("unknown config key {key:?}")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            bail!(Invalid(format!("config schema_version {} is not supported (expected {SCHEMA_VERSION})", self.schema_version)));
        }
        self.train_config().validate()?;
        self.evaluation.validate()?;
        self.dataset.synth.validate()?;
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            mode: self.model.mode,
            seed: t.seed,
            width_divisor: self.model.width_divisor,
            stage1: t.stage1,
            stage2: t.stage2,
            stage3: t.stage3,
            adam: t.adam,
            critic_steps_per_gen: t.critic_steps_per_gen,
            loss: t.loss,
            validation_k: t.validation_k,
            validation_patches: t.validation_patches,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n").with_context(|| format!("writing {}", path.display()))
    }
}

fn pointer(dotted: &str) -> String {
    dotted.split('.').map(|k| format!("/{k}")).collect()
}

fn leaf_paths(v: &Value) -> Vec<String> {
    fn walk(v: &Value, prefix: &str, out: &mut Vec<String>) {
        match v {
            Value::Object(m) if !m.is_empty() => {
                for (k, child) in m {
                    let p = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(child, &p, out);
                }
            }
            _ if !prefix.is_empty() => out.push(prefix.to_string()),
            _ => {}
        }
    }
    let mut out = Vec::new();
    walk(v, "", &mut out);
    out
}

fn set_path(root: &mut Value, dotted: &str, value: Value) -> Result<()> {
    let keys: Vec<&str> = dotted.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        bail!(Invalid(format!("malformed override key {dotted:?}")));
    }
    let mut node = root;
    for k in &keys[..keys.len() - 1] {
        let map = node.as_object_mut().ok_or_else(|| Invalid(format!("{dotted:?} descends into a non-object")))?;
        node = map.entry(k.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    let map = node.as_object_mut().ok_or_else(|| Invalid(format!("{dotted:?} descends into a non-object")))?;
    map.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

/// Recursive object merge; anything else in `patch` replaces `base`.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
