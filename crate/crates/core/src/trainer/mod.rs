//! The three-stage schedule, its ablation modes, checkpointing and
//! validation-CRPS model selection.

mod adam;
mod config;
mod model;
mod report;

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use config::{configure_mode, AdamConfig, InputKind, Mode, PipelinePlan, StageSchedule, TrainConfig};
pub use model::Model;
pub use report::{EpochRecord, StageReport, TrainReport};

use crate::datagen::{weighted_indices, Dataset, NormalizationSpec, PatchPair, Split};
use crate::error::{Error, Result};
use crate::losses::{critic_step, generator_loss, stage1_loss, stage2_loss, ConditionedCritic};
use crate::netcore::{enable_flush_to_zero, load_checkpoint, save_checkpoint, Checkpoint, Discriminator, ModelParams, NoiseSample, ParamGroup};
use crate::rng::{derive_key, label, stream};
use crate::verify::crps_field;
use model::field_tensor;

const STATE: &str = "state";
const GENERATOR_GROUPS: [ParamGroup; 2] = [ParamGroup::Corrector, ParamGroup::SuperResolver];

/// Position of the next epoch to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    /// Index into the plan's stage list.
    pub stage_pos: usize,
    pub epoch: usize,
}

#[derive(Serialize, Deserialize)]
struct StateMeta {
    config: TrainConfig,
    normalization: NormalizationSpec,
    progress: Progress,
    adam_g_t: u64,
    adam_d_t: u64,
    report: TrainReport,
}

pub fn checkpoint_name(stage: u8, epoch: Option<usize>) -> String {
    match epoch {
        Some(e) => format!("stage{stage}_epoch{e:03}"),
        None => format!("stage{stage}"),
    }
}

fn stage_label(stage: u8) -> u64 {
    match stage {
        1 => label::STAGE1,
        2 => label::STAGE2,
        _ => label::STAGE3,
    }
}

fn finite(v: f64, stage: u8, epoch: usize, step: usize, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Divergence(format!("stage {stage}, epoch {epoch}, step {step}: {what} is {v}")))
    }
}

pub struct Trainer {
    cfg: TrainConfig,
    model: Model,
    critic: Discriminator,
    critic_params: ModelParams<f32>,
    adam_g: Adam,
    adam_d: Adam,
    best: Option<ModelParams<f32>>,
    progress: Progress,
    report: TrainReport,
    checkpoint_dir: Option<PathBuf>,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, normalization: NormalizationSpec) -> Result<Self> {
        cfg.validate()?;
        normalization.validate()?;
        let arch = cfg.arch();
        let critic = Discriminator::new(arch)?;
        let gen_params = crate::netcore::Generator::new(arch)?.init_params(derive_key(cfg.seed, &[label::INIT, 0]));
        let critic_params = critic.init_params(derive_key(cfg.seed, &[label::INIT, 1]));
        let model = Model::new(cfg.mode, arch, gen_params, normalization)?;
        Ok(Self {
            adam_g: Adam::new(&model.params),
            adam_d: Adam::new(&critic_params),
            report: TrainReport::new(cfg.mode, cfg.seed),
            cfg,
            model,
            critic,
            critic_params,
            best: None,
            progress: Progress { stage_pos: 0, epoch: 0 },
            checkpoint_dir: None,
        })
    }

    /// Writes per-epoch state and per-stage checkpoints under `dir`.
    pub fn with_checkpoints(mut self, dir: impl Into<PathBuf>) -> Self {
        self.checkpoint_dir = Some(dir.into());
        self
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn plan(&self) -> &PipelinePlan {
        &self.model.plan
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn critic_params(&self) -> &ModelParams<f32> {
        &self.critic_params
    }

    pub fn report(&self) -> &TrainReport {
        &self.report
    }

    pub fn progress(&self) -> Progress {
        self.progress
    }

    pub fn is_finished(&self) -> bool {
        self.progress.stage_pos >= self.model.plan.stages.len()
    }

    /// Runs every remaining epoch of the plan.
    pub fn run(&mut self, ds: &Dataset) -> Result<TrainReport> {
        self.run_epochs(ds, usize::MAX)?;
        Ok(self.report.clone())
    }

    /// Runs at most `budget` epochs; returns whether the plan is complete.
    pub fn run_epochs(&mut self, ds: &Dataset, budget: usize) -> Result<bool> {
        enable_flush_to_zero();
        let start = Instant::now();
        let mut left = budget;
        while !self.is_finished() && left > 0 {
            self.advance_epoch(ds)?;
            left -= 1;
        }
        self.report.wall_clock_s += start.elapsed().as_secs_f64();
        if self.is_finished() {
            self.finalize()?;
        }
        Ok(self.is_finished())
    }

    pub fn run_stage1(&mut self, ds: &Dataset) -> Result<StageReport> {
        self.run_stage(1, ds)
    }

    pub fn run_stage2(&mut self, ds: &Dataset) -> Result<StageReport> {
        self.run_stage(2, ds)
    }

    pub fn run_stage3(&mut self, ds: &Dataset) -> Result<StageReport> {
        self.run_stage(3, ds)
    }

    /// Runs all epochs of `stage`, which must be the next stage of the plan.
    pub fn run_stage(&mut self, stage: u8, ds: &Dataset) -> Result<StageReport> {
        let plan = &self.model.plan;
        let Some(pos) = plan.stages.iter().position(|s| *s == stage) else {
            return Err(Error::InvalidArgument(format!("mode {} does not run stage {stage}", plan.mode.as_str())));
        };
        if pos != self.progress.stage_pos {
            let next = plan.stages.get(self.progress.stage_pos).map_or("none".to_string(), |s| s.to_string());
            return Err(Error::InvalidArgument(format!("stage {stage} requested but the next stage in the plan is {next}")));
        }
        enable_flush_to_zero();
        let start = Instant::now();
        while self.progress.stage_pos == pos {
            self.advance_epoch(ds)?;
        }
        self.report.wall_clock_s += start.elapsed().as_secs_f64();
        if self.is_finished() {
            self.finalize()?;
        }
        Ok(self.report.stage(stage).expect("stage recorded").clone())
    }

    fn train_pairs<'a>(&self, ds: &'a Dataset) -> Result<Vec<&'a PatchPair>> {
        let train = ds.split(Split::Train);
        if train.is_empty() {
            return Err(Error::InvalidArgument("dataset has no training pairs".into()));
        }
        Ok(train)
    }

    fn heldout_pairs<'a>(&self, ds: &'a Dataset) -> Vec<&'a PatchPair> {
        let mut val = ds.split(Split::Val);
        if let Some(n) = self.cfg.validation_patches {
            val.truncate(n);
        }
        val
    }

    fn advance_epoch(&mut self, ds: &Dataset) -> Result<()> {
        let stage = self.model.plan.stages[self.progress.stage_pos];
        let epoch = self.progress.epoch;
        if epoch == 0 {
            self.begin_stage(stage, ds)?;
        }
        let record = match stage {
            1 | 2 => self.supervised_epoch(stage, epoch, ds)?,
            _ => self.adversarial_epoch(epoch, ds)?,
        };
        log::info!("stage {stage} epoch {epoch}: {record:?}");
        self.report.stages.last_mut().expect("stage begun").epochs.push(record);
        self.progress.epoch += 1;
        if self.progress.epoch == self.cfg.schedule(stage).epochs {
            self.end_stage(stage)?;
            self.progress = Progress { stage_pos: self.progress.stage_pos + 1, epoch: 0 };
        }
        self.save_state()
    }

    fn begin_stage(&mut self, stage: u8, ds: &Dataset) -> Result<()> {
        if self.heldout_pairs(ds).is_empty() {
            return Err(Error::InvalidArgument("dataset has no validation pairs".into()));
        }
        self.adam_g = Adam::new(&self.model.params);
        self.adam_d = Adam::new(&self.critic_params);
        let initial_heldout = match stage {
            1 | 2 => Some(self.heldout_loss(stage, ds)?),
            _ => None,
        };
        self.report.stages.push(StageReport { stage, initial_heldout, epochs: Vec::new(), critic_updates: 0, generator_updates: 0 });
        Ok(())
    }

    fn end_stage(&mut self, stage: u8) -> Result<()> {
        if stage == 3 {
            let trace = self.report.val_crps_trace();
            let (epoch, crps) = trace
                .iter()
                .copied()
                .fold(None, |acc: Option<(usize, f64)>, (e, c)| match acc {
                    Some((_, best)) if best <= c => acc,
                    _ => Some((e, c)),
                })
                .ok_or_else(|| Error::InvalidArgument("stage 3 recorded no validation CRPS".into()))?;
            self.report.selected_epoch = Some(epoch);
            self.report.selected_val_crps = Some(crps);
            self.report.selected_checkpoint = Some(checkpoint_name(3, Some(epoch)));
            if let Some(best) = self.best.take() {
                self.model.params = best;
            }
        }
        if let Some(dir) = &self.checkpoint_dir {
            self.model.save(dir, &checkpoint_name(stage, None), self.cfg.seed, self.report.selected_epoch)?;
        }
        Ok(())
    }

    fn finalize(&mut self) -> Result<()> {
        if let Some(dir) = &self.checkpoint_dir {
            self.model.save(dir, "final", self.cfg.seed, self.report.selected_epoch)?;
            std::fs::write(dir.join("train_report.json"), serde_json::to_string_pretty(&self.report)? + "\n")?;
        }
        Ok(())
    }

    /// Mean stage objective over the held-out patches at z = 0.
    pub fn heldout_loss(&self, stage: u8, ds: &Dataset) -> Result<f64> {
        let pairs = self.heldout_pairs(ds);
        let gen = &self.model.generator;
        let z = NoiseSample::zeros(gen.spec.lo_size);
        let mut total = 0.0;
        for p in &pairs {
            let x = self.model.heldout_input(p)?;
            let yc = field_tensor(&p.y_coarse);
            total += if stage == 1 {
                let (g, _) = gen.forward_corrector(&self.model.params, &x, &z)?;
                stage1_loss(&g, &yc, &self.cfg.loss)?.value as f64
            } else {
                let (out, _) = gen.forward(&self.model.params, &x, &z)?;
                stage2_loss(&out.lo_res_proxy, &out.hi_res, &yc, &field_tensor(&p.y))?.value as f64
            };
        }
        Ok(total / pairs.len() as f64)
    }

    /// Mean CRPS over the held-out patches with `validation_k` members.
    pub fn validation_crps(&self, ds: &Dataset) -> Result<f64> {
        validation_crps(&self.model, &self.heldout_pairs(ds), self.cfg.validation_k, self.cfg.seed)
    }

    /// Weighted draws for one epoch: `steps x draws_per_step` batches.
    fn epoch_draws(&self, stage: u8, epoch: usize, train: &[&PatchPair], draws_per_step: usize) -> Result<(usize, Vec<usize>)> {
        let sched = self.cfg.schedule(stage);
        let mut steps = train.len().div_ceil(sched.batch_size);
        if let Some(cap) = sched.max_steps_per_epoch {
            steps = steps.min(cap);
        }
        let weights: Vec<f64> = train.iter().map(|p| p.weight).collect();
        let mut rng = stream(self.cfg.seed, &[stage_label(stage), epoch as u64, 0]);
        let idx = weighted_indices(&weights, steps * draws_per_step * sched.batch_size, &mut rng)?;
        Ok((steps, idx))
    }

    fn sample_rng(&self, stage: u8, epoch: usize, step: usize, slot: usize, b: usize) -> crate::rng::StreamRng {
        stream(self.cfg.seed, &[stage_label(stage), epoch as u64, 1, step as u64, slot as u64, b as u64])
    }

    fn supervised_epoch(&mut self, stage: u8, epoch: usize, ds: &Dataset) -> Result<EpochRecord> {
        let train = self.train_pairs(ds)?;
        let sched = *self.cfg.schedule(stage);
        let (steps, draws) = self.epoch_draws(stage, epoch, &train, 1)?;
        let gen = &self.model.generator;
        let z = NoiseSample::zeros(gen.spec.lo_size);
        let groups: &[ParamGroup] = if stage == 1 { &[ParamGroup::Corrector] } else { &GENERATOR_GROUPS };
        let inv_b = 1.0 / sched.batch_size as f32;
        let mut grads = self.model.params.zeros_like();
        let mut total = 0.0;
        for step in 0..steps {
            grads.fill_zero();
            for b in 0..sched.batch_size {
                let pair = train[draws[step * sched.batch_size + b]];
                let x = self.model.training_input(pair, &mut self.sample_rng(stage, epoch, step, 0, b))?;
                let yc = field_tensor(&pair.y_coarse);
                if stage == 1 {
                    let (g, tape) = gen.forward_corrector(&self.model.params, &x, &z)?;
                    let mut l = stage1_loss(&g, &yc, &self.cfg.loss)?;
                    total += finite(l.value as f64, stage, epoch, step, "loss")?;
                    l.grad.scale(inv_b);
                    gen.backward(&self.model.params, &tape, None, Some(l.grad), &mut grads)?;
                } else {
                    let (out, tape) = gen.forward(&self.model.params, &x, &z)?;
                    let mut l = stage2_loss(&out.lo_res_proxy, &out.hi_res, &yc, &field_tensor(&pair.y))?;
                    total += finite(l.value as f64, stage, epoch, step, "loss")?;
                    l.grad_lo.scale(inv_b);
                    l.grad_hi.scale(inv_b);
                    gen.backward(&self.model.params, &tape, Some(l.grad_hi), Some(l.grad_lo), &mut grads)?;
                }
            }
            self.adam_g.step(&self.cfg.adam, sched.lr, &mut self.model.params, &grads, groups);
            if !self.model.params.is_finite() {
                return Err(Error::Divergence(format!("stage {stage}, epoch {epoch}, step {step}: non-finite generator parameters")));
            }
            self.report.stages.last_mut().expect("stage begun").generator_updates += 1;
        }
        Ok(EpochRecord {
            epoch,
            steps,
            train_loss: total / (steps * sched.batch_size) as f64,
            critic_loss: None,
            heldout_loss: Some(self.heldout_loss(stage, ds)?),
            val_crps: None,
            checkpoint: None,
        })
    }

    fn adversarial_epoch(&mut self, epoch: usize, ds: &Dataset) -> Result<EpochRecord> {
        use rand::Rng;
        let stage = 3;
        let train = self.train_pairs(ds)?;
        let sched = self.cfg.stage3;
        let n_critic = self.cfg.critic_steps_per_gen;
        let per_step = n_critic + 1;
        let (steps, draws) = self.epoch_draws(stage, epoch, &train, per_step)?;
        let bsz = sched.batch_size;
        let inv_b = 1.0 / bsz as f32;
        let w = self.cfg.loss;
        let lambda = w.lambda as f32;
        let mut g_grads = self.model.params.zeros_like();
        let mut d_grads = self.critic_params.zeros_like();
        let (mut g_total, mut d_total) = (0.0, 0.0);
        for step in 0..steps {
            let batch = |slot: usize, b: usize| train[draws[(step * per_step + slot) * bsz + b]];
            for slot in 0..n_critic {
                d_grads.fill_zero();
                for b in 0..bsz {
                    let pair = batch(slot, b);
                    let mut rng = self.sample_rng(stage, epoch, step, slot, b);
                    let x = self.model.training_input(pair, &mut rng)?;
                    let z = self.model.noise(&mut rng);
                    let eps: f32 = rng.random();
                    let (fake, _) = self.model.generator.forward(&self.model.params, &x, &z)?;
                    let y = field_tensor(&pair.y);
                    let l = critic_step(&self.critic, &self.critic_params, &x, &y, &fake.hi_res, lambda, eps, inv_b, &mut d_grads)?;
                    d_total += finite(l.value as f64, stage, epoch, step, "critic loss")?;
                }
                self.adam_d.step(&self.cfg.adam, sched.lr, &mut self.critic_params, &d_grads, &[ParamGroup::Critic]);
                if !self.critic_params.is_finite() {
                    return Err(Error::Divergence(format!("stage 3, epoch {epoch}, step {step}: non-finite critic parameters")));
                }
                self.report.stages.last_mut().expect("stage begun").critic_updates += 1;
            }

            g_grads.fill_zero();
            for b in 0..bsz {
                let pair = batch(n_critic, b);
                let mut rng = self.sample_rng(stage, epoch, step, n_critic, b);
                let x = self.model.training_input(pair, &mut rng)?;
                let mut outs = Vec::with_capacity(w.ensemble_k_loss);
                let mut tapes = Vec::with_capacity(w.ensemble_k_loss);
                for _ in 0..w.ensemble_k_loss {
                    let z = self.model.noise(&mut rng);
                    let (out, tape) = self.model.generator.forward(&self.model.params, &x, &z)?;
                    outs.push(out);
                    tapes.push(tape);
                }
                let critic = ConditionedCritic { disc: &self.critic, params: &self.critic_params, x: &x };
                let l = generator_loss(&critic, &field_tensor(&pair.y), &field_tensor(&pair.y_coarse), &outs, &w)?;
                g_total += finite(l.value as f64, stage, epoch, step, "generator loss")?;
                for ((tape, mut dh), mut dl) in tapes.iter().zip(l.d_hi).zip(l.d_lo) {
                    dh.scale(inv_b);
                    dl.scale(inv_b);
                    self.model.generator.backward(&self.model.params, tape, Some(dh), Some(dl), &mut g_grads)?;
                }
            }
            self.adam_g.step(&self.cfg.adam, sched.lr, &mut self.model.params, &g_grads, &GENERATOR_GROUPS);
            if !self.model.params.is_finite() {
                return Err(Error::Divergence(format!("stage 3, epoch {epoch}, step {step}: non-finite generator parameters")));
            }
            self.report.stages.last_mut().expect("stage begun").generator_updates += 1;
        }

        let val_crps = self.validation_crps(ds)?;
        let is_best = self.report.val_crps_trace().iter().all(|(_, c)| val_crps < *c);
        if is_best {
            self.best = Some(self.model.params.clone());
        }
        let name = checkpoint_name(3, Some(epoch));
        if let Some(dir) = &self.checkpoint_dir {
            self.model.save(dir, &name, self.cfg.seed, Some(epoch))?;
        }
        Ok(EpochRecord {
            epoch,
            steps,
            train_loss: g_total / (steps * bsz) as f64,
            critic_loss: Some(d_total / (steps * n_critic * bsz) as f64),
            heldout_loss: None,
            val_crps: Some(val_crps),
            checkpoint: Some(name),
        })
    }

    fn state_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(self.model.generator.spec, self.cfg.seed, STATE);
        ck.insert_params("gen", &self.model.params);
        ck.insert_params("critic", &self.critic_params);
        ck.insert_params("adam_g_m", &self.adam_g.m);
        ck.insert_params("adam_g_v", &self.adam_g.v);
        ck.insert_params("adam_d_m", &self.adam_d.m);
        ck.insert_params("adam_d_v", &self.adam_d.v);
        if let Some(best) = &self.best {
            ck.insert_params("best", best);
        }
        ck.metadata = serde_json::to_value(StateMeta {
            config: self.cfg.clone(),
            normalization: self.model.normalization,
            progress: self.progress,
            adam_g_t: self.adam_g.t,
            adam_d_t: self.adam_d.t,
            report: self.report.clone(),
        })?;
        Ok(ck)
    }

    fn save_state(&self) -> Result<()> {
        if let Some(dir) = &self.checkpoint_dir {
            save_checkpoint(dir, STATE, &self.state_checkpoint()?)?;
        }
        Ok(())
    }

    /// Continues a run from the last state written under `dir`.
    pub fn resume(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let ck = load_checkpoint(dir, STATE)?;
        let meta: StateMeta = serde_json::from_value(ck.metadata.clone()).map_err(|e| Error::Format(format!("training state metadata: {e}")))?;
        let mut t = Self::new(meta.config, meta.normalization)?.with_checkpoints(dir);
        if ck.arch != t.model.generator.spec {
            return Err(Error::Format("training state architecture does not match its config".into()));
        }
        ck.extract_params("gen", &mut t.model.params)?;
        ck.extract_params("critic", &mut t.critic_params)?;
        ck.extract_params("adam_g_m", &mut t.adam_g.m)?;
        ck.extract_params("adam_g_v", &mut t.adam_g.v)?;
        ck.extract_params("adam_d_m", &mut t.adam_d.m)?;
        ck.extract_params("adam_d_v", &mut t.adam_d.v)?;
        if ck.has_prefix("best") {
            let mut best = t.model.params.clone();
            ck.extract_params("best", &mut best)?;
            t.best = Some(best);
        }
        t.adam_g.t = meta.adam_g_t;
        t.adam_d.t = meta.adam_d_t;
        t.progress = meta.progress;
        t.report = meta.report;
        Ok(t)
    }
}

/// Mean CRPS of `model` over `pairs` with `k` members, pair `i` sampled
/// with seed `derive_key(seed, [VALIDATION, i])`. This is the selection score.
pub fn validation_crps(model: &Model, pairs: &[&PatchPair], k: usize, seed: u64) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no validation pairs".into()));
    }
    let mut total = 0.0;
    for (i, p) in pairs.iter().enumerate() {
        let ens = model.sample_ensemble(&p.x, k, derive_key(seed, &[label::VALIDATION, i as u64]))?;
        total += crps_field(&ens, &p.y_raw)?;
    }
    Ok(total / pairs.len() as f64)
}
