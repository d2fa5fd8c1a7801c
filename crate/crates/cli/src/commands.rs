use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use corrector_core::datagen::{load_dataset, save_dataset, Dataset, Split};
use corrector_core::fieldio::{read_grid_file, write_grid_file, GridFileHeader, Space};
use corrector_core::rng::derive_key;
use corrector_core::trainer::{Model, TrainReport, Trainer};
use corrector_core::verify::{interpolation_baseline, write_rank_csv, write_reliability_csv, EnsembleForecast, Evaluator, MetricReport};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, EFFECTIVE_CONFIG};
use crate::Invalid;

const ENSEMBLE_FORMAT: &str = "corrector-ensemble-v1";
const BASELINE: &str = "interpolation";

/// Exclusive hold on an output directory for the life of a command.
struct Lock(PathBuf);

impl Lock {
    fn acquire(out: &Path) -> Result<Self> {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        let path = out.join(".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(Self(path))
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                bail!("{} is locked by another command (remove {} if it is stale)", out.display(), path.display())
            }
            Err(e) => Err(e).with_context(|| format!("locking {}", out.display())),
        }
    }
}

impl Drop for Lock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

/// A resolved config bound to a locked output directory.
pub struct Run {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
    _lock: Lock,
}

impl Run {
    pub fn open(cfg: ExperimentConfig, out: Option<PathBuf>) -> Result<Self> {
        let out = out.or_else(|| cfg.output.clone()).ok_or_else(|| Invalid("no output directory: pass --out or set `output`".into()))?;
        let lock = Lock::acquire(&out)?;
        let run = Self { cfg, out, _lock: lock };
        run.cfg.write(&run.out.join(EFFECTIVE_CONFIG))?;
        Ok(run)
    }

    fn dir(&self, name: &str) -> Result<PathBuf> {
        let d = self.out.join(name);
        fs::create_dir_all(&d).with_context(|| format!("creating {}", d.display()))?;
        Ok(d)
    }

    fn dataset_dir(&self) -> PathBuf {
        self.cfg.dataset.path.clone().unwrap_or_else(|| self.out.join("dataset"))
    }

    fn dataset(&self) -> Result<Dataset> {
        let dir = self.dataset_dir();
        if !dir.join("manifest.json").is_file() {
            bail!(Invalid(format!("no dataset at {} (run synth-data first or set dataset.path)", dir.display())));
        }
        Ok(load_dataset(&dir)?)
    }

    fn checkpoint_dir(&self) -> PathBuf {
        self.out.join("checkpoints").join(self.cfg.model.mode.as_str())
    }
}

pub fn synth_data(run: &Run) -> Result<()> {
    let d = &run.cfg.dataset;
    if d.n == 0 {
        bail!(Invalid("dataset.n must be at least 1".into()));
    }
    let ds = Dataset::synthesize(d.n, d.seed, &d.synth)?;
    let dir = run.dataset_dir();
    save_dataset(&dir, &ds)?;
    let count = |s| ds.indices(s).len();
    println!(
        "wrote {} patches to {} (train {}, val {}, test {})",
        ds.len(),
        dir.display(),
        count(Split::Train),
        count(Split::Val),
        count(Split::Test)
    );
    Ok(())
}

pub fn train(run: &Run, resume: bool, max_epochs: Option<usize>) -> Result<()> {
    let ds = run.dataset()?;
    let dir = run.checkpoint_dir();
    let mut trainer = if resume {
        if !dir.join("state.json").is_file() {
            bail!(Invalid(format!("nothing to resume in {}", dir.display())));
        }
        let t = Trainer::resume(&dir)?;
        if t.config() != &run.cfg.train_config() {
            log::warn!("resuming with the stored training config; the current config differs");
        }
        t
    } else {
        if dir.exists() {
            fs::remove_dir_all(&dir).with_context(|| format!("clearing {}", dir.display()))?;
        }
        Trainer::new(run.cfg.train_config(), ds.manifest.normalization)?.with_checkpoints(&dir)
    };
    let finished = trainer.run_epochs(&ds, max_epochs.unwrap_or(usize::MAX))?;
    let report = trainer.report();
    let path = run.dir("reports")?.join(format!("train_report_{}.json", report.mode.as_str()));
    fs::write(&path, serde_json::to_string_pretty(report)? + "\n")?;
    if finished {
        println!("trained {} (stages {:?}); report in {}", report.mode.as_str(), report.stages_run(), path.display());
        if let (Some(name), Some(crps)) = (&report.selected_checkpoint, report.selected_val_crps) {
            println!("selected {name} with validation CRPS {crps:.4}");
        }
    } else {
        let p = trainer.progress();
        println!("paused before stage position {} epoch {}; continue with --resume", p.stage_pos, p.epoch);
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct EnsembleEntry {
    index: usize,
    file: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct EnsembleManifest {
    format: String,
    model: String,
    mode: String,
    checkpoint: String,
    k: usize,
    seed: u64,
    patches: Vec<EnsembleEntry>,
}

pub fn generate(run: &Run, checkpoint: Option<PathBuf>, k: Option<usize>, name: Option<String>) -> Result<()> {
    let ds = run.dataset()?;
    let path = checkpoint.unwrap_or_else(|| run.checkpoint_dir().join("final.json"));
    if !path.is_file() {
        bail!(Invalid(format!("checkpoint {} does not exist", path.display())));
    }
    let model = Model::load(&path, "")?;
    let spec = model.generator.spec;
    if spec.in_channels != model.plan.in_channels || spec.lo_size != 16 {
        bail!(Invalid(format!("checkpoint architecture {spec:?} does not fit 16x16 inputs")));
    }
    let k = k.unwrap_or(run.cfg.evaluation.k);
    if k == 0 {
        bail!(Invalid("ensemble size must be at least 1".into()));
    }
    let name = name.unwrap_or_else(|| model.plan.mode.as_str().to_string());
    let dir = run.dir("ensembles")?.join(&name);
    if dir.exists() {
        fs::remove_dir_all(&dir)?;
    }
    fs::create_dir_all(&dir)?;
    let g = &run.cfg.generation;
    let mut patches = Vec::new();
    for index in ds.indices(g.split) {
        let ens = model.sample_ensemble(&ds.pairs[index].x, k, derive_key(g.seed, &[index as u64]))?;
        let (h, w) = ens.dims();
        let file = format!("patch_{index:05}.rgf");
        write_grid_file(dir.join(&file), &GridFileHeader::new("precipitation", "mm", [k, h, w], Space::RawMm), ens.members())?;
        patches.push(EnsembleEntry { index, file });
    }
    let manifest = EnsembleManifest {
        format: ENSEMBLE_FORMAT.into(),
        model: name.clone(),
        mode: model.plan.mode.as_str().into(),
        checkpoint: path.display().to_string(),
        k,
        seed: g.seed,
        patches,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    println!("wrote {} ensembles of {k} members to {}", manifest.patches.len(), dir.display());
    Ok(())
}

fn read_manifest(dir: &Path) -> Result<EnsembleManifest> {
    let text = fs::read_to_string(dir.join("manifest.json")).with_context(|| format!("reading ensembles in {}", dir.display()))?;
    let m: EnsembleManifest = serde_json::from_str(&text).map_err(|e| Invalid(format!("{}: {e}", dir.display())))?;
    if m.format != ENSEMBLE_FORMAT {
        bail!(Invalid(format!("{}: unknown ensemble format {:?}", dir.display(), m.format)));
    }
    Ok(m)
}

pub fn evaluate(run: &Run, models: Vec<String>) -> Result<()> {
    let ds = run.dataset()?;
    let root = run.out.join("ensembles");
    let names = if models.is_empty() {
        let mut found = Vec::new();
        if root.is_dir() {
            for entry in fs::read_dir(&root)? {
                let p = entry?.path();
                if p.join("manifest.json").is_file() {
                    found.push(p.file_name().unwrap().to_string_lossy().into_owned());
                }
            }
        }
        found.sort();
        found
    } else {
        models
    };

    let manifests = names.iter().map(|n| read_manifest(&root.join(n))).collect::<Result<Vec<_>>>()?;
    let indices: Vec<usize> = match manifests.first() {
        Some(m) => m.patches.iter().map(|p| p.index).collect(),
        None => ds.indices(run.cfg.generation.split),
    };
    let set: BTreeSet<usize> = indices.iter().copied().collect();
    for m in &manifests {
        if m.patches.iter().map(|p| p.index).collect::<BTreeSet<_>>() != set {
            bail!(Invalid(format!("ensembles {:?} and {:?} cover different patches", manifests[0].model, m.model)));
        }
    }
    if let Some(&bad) = set.iter().find(|&&i| i >= ds.len()) {
        bail!(Invalid(format!("ensemble patch {bad} is not in the dataset")));
    }

    let eval = &run.cfg.evaluation;
    let mut reports: Vec<MetricReport> = Vec::new();
    for m in &manifests {
        let mut ev = Evaluator::new(eval)?;
        for p in &m.patches {
            let (_, members) = read_grid_file(root.join(&m.model).join(&p.file))?;
            ev.add(&EnsembleForecast::new(members)?, &ds.pairs[p.index].y_raw)?;
        }
        reports.push(ev.finish(&m.model, &m.mode)?);
    }
    let norm = ds.manifest.normalization;
    let mut ev = Evaluator::new(eval)?;
    for &i in &indices {
        let pair = &ds.pairs[i];
        ev.add(&interpolation_baseline(&pair.x, &norm, pair.y_raw.height())?, &pair.y_raw)?;
    }
    reports.push(ev.finish(BASELINE, "baseline")?);

    let dir = run.dir("reports")?;
    for r in &reports {
        write_reliability_csv(dir.join(format!("reliability_{}.csv", r.model)), &r.reliability)?;
        write_rank_csv(dir.join(format!("rank_{}.csv", r.model)), &r.rank_histogram)?;
    }
    fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(&reports)? + "\n")?;
    for r in &reports {
        println!("{:<16} CRPS {:.4} over {} patches, k = {}", r.model, r.crps, r.patches, r.k);
    }
    Ok(())
}

pub fn report(run: &Run) -> Result<()> {
    let dir = run.dir("reports")?;
    let metrics_path = dir.join("metrics.json");
    let metrics: Vec<MetricReport> = if metrics_path.is_file() {
        serde_json::from_str(&fs::read_to_string(&metrics_path)?)?
    } else {
        Vec::new()
    };
    let mut trains: Vec<TrainReport> = Vec::new();
    for entry in fs::read_dir(&dir)? {
        let p = entry?.path();
        let file = p.file_name().unwrap().to_string_lossy().into_owned();
        if file.starts_with("train_report_") && file.ends_with(".json") {
            trains.push(serde_json::from_str(&fs::read_to_string(&p)?)?);
        }
    }
    trains.sort_by(|a, b| a.mode.as_str().cmp(b.mode.as_str()));
    if metrics.is_empty() && trains.is_empty() {
        bail!(Invalid(format!("nothing to report in {} (run train or evaluate first)", dir.display())));
    }

    let mut curves = String::from("mode,stage,epoch,steps,train_loss,critic_loss,heldout_loss,val_crps\n");
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for t in &trains {
        for s in &t.stages {
            for e in &s.epochs {
                curves += &format!(
                    "{},{},{},{},{},{},{},{}\n",
                    t.mode.as_str(),
                    s.stage,
                    e.epoch,
                    e.steps,
                    e.train_loss,
                    opt(e.critic_loss),
                    opt(e.heldout_loss),
                    opt(e.val_crps)
                );
            }
        }
    }
    fs::write(dir.join("loss_curves.csv"), curves)?;

    let mut md = String::new();
    if !metrics.is_empty() {
        let thresholds: Vec<f64> = metrics[0].brier.iter().map(|b| b.threshold).collect();
        md += "| model | mode | CRPS |";
        for t in &thresholds {
            md += &format!(" Brier {t} mm |");
        }
        md += " calibration error (first threshold) | rank p-value |\n|---|---|---|";
        md += &"---|".repeat(thresholds.len() + 2);
        md += "\n";
        for r in &metrics {
            md += &format!("| {} | {} | {:.4} |", r.model, r.mode, r.crps);
            for t in &thresholds {
                md += &format!(" {} |", r.brier_at(*t).map_or("-".into(), |b| format!("{b:.5}")));
            }
            let cal = r.calibration_error.first().map_or("-".into(), |c| format!("{:.4}", c.value));
            md += &format!(" {cal} | {:.3e} |\n", r.rank_p_value);
        }
    }
    for t in &trains {
        md += &format!("\n{}: stages {:?}", t.mode.as_str(), t.stages_run());
        if let (Some(name), Some(c)) = (&t.selected_checkpoint, t.selected_val_crps) {
            md += &format!(", selected {name} (validation CRPS {c:.4})");
        }
        md += "\n";
    }
    fs::write(dir.join("summary.md"), &md)?;
    print!("{md}");
    Ok(())
}
