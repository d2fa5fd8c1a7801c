use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use corrector_core::datagen::load_dataset;
use corrector_core::fieldio::{read_grid_file, write_grid_file, GridFileHeader, Space};
use serde_json::{json, Value};

const QUICK: &[&str] = &[
    "dataset.n=40",
    "model.width_divisor=16",
    "training.stage1={\"epochs\":1,\"batch_size\":2,\"lr\":0.001,\"max_steps_per_epoch\":2}",
    "training.stage2={\"epochs\":1,\"batch_size\":2,\"lr\":0.001,\"max_steps_per_epoch\":2}",
    "training.stage3={\"epochs\":2,\"batch_size\":2,\"lr\":0.0001,\"max_steps_per_epoch\":1}",
    "training.validation_k=2",
    "training.validation_patches=2",
];

fn corrector(out: &Path, args: &[&str], extra: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_corrector"));
    cmd.args(args).arg("--out").arg(out);
    for s in QUICK.iter().chain(extra) {
        cmd.args(["--set", s]);
    }
    cmd.env("RUST_LOG", "warn").output().unwrap()
}

#[track_caller]
fn ok(out: &Path, args: &[&str], extra: &[&str]) -> String {
    let o = corrector(out, args, extra);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn json_file(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn synth(out: &Path) {
    ok(out, &["synth-data"], &[]);
}

#[test]
fn invalid_input_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    for extra in ["dataset.n=0", "training.stage1.epoch=2", "model.mode=gan"] {
        let o = corrector(dir.path(), &["synth-data"], &[extra]);
        assert_eq!(o.status.code(), Some(2), "{extra}: {}", String::from_utf8_lossy(&o.stderr));
    }
    // nothing to train on yet
    assert_eq!(corrector(dir.path(), &["train"], &[]).status.code(), Some(2));
    assert_eq!(corrector(dir.path(), &["bogus-command"], &[]).status.code(), Some(2));
}

#[test]
fn locked_output_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join(".lock"), "1").unwrap();
    assert_eq!(corrector(dir.path(), &["synth-data"], &[]).status.code(), Some(3));
}

#[test]
fn synthesis_is_reproducible_and_split() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    synth(a.path());
    synth(b.path());
    for file in ["manifest.json", "inputs.rgf", "targets.rgf"] {
        let read = |d: &Path| fs::read(d.join("dataset").join(file)).unwrap();
        assert_eq!(read(a.path()), read(b.path()), "{file}");
    }
    let manifest = json_file(a.path().join("dataset/manifest.json"));
    for split in ["train", "val", "test"] {
        assert!(manifest["pairs"].as_array().unwrap().iter().any(|p| p["split"] == split), "{split}");
    }
    let cfg = json_file(a.path().join("config.json"));
    assert_eq!(cfg["dataset"]["n"], 40);
    assert!(!a.path().join(".lock").exists());
}

#[test]
fn each_mode_trains_its_own_stages() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    for (mode, stages) in [("corrector_gan", json!([1, 2, 3])), ("npt", json!([3])), ("lein_style", json!([3])), ("pure_sr", json!([2]))] {
        ok(dir.path(), &["train"], &[&format!("model.mode={mode}")]);
        let report = json_file(dir.path().join(format!("reports/train_report_{mode}.json")));
        let run: Vec<Value> = report["stages"].as_array().unwrap().iter().map(|s| s["stage"].clone()).collect();
        assert_eq!(Value::from(run), stages, "{mode}");
        assert!(dir.path().join(format!("checkpoints/{mode}/final.json")).exists());
    }
    let summary = ok(dir.path(), &["report"], &[]);
    assert!(summary.contains("npt: stages [3]"));
    let curves = fs::read_to_string(dir.path().join("reports/loss_curves.csv")).unwrap();
    assert!(curves.lines().any(|l| l.starts_with("corrector_gan,1,0,")));
}

fn without_clock(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("wall_clock_s");
    v
}

#[test]
fn resumed_training_matches_one_run() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    ok(dir.path(), &["train"], &[]);
    let full = without_clock(json_file(dir.path().join("reports/train_report_corrector_gan.json")));
    let final_bin = fs::read(dir.path().join("checkpoints/corrector_gan/final.bin")).unwrap();

    let paused = ok(dir.path(), &["train", "--max-epochs", "3"], &[]);
    assert!(paused.contains("--resume"), "{paused}");
    ok(dir.path(), &["train", "--resume"], &[]);
    let resumed = without_clock(json_file(dir.path().join("reports/train_report_corrector_gan.json")));
    assert_eq!(resumed, full);
    assert_eq!(fs::read(dir.path().join("checkpoints/corrector_gan/final.bin")).unwrap(), final_bin);
}

#[test]
fn generation_writes_k_members_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    ok(dir.path(), &["train"], &["model.mode=npt"]);
    let test_patches = 6;
    for k in [10, 100] {
        ok(dir.path(), &["generate", "--k", &k.to_string()], &["model.mode=npt"]);
        let manifest = json_file(dir.path().join("ensembles/npt/manifest.json"));
        assert_eq!(manifest["k"], k);
        let patches = manifest["patches"].as_array().unwrap();
        assert_eq!(patches.len(), test_patches);
        let (header, members) = read_grid_file(dir.path().join("ensembles/npt").join(patches[0]["file"].as_str().unwrap())).unwrap();
        assert_eq!(header.dims, [k, 128, 128]);
        assert!(members.iter().all(|m| m.space() == Space::RawMm && m.values().iter().all(|v| *v >= 0.0)));
    }

    let snapshot = |name: &str| {
        let d = dir.path().join("ensembles").join(name);
        let mut files: Vec<_> = fs::read_dir(&d).unwrap().map(|e| e.unwrap().file_name()).filter(|f| f != "manifest.json").collect();
        files.sort();
        files.into_iter().map(|f| fs::read(d.join(f)).unwrap()).collect::<Vec<_>>()
    };
    ok(dir.path(), &["generate", "--name", "a"], &["model.mode=npt"]);
    ok(dir.path(), &["generate", "--name", "b"], &["model.mode=npt"]);
    assert_eq!(snapshot("a"), snapshot("b"));
    ok(dir.path(), &["generate", "--name", "c"], &["model.mode=npt", "generation.seed=5"]);
    assert_ne!(snapshot("a"), snapshot("c"));
}

fn write_truth_ensemble(out: &Path, name: &str, indices: &[usize]) {
    let ds = load_dataset(out.join("dataset")).unwrap();
    let dir = out.join("ensembles").join(name);
    fs::create_dir_all(&dir).unwrap();
    let mut patches = Vec::new();
    for &i in indices {
        let file = format!("patch_{i:05}.rgf");
        let y = &ds.pairs[i].y_raw;
        write_grid_file(dir.join(&file), &GridFileHeader::new("precipitation", "mm", [3, 128, 128], Space::RawMm), &vec![y.clone(); 3]).unwrap();
        patches.push(json!({"index": i, "file": file}));
    }
    let manifest = json!({
        "format": "corrector-ensemble-v1", "model": name, "mode": "oracle", "checkpoint": "", "k": 3, "seed": 0, "patches": patches
    });
    fs::write(dir.join("manifest.json"), manifest.to_string()).unwrap();
}

#[test]
fn truth_as_ensemble_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let ds = load_dataset(dir.path().join("dataset")).unwrap();
    let test = ds.indices(corrector_core::datagen::Split::Test);
    write_truth_ensemble(dir.path(), "truth", &test);
    ok(dir.path(), &["evaluate"], &[]);

    let metrics = json_file(dir.path().join("reports/metrics.json"));
    let rows = metrics.as_array().unwrap();
    assert_eq!(rows.len(), 2);
    let truth = rows.iter().find(|r| r["model"] == "truth").unwrap();
    assert_eq!(truth["crps"], 0.0);
    assert!(truth["brier"].as_array().unwrap().iter().all(|b| b["value"] == 0.0));
    let baseline = rows.iter().find(|r| r["model"] == "interpolation").unwrap();
    assert!(baseline["crps"].as_f64().unwrap() > 0.0);
    for model in ["truth", "interpolation"] {
        let csv = fs::read_to_string(dir.path().join(format!("reports/reliability_{model}.csv"))).unwrap();
        assert_eq!(csv.lines().count(), 1 + 20, "{model}");
        assert!(dir.path().join(format!("reports/rank_{model}.csv")).exists());
    }
    let summary = ok(dir.path(), &["report"], &[]);
    assert!(summary.contains("| truth | oracle | 0.0000 |"), "{summary}");
}

#[test]
fn mismatched_patch_sets_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let ds = load_dataset(dir.path().join("dataset")).unwrap();
    let test = ds.indices(corrector_core::datagen::Split::Test);
    write_truth_ensemble(dir.path(), "all", &test);
    write_truth_ensemble(dir.path(), "some", &test[1..]);
    let o = corrector(dir.path(), &["evaluate"], &[]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    ok(dir.path(), &["evaluate", "--models", "all"], &[]);
}
