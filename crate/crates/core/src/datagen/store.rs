//! Datasets on disk: RGF stacks for inputs and targets plus a JSON manifest.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::patch::{InputPatch, PatchPair, INPUT_CHANNELS};
use super::synth::{synth_dataset, SynthConfig, VariableRanges};
use super::{NormalizationSpec, SamplerWeights};
use crate::error::{Error, Result};
use crate::fieldio::{read_grid_file, write_grid_file, GridField, GridFileHeader, Space};
use crate::netcore::Tensor;

pub const DATASET_FORMAT: &str = "corrector-dataset-v1";
const MANIFEST: &str = "manifest.json";
const INPUTS: &str = "inputs.rgf";
const TARGETS: &str = "targets.rgf";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    /// Fixed 14/3/3 interleaving over consecutive blocks of 20 examples.
    pub fn for_index(i: usize) -> Self {
        match i % 20 {
            0..=13 => Split::Train,
            14..=16 => Split::Val,
            _ => Split::Test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub index: usize,
    pub split: Split,
    pub weight: f64,
    /// Seed the example was generated from.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub seed: u64,
    pub normalization: NormalizationSpec,
    pub sampler: SamplerWeights,
    /// Per-variable min-max ranges used for the auxiliary channels.
    pub variable_ranges: VariableRanges,
    pub synth: Option<SynthConfig>,
    pub inputs_file: String,
    pub targets_file: String,
    pub pairs: Vec<PairRecord>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub pairs: Vec<PatchPair>,
}

impl Dataset {
    pub fn synthesize(n: usize, seed: u64, cfg: &SynthConfig) -> Result<Self> {
        let patches = synth_dataset(n, seed, cfg)?;
        let records = patches
            .iter()
            .enumerate()
            .map(|(index, p)| PairRecord { index, split: Split::for_index(index), weight: p.pair.weight, seed })
            .collect();
        Ok(Self {
            manifest: DatasetManifest {
                format: DATASET_FORMAT.into(),
                seed,
                normalization: cfg.normalization,
                sampler: cfg.sampler,
                variable_ranges: cfg.ranges,
                synth: Some(cfg.clone()),
                inputs_file: INPUTS.into(),
                targets_file: TARGETS.into(),
                pairs: records,
            },
            pairs: patches.into_iter().map(|p| p.pair).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.manifest.pairs.iter().filter(|r| r.split == split).map(|r| r.index).collect()
    }

    pub fn split(&self, split: Split) -> Vec<&PatchPair> {
        self.indices(split).into_iter().map(|i| &self.pairs[i]).collect()
    }
}

pub fn save_dataset(dir: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let n = ds.pairs.len();
    let mut inputs = Vec::with_capacity(n * INPUT_CHANNELS);
    for p in &ds.pairs {
        inputs.extend((0..INPUT_CHANNELS).map(|c| p.x.channel(c)));
    }
    let header = GridFileHeader::new("inputs", "1", [n * INPUT_CHANNELS, 16, 16], Space::Normalized);
    write_grid_file(dir.join(&ds.manifest.inputs_file), &header, &inputs)?;
    let targets: Vec<GridField> = ds.pairs.iter().map(|p| p.y_raw.clone()).collect();
    let header = GridFileHeader::new("precipitation", "mm", [n, 128, 128], Space::RawMm);
    write_grid_file(dir.join(&ds.manifest.targets_file), &header, &targets)?;
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&ds.manifest)? + "\n")?;
    Ok(())
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let manifest: DatasetManifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST))?)?;
    if manifest.format != DATASET_FORMAT {
        return Err(Error::Format(format!("unknown dataset format {:?}", manifest.format)));
    }
    let (_, inputs) = read_grid_file(dir.join(&manifest.inputs_file))?;
    let (_, targets) = read_grid_file(dir.join(&manifest.targets_file))?;
    let n = manifest.pairs.len();
    if inputs.len() != n * INPUT_CHANNELS || targets.len() != n {
        return Err(Error::Format(format!(
            "manifest lists {n} pairs but files hold {} input channels and {} targets",
            inputs.len(),
            targets.len()
        )));
    }
    let mut pairs = Vec::with_capacity(n);
    for (i, rec) in manifest.pairs.iter().enumerate() {
        if rec.index != i {
            return Err(Error::Format(format!("pair record {i} has index {}", rec.index)));
        }
        let data = inputs[i * INPUT_CHANNELS..(i + 1) * INPUT_CHANNELS].iter().flat_map(|f| f.values().iter().copied()).collect();
        let x = InputPatch::from_tensor(Tensor::from_vec(INPUT_CHANNELS, 16, 16, data)?)?;
        let pair = PatchPair::new(x, targets[i].clone(), &manifest.normalization, &manifest.sampler)?;
        if pair.weight != rec.weight {
            return Err(Error::Data(format!("pair {i}: stored weight {} disagrees with target ({})", rec.weight, pair.weight)));
        }
        pairs.push(pair);
    }
    Ok(Dataset { manifest, pairs })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_proportions() {
        let counts = (0..2000).fold([0; 3], |mut acc, i| {
            acc[Split::for_index(i) as usize] += 1;
            acc
        });
        assert_eq!(counts, [1400, 300, 300]);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::synthesize(21, 3, &SynthConfig::default()).unwrap();
        save_dataset(dir.path(), &ds).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.manifest, ds.manifest);
        assert_eq!(back.pairs, ds.pairs);
        assert_eq!(back.split(Split::Test).len(), 3);
        let first = fs::read(dir.path().join(MANIFEST)).unwrap();
        save_dataset(dir.path(), &back).unwrap();
        assert_eq!(fs::read(dir.path().join(MANIFEST)).unwrap(), first);
    }
}
