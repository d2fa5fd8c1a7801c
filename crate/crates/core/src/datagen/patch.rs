use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fieldio::{coarsen, regrid_bilinear, GridField, Space};
use crate::netcore::{Real, Tensor, UPSCALE};

pub const MEMBERS: usize = 10;
pub const INPUT_CHANNELS: usize = 24;
/// Edge of the coarse context window centred on a 16x16 target.
pub const CONTEXT_SIZE: usize = 46;
const PATCH: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    Precip(u8),
    Tcw(u8),
    T2m,
    Cape,
    Cin,
    Context,
}

impl ChannelKind {
    pub fn layout() -> [ChannelKind; INPUT_CHANNELS] {
        let mut out = [ChannelKind::Context; INPUT_CHANNELS];
        for m in 0..MEMBERS {
            out[m] = ChannelKind::Precip(m as u8);
            out[MEMBERS + m] = ChannelKind::Tcw(m as u8);
        }
        out[20] = ChannelKind::T2m;
        out[21] = ChannelKind::Cape;
        out[22] = ChannelKind::Cin;
        out
    }
}

/// A 24 x 16 x 16 normalized input stack in the canonical channel order.
#[derive(Debug, Clone, PartialEq)]
pub struct InputPatch {
    data: Tensor<f32>,
}

impl InputPatch {
    /// Checks that `channels` follow the canonical layout exactly.
    pub fn from_channels(channels: Vec<(ChannelKind, GridField)>) -> Result<Self> {
        let layout = ChannelKind::layout();
        if channels.len() != INPUT_CHANNELS {
            return Err(Error::Shape(format!("input patch needs {INPUT_CHANNELS} channels, got {}", channels.len())));
        }
        let mut data = Vec::with_capacity(INPUT_CHANNELS * PATCH * PATCH);
        for (i, (kind, field)) in channels.iter().enumerate() {
            if *kind != layout[i] {
                return Err(Error::Shape(format!("channel {i} holds {kind:?}, layout expects {:?}", layout[i])));
            }
            data.extend_from_slice(field.values());
            check_channel(i, field)?;
        }
        Ok(Self { data: Tensor::from_vec(INPUT_CHANNELS, PATCH, PATCH, data)? })
    }

    pub fn from_tensor(data: Tensor<f32>) -> Result<Self> {
        if data.shape() != (INPUT_CHANNELS, PATCH, PATCH) {
            return Err(Error::Shape(format!("input patch shape {:?}", data.shape())));
        }
        if let Some(v) = data.data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Data(format!("input value {v} outside [0, 1]")));
        }
        Ok(Self { data })
    }

    pub fn tensor(&self) -> &Tensor<f32> {
        &self.data
    }

    pub fn channel(&self, c: usize) -> GridField {
        GridField::new(self.data.channel(c).to_vec(), PATCH, PATCH, Space::Normalized).expect("valid channel")
    }

    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        self.data.cast()
    }

    /// One precipitation member as a single-channel network input.
    pub fn precip_member<T: Real>(&self, member: usize) -> Tensor<T> {
        let c = self.data.channel(member % MEMBERS);
        Tensor { c: 1, h: PATCH, w: PATCH, data: c.iter().map(|v| T::of(*v as f64)).collect() }
    }
}

fn check_channel(i: usize, f: &GridField) -> Result<()> {
    if f.dims() != (PATCH, PATCH) {
        return Err(Error::Shape(format!("channel {i} is {:?}, expected 16x16", f.dims())));
    }
    if f.space() != Space::Normalized {
        return Err(Error::Space(format!("channel {i} is not normalized")));
    }
    if let Some(v) = f.values().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Data(format!("channel {i} value {v} outside [0, 1]")));
    }
    Ok(())
}

/// Normalized ingredients of one input patch.
#[derive(Debug, Clone)]
pub struct PatchSources {
    pub precip: Vec<GridField>,
    pub tcw: Vec<GridField>,
    pub t2m: GridField,
    pub cape: GridField,
    pub cin: GridField,
    /// 46x46 precipitation member centred on the target.
    pub context: GridField,
}

pub fn build_input_patch(src: &PatchSources) -> Result<InputPatch> {
    if src.precip.len() != MEMBERS || src.tcw.len() != MEMBERS {
        return Err(Error::Shape(format!(
            "expected {MEMBERS} precipitation and {MEMBERS} column-water members, got {} and {}",
            src.precip.len(),
            src.tcw.len()
        )));
    }
    if src.context.dims() != (CONTEXT_SIZE, CONTEXT_SIZE) {
        return Err(Error::Shape(format!("context source is {:?}, expected 46x46", src.context.dims())));
    }
    let mut channels = Vec::with_capacity(INPUT_CHANNELS);
    for (m, f) in src.precip.iter().enumerate() {
        channels.push((ChannelKind::Precip(m as u8), f.clone()));
    }
    for (m, f) in src.tcw.iter().enumerate() {
        channels.push((ChannelKind::Tcw(m as u8), f.clone()));
    }
    channels.push((ChannelKind::T2m, src.t2m.clone()));
    channels.push((ChannelKind::Cape, src.cape.clone()));
    channels.push((ChannelKind::Cin, src.cin.clone()));
    channels.push((ChannelKind::Context, regrid_bilinear(&src.context, PATCH, PATCH)?));
    InputPatch::from_channels(channels)
}

/// A training or evaluation example.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPair {
    pub x: InputPatch,
    /// Normalized 128x128 truth.
    pub y: GridField,
    /// `coarsen(y, 8)`.
    pub y_coarse: GridField,
    /// Raw truth, kept exactly for evaluation.
    pub y_raw: GridField,
    pub weight: f64,
}

impl PatchPair {
    pub fn new(x: InputPatch, y_raw: GridField, norm: &super::NormalizationSpec, sw: &super::SamplerWeights) -> Result<Self> {
        if y_raw.dims() != (PATCH * UPSCALE, PATCH * UPSCALE) {
            return Err(Error::Shape(format!("target is {:?}, expected 128x128", y_raw.dims())));
        }
        let y = super::normalize(&y_raw, norm)?;
        let y_coarse = coarsen(&y, UPSCALE)?;
        let weight = super::patch_weight(&y_raw, sw);
        Ok(Self { x, y, y_coarse, y_raw, weight })
    }
}
