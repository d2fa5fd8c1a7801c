//! Toy weather: Gaussian rain cells observed by a displaced, damped coarse
//! ensemble plus smooth auxiliary fields that carry the true rain position.

use rand::Rng;
use rand_distr::{Distribution, LogNormal, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::patch::{build_input_patch, PatchPair, PatchSources, CONTEXT_SIZE, MEMBERS};
use super::{NormalizationSpec, SamplerWeights};
use crate::error::{Error, Result};
use crate::fieldio::{GridField, Space};
use crate::netcore::UPSCALE;
use crate::rng::{label, stream};

const PATCH: usize = 16;
const HI: usize = PATCH * UPSCALE;
/// Coarse offset of the target inside the context window.
const CONTEXT_PAD: usize = (CONTEXT_SIZE - PATCH) / 2;

/// Fixed physical ranges for min-max scaling of the auxiliary variables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariableRanges {
    pub tcw_kg_m2: [f32; 2],
    pub t2m_k: [f32; 2],
    pub cape_j_kg: [f32; 2],
    pub cin_j_kg: [f32; 2],
}

impl Default for VariableRanges {
    fn default() -> Self {
        Self { tcw_kg_m2: [0.0, 80.0], t2m_k: [260.0, 320.0], cape_j_kg: [0.0, 4000.0], cin_j_kg: [0.0, 400.0] }
    }
}

fn min_max(v: f64, r: [f32; 2]) -> f32 {
    let (lo, hi) = (r[0] as f64, r[1] as f64);
    ((v.clamp(lo, hi) - lo) / (hi - lo)) as f32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Expected number of rain cells per 128x128 area.
    pub cells_per_patch: f64,
    pub amp_log_mean: f64,
    pub amp_log_sd: f64,
    /// Range of the major-axis standard deviation, in fine pixels.
    pub sigma_px: [f64; 2],
    pub aspect: [f64; 2],
    /// Log-sd of the per-pixel multiplicative noise on the truth.
    pub noise_sd: f64,
    pub dry_cutoff_mm: f64,
    /// Apply the systematic forecast error (shift and damping).
    pub bias: bool,
    /// Forecast displacement in fine pixels (rows, cols).
    pub shift_px: [i32; 2],
    pub damping: f64,
    /// Apply member-specific perturbations.
    pub perturb: bool,
    pub jitter_px: i32,
    pub member_amp_sd: f64,
    pub ranges: VariableRanges,
    pub normalization: NormalizationSpec,
    pub sampler: SamplerWeights,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            cells_per_patch: 3.0,
            amp_log_mean: 1.2,
            amp_log_sd: 0.7,
            sigma_px: [5.0, 18.0],
            aspect: [0.35, 1.0],
            noise_sd: 0.3,
            dry_cutoff_mm: 0.05,
            bias: true,
            shift_px: [10, 14],
            damping: 0.55,
            perturb: true,
            jitter_px: 5,
            member_amp_sd: 0.25,
            ranges: VariableRanges::default(),
            normalization: NormalizationSpec::default(),
            sampler: SamplerWeights::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("synth config: {m}")));
        if !(self.cells_per_patch >= 0.0 && self.cells_per_patch.is_finite()) {
            return bad("cells_per_patch must be finite and non-negative");
        }
        if !(self.sigma_px[0] > 0.0 && self.sigma_px[0] <= self.sigma_px[1]) {
            return bad("sigma_px must be a positive ascending range");
        }
        if !(self.aspect[0] > 0.0 && self.aspect[0] <= self.aspect[1] && self.aspect[1] <= 1.0) {
            return bad("aspect must lie in (0, 1] and ascend");
        }
        if self.amp_log_sd < 0.0 || self.noise_sd < 0.0 || self.member_amp_sd < 0.0 || self.dry_cutoff_mm < 0.0 {
            return bad("spreads and cutoff must be non-negative");
        }
        if !(self.damping > 0.0) || self.jitter_px < 0 {
            return bad("damping must be positive and jitter non-negative");
        }
        if self.shift_px.iter().any(|s| s.unsigned_abs() as usize + self.jitter_px as usize > margin()) {
            return bad("shift plus jitter exceeds the generation margin");
        }
        for r in [self.ranges.tcw_kg_m2, self.ranges.t2m_k, self.ranges.cape_j_kg, self.ranges.cin_j_kg] {
            if !(r[0] < r[1]) {
                return bad("variable ranges must ascend");
            }
        }
        self.normalization.validate()?;
        self.sampler.validate()
    }

    fn effective_shift(&self) -> [i32; 2] {
        if self.bias {
            self.shift_px
        } else {
            [0, 0]
        }
    }
}

fn margin() -> usize {
    3 * UPSCALE
}

/// Truth on a square fine grid of edge `size`, in mm.
pub fn synth_truth(cfg: &SynthConfig, size: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut field = vec![0.0f64; size * size];
    let expected = cfg.cells_per_patch * (size * size) as f64 / (HI * HI) as f64;
    let count = if expected > 0.0 { Poisson::new(expected).expect("positive rate").sample(rng) as usize } else { 0 };
    let amp = LogNormal::new(cfg.amp_log_mean, cfg.amp_log_sd).expect("valid lognormal");
    for _ in 0..count {
        let a: f64 = amp.sample(rng);
        let (cr, cc) = (rng.random_range(0.0..size as f64), rng.random_range(0.0..size as f64));
        let s1 = rng.random_range(cfg.sigma_px[0]..=cfg.sigma_px[1]);
        let s2 = s1 * rng.random_range(cfg.aspect[0]..=cfg.aspect[1]);
        let theta = rng.random_range(0.0..std::f64::consts::PI);
        let (sin, cos) = theta.sin_cos();
        let reach = 3.0 * s1;
        let r0 = (cr - reach).floor().max(0.0) as usize;
        let r1 = ((cr + reach).ceil() as usize).min(size);
        let c0 = (cc - reach).floor().max(0.0) as usize;
        let c1 = ((cc + reach).ceil() as usize).min(size);
        for r in r0..r1 {
            for c in c0..c1 {
                let (dr, dc) = (r as f64 - cr, c as f64 - cc);
                let u = dr * cos + dc * sin;
                let v = -dr * sin + dc * cos;
                field[r * size + c] += a * (-0.5 * (u * u / (s1 * s1) + v * v / (s2 * s2))).exp();
            }
        }
    }
    if count > 0 && cfg.noise_sd > 0.0 {
        let noise = LogNormal::new(-0.5 * cfg.noise_sd * cfg.noise_sd, cfg.noise_sd).expect("valid lognormal");
        field.iter_mut().for_each(|v| *v *= noise.sample(rng));
    }
    // stored at f32 precision so coarse members match coarsen() of the target exactly
    field.iter_mut().for_each(|v| *v = if *v < cfg.dry_cutoff_mm { 0.0 } else { *v as f32 as f64 });
    field
}

/// One synthetic example with the raw coarse members kept for inspection.
#[derive(Debug, Clone)]
pub struct SynthPatch {
    pub pair: PatchPair,
    /// Raw 16x16 precipitation members, mm.
    pub members_raw: Vec<GridField>,
}

fn block_mean(src: &[f64], stride: usize, r0: usize, c0: usize, size: usize) -> Vec<f64> {
    let mut out = vec![0.0; size * size];
    let n = (UPSCALE * UPSCALE) as f64;
    for (i, o) in out.iter_mut().enumerate() {
        let (br, bc) = (r0 + (i / size) * UPSCALE, c0 + (i % size) * UPSCALE);
        let mut acc = 0.0;
        for r in br..br + UPSCALE {
            for v in &src[r * stride + bc..r * stride + bc + UPSCALE] {
                acc += v;
            }
        }
        *o = acc / n;
    }
    out
}

/// A smooth random plane in roughly [-1, 1] over the patch.
fn plane(rng: &mut impl Rng) -> impl Fn(usize) -> f64 {
    let (a, b, c) = (rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
    move |i| a + b * ((i / PATCH) as f64 / (PATCH - 1) as f64 * 2.0 - 1.0) + c * ((i % PATCH) as f64 / (PATCH - 1) as f64 * 2.0 - 1.0)
}

fn normalized(values: Vec<f32>, n: usize) -> GridField {
    GridField::new(values, n, n, Space::Normalized).expect("synthetic channel")
}

/// Generates example `index` of the dataset seeded by `seed`.
pub fn synth_patch(cfg: &SynthConfig, seed: u64, index: u64) -> Result<SynthPatch> {
    let m = margin();
    let window = CONTEXT_SIZE * UPSCALE;
    let ext = window + 2 * m;
    let truth = synth_truth(cfg, ext, &mut stream(seed, &[label::SYNTH, index, 0]));
    let mut member_rng = stream(seed, &[label::SYNTH, index, 1]);
    let mut aux_rng = stream(seed, &[label::SYNTH, index, 2]);
    let norm = &cfg.normalization;

    let target_off = m + CONTEXT_PAD * UPSCALE;
    let y: Vec<f32> = (0..HI * HI).map(|i| truth[(target_off + i / HI) * ext + target_off + i % HI] as f32).collect();
    let y_raw = GridField::new(y, HI, HI, Space::RawMm)?;

    let shift = cfg.effective_shift();
    let damping = if cfg.bias { cfg.damping } else { 1.0 };
    let amp_noise = LogNormal::new(-0.5 * cfg.member_amp_sd * cfg.member_amp_sd, cfg.member_amp_sd).expect("valid lognormal");
    let mut members_raw = Vec::with_capacity(MEMBERS);
    let mut precip = Vec::with_capacity(MEMBERS);
    let mut context = None;
    for j in 0..MEMBERS {
        let (mut jr, mut jc, mut amp) = (0, 0, 1.0);
        if cfg.perturb {
            jr = member_rng.random_range(-cfg.jitter_px..=cfg.jitter_px);
            jc = member_rng.random_range(-cfg.jitter_px..=cfg.jitter_px);
            amp = amp_noise.sample(&mut member_rng);
        }
        // forecast value at p is the truth at p - shift: rain appears displaced by +shift
        let r0 = (m as i32 - shift[0] - jr) as usize;
        let c0 = (m as i32 - shift[1] - jc) as usize;
        let scale = damping * amp;
        let coarse: Vec<f64> = block_mean(&truth, ext, r0, c0, CONTEXT_SIZE).into_iter().map(|v| v * scale).collect();
        let crop: Vec<f32> = (0..PATCH * PATCH)
            .map(|i| coarse[(CONTEXT_PAD + i / PATCH) * CONTEXT_SIZE + CONTEXT_PAD + i % PATCH] as f32)
            .collect();
        let raw = GridField::new(crop, PATCH, PATCH, Space::RawMm)?;
        precip.push(super::normalize(&raw, norm)?);
        members_raw.push(raw);
        if j == 0 {
            let ctx = GridField::new(coarse.iter().map(|v| *v as f32).collect(), CONTEXT_SIZE, CONTEXT_SIZE, Space::RawMm)?;
            context = Some(super::normalize(&ctx, norm)?);
        }
    }

    // auxiliary fields follow the undisplaced coarse rain, smoothed over 3x3
    let off = m + (CONTEXT_PAD - 1) * UPSCALE;
    let wide = block_mean(&truth, ext, off, off, PATCH + 2);
    let signal: Vec<f64> = (0..PATCH * PATCH)
        .map(|i| {
            let (r, c) = (i / PATCH + 1, i % PATCH + 1);
            let mut s = 0.0;
            for dr in 0..3 {
                for dc in 0..3 {
                    s += wide[(r + dr - 1) * (PATCH + 2) + c + dc - 1];
                }
            }
            (s / 9.0).ln_1p()
        })
        .collect();
    let rg = &cfg.ranges;
    let member_noise = Normal::new(0.0, 1.0).expect("unit normal");
    let base = plane(&mut aux_rng);
    let tcw = (0..MEMBERS)
        .map(|_| {
            let (gain, offset) = if cfg.perturb {
                ((0.1f64 * member_noise.sample(&mut aux_rng)).exp(), 1.5 * member_noise.sample(&mut aux_rng))
            } else {
                (1.0, 0.0)
            };
            let v = (0..PATCH * PATCH).map(|i| min_max(18.0 + 8.0 * base(i) + 6.0 * gain * signal[i] + offset, rg.tcw_kg_m2)).collect();
            normalized(v, PATCH)
        })
        .collect();
    let tp = plane(&mut aux_rng);
    let t2m = normalized((0..PATCH * PATCH).map(|i| min_max(290.0 + 5.0 * tp(i) - 2.0 * signal[i], rg.t2m_k)).collect(), PATCH);
    let cp = plane(&mut aux_rng);
    let cape = normalized((0..PATCH * PATCH).map(|i| min_max(300.0 + 200.0 * cp(i) + 800.0 * signal[i], rg.cape_j_kg)).collect(), PATCH);
    let np = plane(&mut aux_rng);
    let cin = normalized((0..PATCH * PATCH).map(|i| min_max(150.0 + 40.0 * np(i) - 30.0 * signal[i], rg.cin_j_kg)).collect(), PATCH);

    let x = build_input_patch(&PatchSources { precip, tcw, t2m, cape, cin, context: context.expect("member 0") })?;
    Ok(SynthPatch { pair: PatchPair::new(x, y_raw, norm, &cfg.sampler)?, members_raw })
}

/// `n` synthetic examples; example `i` depends only on `(seed, i, cfg)`.
pub fn synth_dataset(n: usize, seed: u64, cfg: &SynthConfig) -> Result<Vec<SynthPatch>> {
    if n == 0 {
        return Err(Error::InvalidArgument("synthetic dataset needs at least one patch".into()));
    }
    cfg.validate()?;
    (0..n as u64).map(|i| synth_patch(cfg, seed, i)).collect()
}
