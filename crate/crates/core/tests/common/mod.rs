//! Shared oracles for the integration and acceptance tests.
#![allow(dead_code)]

use corrector_core::datagen::{Dataset, SynthConfig};
use corrector_core::losses::{critic_step, generator_loss, stage1_loss, stage2_loss, ConditionedCritic, LossWeights};
use corrector_core::netcore::{ArchSpec, Discriminator, Generator, GeneratorOutput, ModelParams, NoiseSample, Tensor};
use rand::Rng;

/// Small enough that probes rarely straddle an L1 or ReLU kink.
pub const FD_STEP: f64 = 1e-7;

/// Width-reduced network on a 2x2 coarse grid.
pub fn tiny_arch() -> ArchSpec {
    ArchSpec { in_channels: 3, width_divisor: 32, lo_size: 2 }
}

pub fn random_tensor(c: usize, h: usize, w: usize, rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_vec(c, h, w, (0..c * h * w).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
}

/// Up to `per_tensor` random coordinates in every parameter tensor.
pub fn probe_coords(params: &ModelParams<f64>, per_tensor: usize, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (i, t) in params.tensors.iter().enumerate() {
        for _ in 0..per_tensor.min(t.len()) {
            out.push((i, rng.random_range(0..t.len())));
        }
    }
    out
}

/// `||a - f|| / max(||a||, ||f||)` between analytic and central-difference
/// gradients of `loss` at the probed coordinates.
pub fn fd_rel_error(
    params: &ModelParams<f64>,
    analytic: &ModelParams<f64>,
    coords: &[(usize, usize)],
    loss: impl Fn(&ModelParams<f64>) -> f64,
) -> f64 {
    let (mut diff, mut na, mut nf) = (0.0, 0.0, 0.0);
    let mut p = params.clone();
    for &(i, j) in coords {
        let v = p.tensors[i][j];
        p.tensors[i][j] = v + FD_STEP;
        let up = loss(&p);
        p.tensors[i][j] = v - FD_STEP;
        let dn = loss(&p);
        p.tensors[i][j] = v;
        let fd = (up - dn) / (2.0 * FD_STEP);
        let a = analytic.tensors[i][j];
        diff += (a - fd) * (a - fd);
        na += a * a;
        nf += fd * fd;
    }
    diff.sqrt() / na.sqrt().max(nf.sqrt()).max(1e-12)
}

pub struct GradCase {
    pub gen: Generator,
    pub disc: Discriminator,
    pub g_params: ModelParams<f64>,
    pub d_params: ModelParams<f64>,
    pub x: Tensor<f64>,
    pub y: Tensor<f64>,
    pub y_coarse: Tensor<f64>,
    pub zs: Vec<NoiseSample<f64>>,
}

impl GradCase {
    pub fn new(seed: u64) -> Self {
        let arch = tiny_arch();
        let mut rng = corrector_core::rng::stream(seed, &[99]);
        let gen = Generator::new(arch).unwrap();
        let disc = Discriminator::new(arch).unwrap();
        let mut g_params: ModelParams<f64> = gen.init_params(seed);
        let mut d_params: ModelParams<f64> = disc.init_params(seed + 1);
        // non-zero biases so their gradients are exercised too
        for p in [&mut g_params, &mut d_params] {
            for (spec, t) in p.specs.iter().zip(p.tensors.iter_mut()) {
                if spec.name.ends_with(".bias") {
                    t.iter_mut().for_each(|v| *v = rng.random_range(-0.1..0.1));
                }
            }
        }
        let (n, hn) = (arch.lo_size, arch.hi_size());
        Self {
            x: random_tensor(arch.in_channels, n, n, &mut rng),
            y: random_tensor(1, hn, hn, &mut rng),
            y_coarse: random_tensor(1, n, n, &mut rng),
            zs: (0..2).map(|_| NoiseSample::standard_normal(n, &mut rng)).collect(),
            gen,
            disc,
            g_params,
            d_params,
        }
    }

    fn weights(&self) -> LossWeights {
        // soft-FSS windows must tile the 2x2 grid
        LossWeights { fss_window: 1, ..LossWeights::default() }
    }

    pub fn stage1_error(&self, rng: &mut impl Rng) -> f64 {
        let z = NoiseSample::zeros(self.gen.spec.lo_size);
        let w = self.weights();
        let loss = |p: &ModelParams<f64>| {
            let (g, _) = self.gen.forward_corrector(p, &self.x, &z).unwrap();
            stage1_loss(&g, &self.y_coarse, &w).unwrap().value
        };
        let (g, tape) = self.gen.forward_corrector(&self.g_params, &self.x, &z).unwrap();
        let l = stage1_loss(&g, &self.y_coarse, &w).unwrap();
        let mut grads = self.g_params.zeros_like();
        self.gen.backward(&self.g_params, &tape, None, Some(l.grad), &mut grads).unwrap();
        let coords = probe_coords(&self.g_params, 3, rng);
        fd_rel_error(&self.g_params, &grads, &coords, loss)
    }

    pub fn stage2_error(&self, rng: &mut impl Rng) -> f64 {
        let z = NoiseSample::zeros(self.gen.spec.lo_size);
        let loss = |p: &ModelParams<f64>| {
            let (o, _) = self.gen.forward(p, &self.x, &z).unwrap();
            stage2_loss(&o.lo_res_proxy, &o.hi_res, &self.y_coarse, &self.y).unwrap().value
        };
        let (o, tape) = self.gen.forward(&self.g_params, &self.x, &z).unwrap();
        let l = stage2_loss(&o.lo_res_proxy, &o.hi_res, &self.y_coarse, &self.y).unwrap();
        let mut grads = self.g_params.zeros_like();
        self.gen.backward(&self.g_params, &tape, Some(l.grad_hi), Some(l.grad_lo), &mut grads).unwrap();
        let coords = probe_coords(&self.g_params, 3, rng);
        fd_rel_error(&self.g_params, &grads, &coords, loss)
    }

    fn fake(&self) -> Tensor<f64> {
        self.gen.forward(&self.g_params, &self.x, &self.zs[0]).unwrap().0.hi_res
    }

    /// Critic objective without the penalty, and with it (second-order path).
    pub fn critic_errors(&self, rng: &mut impl Rng) -> (f64, f64) {
        let fake = self.fake();
        let eps = 0.3;
        let run = |lambda: f64| {
            let loss = |p: &ModelParams<f64>| {
                let mut scratch = p.zeros_like();
                critic_step(&self.disc, p, &self.x, &self.y, &fake, lambda, eps, 1.0, &mut scratch).unwrap().value
            };
            let mut grads = self.d_params.zeros_like();
            critic_step(&self.disc, &self.d_params, &self.x, &self.y, &fake, lambda, eps, 1.0, &mut grads).unwrap();
            let coords = probe_coords(&self.d_params, 3, &mut corrector_core::rng::stream(lambda as u64, &[7]));
            fd_rel_error(&self.d_params, &grads, &coords, loss)
        };
        let _ = rng;
        (run(0.0), run(10.0))
    }

    /// The penalty term alone, differentiated through the critic parameters.
    pub fn penalty_error(&self, rng: &mut impl Rng) -> f64 {
        let fake = self.fake();
        let mixed = Tensor::from_vec(1, fake.h, fake.w, fake.data.iter().zip(&self.y.data).map(|(f, y)| 0.4 * y + 0.6 * f).collect()).unwrap();
        let loss = |p: &ModelParams<f64>| self.disc.gradient_penalty(p, &self.x, &mixed, 10.0, 1.0, None).unwrap().penalty;
        let mut grads = self.d_params.zeros_like();
        self.disc.gradient_penalty(&self.d_params, &self.x, &mixed, 10.0, 1.0, Some(&mut grads)).unwrap();
        let coords = probe_coords(&self.d_params, 3, rng);
        fd_rel_error(&self.d_params, &grads, &coords, loss)
    }

    /// Critic input gradient against central differences on the field.
    pub fn critic_input_error(&self, rng: &mut impl Rng) -> f64 {
        let (_, g) = self.disc.score_and_grad(&self.d_params, &self.x, &self.y, 1.0, None).unwrap();
        let (mut diff, mut na, mut nf) = (0.0, 0.0, 0.0);
        for _ in 0..24 {
            let j = rng.random_range(0..self.y.data.len());
            let mut up = self.y.clone();
            up.data[j] += FD_STEP;
            let mut dn = self.y.clone();
            dn.data[j] -= FD_STEP;
            let fd = (self.disc.score(&self.d_params, &self.x, &up).unwrap() - self.disc.score(&self.d_params, &self.x, &dn).unwrap()) / (2.0 * FD_STEP);
            diff += (fd - g.data[j]).powi(2);
            na += g.data[j].powi(2);
            nf += fd * fd;
        }
        diff.sqrt() / na.sqrt().max(nf.sqrt()).max(1e-12)
    }

    pub fn generator_error(&self, rng: &mut impl Rng) -> f64 {
        let w = self.weights();
        let outs = |p: &ModelParams<f64>| -> Vec<(GeneratorOutput<f64>, _)> { self.zs.iter().map(|z| self.gen.forward(p, &self.x, z).unwrap()).collect() };
        let critic = ConditionedCritic { disc: &self.disc, params: &self.d_params, x: &self.x };
        let loss = |p: &ModelParams<f64>| {
            let o: Vec<_> = outs(p).into_iter().map(|(o, _)| o).collect();
            generator_loss(&critic, &self.y, &self.y_coarse, &o, &w).unwrap().value
        };
        let (o, tapes): (Vec<_>, Vec<_>) = outs(&self.g_params).into_iter().unzip();
        let l = generator_loss(&critic, &self.y, &self.y_coarse, &o, &w).unwrap();
        let mut grads = self.g_params.zeros_like();
        for ((tape, dh), dl) in tapes.iter().zip(l.d_hi).zip(l.d_lo) {
            self.gen.backward(&self.g_params, tape, Some(dh), Some(dl), &mut grads).unwrap();
        }
        let coords = probe_coords(&self.g_params, 3, rng);
        fd_rel_error(&self.g_params, &grads, &coords, loss)
    }
}

/// Small synthetic dataset for fast training tests.
pub fn small_dataset(n: usize, seed: u64) -> Dataset {
    Dataset::synthesize(n, seed, &SynthConfig::default()).unwrap()
}
