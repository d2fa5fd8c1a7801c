use serde::{Deserialize, Serialize};

use super::config::AdamConfig;
use crate::netcore::{ModelParams, ParamGrads, ParamGroup};

/// Adam moments for one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub m: ModelParams<f32>,
    pub v: ModelParams<f32>,
    pub t: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub grad_norm: f64,
}

impl Adam {
    pub fn new(params: &ModelParams<f32>) -> Self {
        Self { m: params.zeros_like(), v: params.zeros_like(), t: 0 }
    }

    /// One update of the tensors in `groups`; other tensors stay untouched.
    pub fn step(&mut self, cfg: &AdamConfig, lr: f64, params: &mut ModelParams<f32>, grads: &ParamGrads<f32>, groups: &[ParamGroup]) -> StepStats {
        self.t += 1;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let mut sq = 0.0f64;
        for (i, spec) in params.specs.iter().enumerate() {
            if !groups.contains(&spec.group) {
                continue;
            }
            let (p, g) = (&mut params.tensors[i], &grads.tensors[i]);
            let (m, v) = (&mut self.m.tensors[i], &mut self.v.tensors[i]);
            for j in 0..p.len() {
                let gj = g[j] as f64;
                sq += gj * gj;
                let mj = b1 * m[j] as f64 + (1.0 - b1) * gj;
                let vj = b2 * v[j] as f64 + (1.0 - b2) * gj * gj;
                m[j] = mj as f32;
                v[j] = vj as f32;
                let update = lr * (mj / c1) / ((vj / c2).sqrt() + cfg.eps);
                p[j] = (p[j] as f64 - update) as f32;
            }
        }
        StepStats { grad_norm: sq.sqrt() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::{ArchSpec, Generator};

    #[test]
    fn masked_and_zero_rate_updates() {
        let g = Generator::new(ArchSpec { width_divisor: 16, ..ArchSpec::default() }).unwrap();
        let p0: ModelParams<f32> = g.init_params(1);
        let mut grads = p0.zeros_like();
        grads.tensors.iter_mut().for_each(|t| t.iter_mut().for_each(|v| *v = 0.5));
        let cfg = AdamConfig::default();

        let mut p = p0.clone();
        Adam::new(&p).step(&cfg, 0.0, &mut p, &grads, &[ParamGroup::Corrector, ParamGroup::SuperResolver]);
        assert_eq!(p, p0);

        let mut p = p0.clone();
        Adam::new(&p).step(&cfg, 1e-3, &mut p, &grads, &[ParamGroup::Corrector]);
        for (i, s) in p.specs.iter().enumerate() {
            let changed = p.tensors[i] != p0.tensors[i];
            assert_eq!(changed, s.group == ParamGroup::Corrector, "{}", s.name);
        }
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let g = Generator::new(ArchSpec { width_divisor: 16, ..ArchSpec::default() }).unwrap();
        let mut p: ModelParams<f32> = g.init_params(1);
        let before = p.tensors[0][0];
        let mut grads = p.zeros_like();
        grads.tensors[0][0] = 3.0;
        Adam::new(&p).step(&AdamConfig::default(), 0.01, &mut p, &grads, &[ParamGroup::Corrector]);
        assert!((before - p.tensors[0][0] - 0.01).abs() < 1e-6);
    }
}
