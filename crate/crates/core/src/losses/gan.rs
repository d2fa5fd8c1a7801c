//! Wasserstein critic and ensemble generator objectives.

use super::{weighted_l1_grad, LossWeights};
use crate::error::{Error, Result};
use crate::netcore::{Discriminator, GeneratorOutput, ModelParams, ParamGrads, Real, Tensor};

/// A critic already conditioned on its low-resolution input.
pub trait Critic<T: Real> {
    fn score(&self, y: &Tensor<T>) -> Result<T>;
    fn score_and_input_grad(&self, y: &Tensor<T>) -> Result<(T, Tensor<T>)>;
}

/// The network critic bound to parameters and a conditioning input.
pub struct ConditionedCritic<'a, T> {
    pub disc: &'a Discriminator,
    pub params: &'a ModelParams<T>,
    pub x: &'a Tensor<T>,
}

impl<T: Real> Critic<T> for ConditionedCritic<'_, T> {
    fn score(&self, y: &Tensor<T>) -> Result<T> {
        self.disc.score(self.params, self.x, y)
    }

    fn score_and_input_grad(&self, y: &Tensor<T>) -> Result<(T, Tensor<T>)> {
        self.disc.score_and_grad(self.params, self.x, y, T::one(), None)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticLoss<T> {
    /// `D(fake) - D(real) + penalty`
    pub value: T,
    pub fake_score: T,
    pub real_score: T,
    pub penalty: T,
    pub grad_norm: T,
}

/// Blend `eps * real + (1 - eps) * fake`.
fn interpolate<T: Real>(real: &Tensor<T>, fake: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
    if real.shape() != fake.shape() {
        return Err(Error::Shape(format!("real {:?} vs generated {:?}", real.shape(), fake.shape())));
    }
    let data = real.data.iter().zip(&fake.data).map(|(&r, &f)| eps * r + (T::one() - eps) * f).collect();
    Tensor::from_vec(real.c, real.h, real.w, data)
}

fn check_eps<T: Real>(eps: T) -> Result<()> {
    if !(eps >= T::zero() && eps <= T::one()) {
        return Err(Error::InvalidArgument(format!("interpolation weight {} outside [0, 1]", eps.f64())));
    }
    Ok(())
}

/// Critic objective for one sample with the interpolation weight `eps`.
pub fn critic_loss<T: Real, C: Critic<T>>(critic: &C, real: &Tensor<T>, fake: &Tensor<T>, lambda: T, eps: T) -> Result<CriticLoss<T>> {
    check_eps(eps)?;
    let mixed = interpolate(real, fake, eps)?;
    let fake_score = critic.score(fake)?;
    let real_score = critic.score(real)?;
    let (_, g) = critic.score_and_input_grad(&mixed)?;
    let grad_norm = g.norm();
    let gap = grad_norm - T::one();
    let penalty = lambda * gap * gap;
    Ok(CriticLoss { value: fake_score - real_score + penalty, fake_score, real_score, penalty, grad_norm })
}

/// [`critic_loss`] for the network critic, also accumulating
/// `weight * dLoss/dtheta` into `grads`.
#[allow(clippy::too_many_arguments)]
pub fn critic_step<T: Real>(
    disc: &Discriminator,
    params: &ModelParams<T>,
    x: &Tensor<T>,
    real: &Tensor<T>,
    fake: &Tensor<T>,
    lambda: T,
    eps: T,
    weight: T,
    grads: &mut ParamGrads<T>,
) -> Result<CriticLoss<T>> {
    check_eps(eps)?;
    let mixed = interpolate(real, fake, eps)?;
    let (fake_score, _) = disc.score_and_grad(params, x, fake, weight, Some(grads))?;
    let (real_score, _) = disc.score_and_grad(params, x, real, -weight, Some(grads))?;
    let pen = disc.gradient_penalty(params, x, &mixed, lambda, weight, Some(grads))?;
    Ok(CriticLoss {
        value: fake_score - real_score + pen.penalty,
        fake_score,
        real_score,
        penalty: pen.penalty,
        grad_norm: pen.grad_norm,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorLoss<T> {
    pub value: T,
    /// `-(1/k) sum_j D(G_j)`
    pub adversarial: T,
    /// Weighted L1 of the ensemble-mean proxy against the coarsened truth.
    pub lo_l1: T,
    /// Weighted L1 of the ensemble-mean field against the truth.
    pub hi_l1: T,
    pub d_hi: Vec<Tensor<T>>,
    pub d_lo: Vec<Tensor<T>>,
}

fn ensemble_mean<T: Real>(fields: &[&Tensor<T>]) -> Tensor<T> {
    let mut mean = Tensor::zeros(fields[0].c, fields[0].h, fields[0].w);
    for f in fields {
        mean.add_assign(f);
    }
    mean.scale(T::one() / T::of(fields.len() as f64));
    mean
}

/// Ensemble generator objective over the `k` samples drawn for one input:
/// the mean adversarial term plus weighted L1 on the ensemble means at both
/// resolutions. Returns gradients with respect to every sample's outputs.
pub fn generator_loss<T: Real, C: Critic<T>>(
    critic: &C,
    real: &Tensor<T>,
    real_coarse: &Tensor<T>,
    samples: &[GeneratorOutput<T>],
    w: &LossWeights,
) -> Result<GeneratorLoss<T>> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("generator loss needs at least one sample".into()));
    }
    let k = samples.len();
    let inv_k = T::one() / T::of(k as f64);
    let hi_mean = ensemble_mean(&samples.iter().map(|s| &s.hi_res).collect::<Vec<_>>());
    let lo_mean = ensemble_mean(&samples.iter().map(|s| &s.lo_res_proxy).collect::<Vec<_>>());
    let hi = weighted_l1_grad(&hi_mean, real)?;
    let lo = weighted_l1_grad(&lo_mean, real_coarse)?;
    let (g1, g2) = (T::of(w.gamma1), T::of(w.gamma2));

    let mut adversarial = T::zero();
    let mut d_hi = Vec::with_capacity(k);
    let mut d_lo = Vec::with_capacity(k);
    for s in samples {
        let (score, dd) = critic.score_and_input_grad(&s.hi_res)?;
        adversarial -= score * inv_k;
        let grad = dd
            .data
            .iter()
            .zip(&hi.grad.data)
            .map(|(&d, &l)| -d * inv_k + g2 * inv_k * l)
            .collect();
        d_hi.push(Tensor::from_vec(dd.c, dd.h, dd.w, grad)?);
        let mut gl = lo.grad.clone();
        gl.scale(g1 * inv_k);
        d_lo.push(gl);
    }
    Ok(GeneratorLoss {
        value: adversarial + g1 * lo.value + g2 * hi.value,
        adversarial,
        lo_l1: lo.value,
        hi_l1: hi.value,
        d_hi,
        d_lo,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `D(v) = a * sum(v)`
    struct Linear(f64);

    impl Critic<f64> for Linear {
        fn score(&self, y: &Tensor<f64>) -> Result<f64> {
            Ok(self.0 * y.data.iter().sum::<f64>())
        }
        fn score_and_input_grad(&self, y: &Tensor<f64>) -> Result<(f64, Tensor<f64>)> {
            Ok((self.score(y)?, Tensor::filled(y.c, y.h, y.w, self.0)))
        }
    }

    fn scalar(v: f64) -> Tensor<f64> {
        Tensor::filled(1, 1, 1, v)
    }

    #[test]
    fn one_pixel_hand_case() {
        let l = critic_loss(&Linear(3.0), &scalar(1.0), &scalar(0.0), 10.0, 0.5).unwrap();
        assert_eq!(l.fake_score, 0.0);
        assert_eq!(l.real_score, 3.0);
        assert_eq!(l.penalty, 40.0);
        assert_eq!(l.value, 37.0);
    }

    #[test]
    fn unit_gradient_critic_has_no_penalty() {
        let a = 1.0 / 8.0;
        let real = Tensor::filled(1, 8, 8, 0.2);
        let fake = Tensor::filled(1, 8, 8, 0.7);
        for eps in [0.0, 0.3, 1.0] {
            let l = critic_loss(&Linear(a), &real, &fake, 10.0, eps).unwrap();
            assert!(l.penalty.abs() < 1e-24);
        }
        assert!(critic_loss(&Linear(a), &real, &fake, 10.0, 1.5).is_err());
    }

    #[test]
    fn generator_loss_hand_case() {
        let real = Tensor::filled(1, 2, 2, 0.5);
        let coarse = scalar(0.5);
        let samples = vec![
            GeneratorOutput { hi_res: Tensor::filled(1, 2, 2, 0.25), lo_res_proxy: scalar(0.25) },
            GeneratorOutput { hi_res: Tensor::filled(1, 2, 2, 0.75), lo_res_proxy: scalar(0.75) },
        ];
        let w = LossWeights::default();
        let l = generator_loss(&Linear(1.0), &real, &coarse, &samples, &w).unwrap();
        // ensemble means equal the truth, so only the critic term remains
        assert_eq!(l.hi_l1, 0.0);
        assert_eq!(l.lo_l1, 0.0);
        assert!((l.adversarial + 2.0).abs() < 1e-15);
        assert!((l.value + 2.0).abs() < 1e-15);
    }

    #[test]
    fn generator_gradient_matches_finite_differences() {
        use rand::Rng;
        let mut r = crate::rng::stream(4, &[]);
        let mut field = |h: usize| Tensor::from_vec(1, h, h, (0..h * h).map(|_| r.random::<f64>()).collect()).unwrap();
        let real = field(4);
        let coarse = field(2);
        let samples: Vec<_> = (0..3).map(|_| GeneratorOutput { hi_res: field(4), lo_res_proxy: field(2) }).collect();
        let w = LossWeights::default();
        let critic = Linear(0.7);
        let l = generator_loss(&critic, &real, &coarse, &samples, &w).unwrap();
        let h = 1e-7;
        for j in 0..3 {
            for p in 0..16 {
                let mut up = samples.clone();
                up[j].hi_res.data[p] += h;
                let mut dn = samples.clone();
                dn[j].hi_res.data[p] -= h;
                let fd = (generator_loss(&critic, &real, &coarse, &up, &w).unwrap().value
                    - generator_loss(&critic, &real, &coarse, &dn, &w).unwrap().value)
                    / (2.0 * h);
                assert!((fd - l.d_hi[j].data[p]).abs() < 1e-5, "hi {j} {p}: {fd} vs {}", l.d_hi[j].data[p]);
            }
            for p in 0..4 {
                let mut up = samples.clone();
                up[j].lo_res_proxy.data[p] += h;
                let mut dn = samples.clone();
                dn[j].lo_res_proxy.data[p] -= h;
                let fd = (generator_loss(&critic, &real, &coarse, &up, &w).unwrap().value
                    - generator_loss(&critic, &real, &coarse, &dn, &w).unwrap().value)
                    / (2.0 * h);
                assert!((fd - l.d_lo[j].data[p]).abs() < 1e-5);
            }
        }
    }
}
