//! Training objectives for the three stages.
//!
//! All pixel losses are summed over the pixels of one patch; the trainer
//! averages over the batch. Every loss comes with its analytic gradient
//! with respect to the network outputs.

mod fss;
mod gan;

use serde::{Deserialize, Serialize};

pub use fss::{fss_from_fractions, soft_fss, soft_fss_grad, window_means};
pub use gan::{critic_loss, critic_step, generator_loss, ConditionedCritic, Critic, CriticLoss, GeneratorLoss};

use crate::error::{Error, Result};
use crate::netcore::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub gamma0: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub lambda: f64,
    /// Soft-FSS threshold in normalized units.
    pub fss_threshold: f64,
    pub fss_sharpness: f64,
    /// Edge of the non-overlapping soft-FSS windows on the coarse grid.
    pub fss_window: usize,
    pub ensemble_k_loss: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            gamma0: 0.1,
            gamma1: 20.0,
            gamma2: 20.0,
            lambda: 10.0,
            fss_threshold: 0.5,
            fss_sharpness: 10.0,
            fss_window: 4,
            ensemble_k_loss: 6,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.gamma0, self.gamma1, self.gamma2, self.lambda, self.fss_sharpness];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(format!("loss weights must be finite and non-negative: {self:?}")));
        }
        if self.ensemble_k_loss == 0 || self.fss_window == 0 {
            return Err(Error::InvalidArgument("ensemble_k_loss and fss_window must be at least 1".into()));
        }
        Ok(())
    }
}

/// A scalar loss with its gradient with respect to one prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad<T> {
    pub value: T,
    pub grad: Tensor<T>,
}

fn same_shape<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("prediction {:?} vs target {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// `sum |pred - target| * (target + 1)`: errors on wet pixels cost more.
pub fn weighted_l1<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    same_shape(pred, target)?;
    Ok(pred
        .data
        .iter()
        .zip(&target.data)
        .fold(T::zero(), |acc, (&p, &t)| acc + (p - t).abs() * (t + T::one())))
}

/// [`weighted_l1`] and its subgradient (zero where `pred == target`).
pub fn weighted_l1_grad<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<LossGrad<T>> {
    let value = weighted_l1(pred, target)?;
    let mut grad = Tensor::zeros(pred.c, pred.h, pred.w);
    for ((g, &p), &t) in grad.data.iter_mut().zip(&pred.data).zip(&target.data) {
        let d = p - t;
        *g = if d > T::zero() {
            t + T::one()
        } else if d < T::zero() {
            -(t + T::one())
        } else {
            T::zero()
        };
    }
    Ok(LossGrad { value, grad })
}

/// Low-resolution correction objective, evaluated at z = 0:
/// `weighted_l1(g, y_coarse) - gamma0 * soft_fss(g, y_coarse)`.
pub fn stage1_loss<T: Real>(g_x0: &Tensor<T>, y_coarse: &Tensor<T>, w: &LossWeights) -> Result<LossGrad<T>> {
    let mut l1 = weighted_l1_grad(g_x0, y_coarse)?;
    if w.gamma0 == 0.0 {
        return Ok(l1);
    }
    let fss = soft_fss_grad(g_x0, y_coarse, T::of(w.fss_threshold), T::of(w.fss_sharpness), w.fss_window)?;
    let gamma0 = T::of(w.gamma0);
    for (g, &f) in l1.grad.data.iter_mut().zip(&fss.grad.data) {
        *g -= gamma0 * f;
    }
    Ok(LossGrad { value: l1.value - gamma0 * fss.value, grad: l1.grad })
}

/// High-resolution pre-training objective at z = 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Loss<T> {
    pub value: T,
    pub grad_lo: Tensor<T>,
    pub grad_hi: Tensor<T>,
}

pub fn stage2_loss<T: Real>(g_x0: &Tensor<T>, hi_x0: &Tensor<T>, y_coarse: &Tensor<T>, y: &Tensor<T>) -> Result<Stage2Loss<T>> {
    let lo = weighted_l1_grad(g_x0, y_coarse)?;
    let hi = weighted_l1_grad(hi_x0, y)?;
    Ok(Stage2Loss { value: lo.value + hi.value, grad_lo: lo.grad, grad_hi: hi.grad })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64], h: usize, w: usize) -> Tensor<f64> {
        Tensor::from_vec(1, h, w, v.to_vec()).unwrap()
    }

    #[test]
    fn weighted_l1_hand_cases() {
        let a = t(&[0.3, 0.7], 1, 2);
        assert_eq!(weighted_l1(&a, &a).unwrap(), 0.0);
        assert_eq!(weighted_l1(&t(&[0.0], 1, 1), &t(&[1.0], 1, 1)).unwrap(), 2.0);
        assert_eq!(weighted_l1(&t(&[1.0], 1, 1), &t(&[0.0], 1, 1)).unwrap(), 1.0);
        assert!(weighted_l1(&t(&[1.0], 1, 1), &t(&[0.0, 1.0], 1, 2)).is_err());
    }

    #[test]
    fn weighted_l1_dominates_plain_l1() {
        use rand::Rng;
        let mut r = crate::rng::stream(3, &[]);
        for _ in 0..100 {
            let a: Vec<f64> = (0..16).map(|_| r.random()).collect();
            let b: Vec<f64> = (0..16).map(|_| if r.random_bool(0.3) { 0.0 } else { r.random() }).collect();
            let l1: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
            assert!(weighted_l1(&t(&a, 4, 4), &t(&b, 4, 4)).unwrap() >= l1);
        }
        let zero = t(&[0.0; 4], 2, 2);
        let a = t(&[0.1, 0.2, 0.3, 0.4], 2, 2);
        assert!((weighted_l1(&a, &zero).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn stage1_at_optimum() {
        let w = LossWeights::default();
        let y: Vec<f64> = (0..256).map(|i| (i % 17) as f64 / 17.0).collect();
        let y = t(&y, 16, 16);
        let l = stage1_loss(&y, &y, &w).unwrap();
        assert!((l.value + 0.1).abs() < 1e-12);
        let w0 = LossWeights { gamma0: 0.0, ..w };
        let g = t(&vec![0.2; 256], 16, 16);
        assert_eq!(stage1_loss(&g, &y, &w0).unwrap().value, weighted_l1(&g, &y).unwrap());
    }

    #[test]
    fn stage2_hand_cases() {
        let yc = t(&[0.5; 4], 2, 2);
        let mut hi = vec![0.25; 256];
        let zero_err = stage2_loss(&yc, &t(&hi, 16, 16), &yc, &t(&hi, 16, 16)).unwrap();
        assert_eq!(zero_err.value, 0.0);
        let mut target = hi.clone();
        target[17] = 1.0;
        hi[17] = 0.0;
        let one_off = stage2_loss(&yc, &t(&hi, 16, 16), &yc, &t(&target, 16, 16)).unwrap();
        assert_eq!(one_off.value, 2.0);
    }

    #[test]
    fn stage2_is_stage1_plus_hires_when_gamma0_zero() {
        let w = LossWeights { gamma0: 0.0, ..LossWeights::default() };
        let g = t(&(0..16).map(|i| i as f64 / 20.0).collect::<Vec<_>>(), 4, 4);
        let yc = t(&[0.3; 16], 4, 4);
        let hi = t(&vec![0.1; 1024], 32, 32);
        let y = t(&vec![0.4; 1024], 32, 32);
        let s2 = stage2_loss(&g, &hi, &yc, &y).unwrap().value;
        let s1 = stage1_loss(&g, &yc, &w).unwrap().value;
        assert!((s2 - (s1 + weighted_l1(&hi, &y).unwrap())).abs() < 1e-12);
    }
}
