//! Fractions skill score and its sigmoid-relaxed, differentiable form.

use super::LossGrad;
use crate::error::{Error, Result};
use crate::netcore::{Real, Tensor};

/// `1 - sum (o - m)^2 / (sum o^2 + sum m^2)`, defined as 1 when both
/// fraction fields are identically zero.
pub fn fss_from_fractions(observed: &[f64], modelled: &[f64]) -> f64 {
    let num: f64 = observed.iter().zip(modelled).map(|(o, m)| (o - m) * (o - m)).sum();
    let den: f64 = observed.iter().chain(modelled).map(|v| v * v).sum();
    if den == 0.0 {
        1.0
    } else {
        1.0 - num / den
    }
}

/// Means over non-overlapping `window x window` tiles, tile-row-major.
pub fn window_means<T: Real>(values: &[T], h: usize, w: usize, window: usize) -> Result<Vec<T>> {
    if window == 0 || !h.is_multiple_of(window) || !w.is_multiple_of(window) {
        return Err(Error::InvalidArgument(format!("window {window} does not tile a {h}x{w} field")));
    }
    let (th, tw) = (h / window, w / window);
    let mut out = vec![T::zero(); th * tw];
    for r in 0..h {
        for c in 0..w {
            out[(r / window) * tw + c / window] += values[r * w + c];
        }
    }
    let inv = T::one() / T::of((window * window) as f64);
    out.iter_mut().for_each(|v| *v *= inv);
    Ok(out)
}

fn sigmoid<T: Real>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

fn soft_mask<T: Real>(t: &Tensor<T>, threshold: T, sharpness: T) -> Vec<T> {
    t.data.iter().map(|&v| sigmoid(sharpness * (v - threshold))).collect()
}

/// FSS with indicator masks replaced by `sigmoid(sharpness * (v - threshold))`.
pub fn soft_fss<T: Real>(pred: &Tensor<T>, target: &Tensor<T>, threshold: T, sharpness: T, window: usize) -> Result<T> {
    Ok(soft_fss_grad(pred, target, threshold, sharpness, window)?.value)
}

/// [`soft_fss`] and its gradient with respect to `pred`.
pub fn soft_fss_grad<T: Real>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    threshold: T,
    sharpness: T,
    window: usize,
) -> Result<LossGrad<T>> {
    if pred.shape() != target.shape() || pred.c != 1 {
        return Err(Error::Shape(format!("soft FSS needs matching single-channel fields, got {:?} and {:?}", pred.shape(), target.shape())));
    }
    let (h, w) = (pred.h, pred.w);
    let pm = soft_mask(pred, threshold, sharpness);
    let om = soft_mask(target, threshold, sharpness);
    let m = window_means(&pm, h, w, window)?;
    let o = window_means(&om, h, w, window)?;
    let num = o.iter().zip(&m).fold(T::zero(), |a, (&oi, &mi)| a + (oi - mi) * (oi - mi));
    let den = o.iter().chain(&m).fold(T::zero(), |a, &v| a + v * v);
    let mut grad = Tensor::zeros(1, h, w);
    if den == T::zero() {
        return Ok(LossGrad { value: T::one(), grad });
    }
    let value = T::one() - num / den;
    // dFSS/dM_i = 2 ((O_i - M_i) den + num M_i) / den^2
    let two = T::of(2.0);
    let d_m: Vec<T> = o.iter().zip(&m).map(|(&oi, &mi)| two * ((oi - mi) * den + num * mi) / (den * den)).collect();
    let tw = w / window;
    let inv = T::one() / T::of((window * window) as f64);
    for r in 0..h {
        for c in 0..w {
            let s = pm[r * w + c];
            grad.data[r * w + c] = d_m[(r / window) * tw + c / window] * inv * sharpness * s * (T::one() - s);
        }
    }
    Ok(LossGrad { value, grad })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fraction_formula_hand_cases() {
        assert_eq!(fss_from_fractions(&[0.5, 0.0], &[0.0, 0.5]), 0.0);
        assert!((fss_from_fractions(&[0.5, 0.5], &[0.5, 0.0]) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(fss_from_fractions(&[0.3, 0.1], &[0.3, 0.1]), 1.0);
        assert_eq!(fss_from_fractions(&[0.0, 0.0], &[0.0, 0.0]), 1.0);
    }

    #[test]
    fn identical_fields_score_one() {
        use rand::Rng;
        let mut r = crate::rng::stream(8, &[]);
        for window in [1, 2, 4, 8] {
            let v: Vec<f64> = (0..64).map(|_| r.random()).collect();
            let f = Tensor::from_vec(1, 8, 8, v).unwrap();
            assert_eq!(soft_fss(&f, &f, 0.5, 10.0, window).unwrap(), 1.0);
        }
    }

    #[test]
    fn soft_fss_in_unit_interval() {
        use rand::Rng;
        let mut r = crate::rng::stream(9, &[]);
        for _ in 0..200 {
            let a = Tensor::from_vec(1, 8, 8, (0..64).map(|_| r.random()).collect()).unwrap();
            let b = Tensor::from_vec(1, 8, 8, (0..64).map(|_| r.random()).collect()).unwrap();
            let s: f64 = soft_fss(&a, &b, 0.5, r.random_range(0.1..100.0), 4).unwrap();
            assert!((0.0..=1.0).contains(&s));
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        use rand::Rng;
        let mut r = crate::rng::stream(10, &[]);
        let a = Tensor::from_vec(1, 8, 8, (0..64).map(|_| r.random()).collect::<Vec<f64>>()).unwrap();
        let b = Tensor::from_vec(1, 8, 8, (0..64).map(|_| r.random()).collect::<Vec<f64>>()).unwrap();
        let g = soft_fss_grad(&a, &b, 0.5, 10.0, 4).unwrap();
        let h = 1e-6;
        for k in 0..64 {
            let mut p = a.clone();
            p.data[k] += h;
            let mut m = a.clone();
            m.data[k] -= h;
            let fd = (soft_fss(&p, &b, 0.5, 10.0, 4).unwrap() - soft_fss(&m, &b, 0.5, 10.0, 4).unwrap()) / (2.0 * h);
            assert!((fd - g.grad.data[k]).abs() <= 1e-6 * fd.abs().max(1e-4));
        }
    }

    #[test]
    fn rejects_untileable_window() {
        let f = Tensor::<f64>::zeros(1, 6, 6);
        assert!(soft_fss(&f, &f, 0.5, 10.0, 4).is_err());
    }
}
