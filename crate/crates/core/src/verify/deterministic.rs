use serde::{Deserialize, Serialize};

use super::{check_pair, CompensatedSum, EnsembleForecast};
use crate::error::{Error, Result};
use crate::fieldio::GridField;
use crate::losses::{fss_from_fractions, window_means};

fn same_dims(a: &GridField, b: &GridField) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

pub fn rmse(pred: &GridField, obs: &GridField) -> Result<f64> {
    same_dims(pred, obs)?;
    let s: CompensatedSum = pred.values().iter().zip(obs.values()).map(|(p, o)| (*p as f64 - *o as f64).powi(2)).collect();
    Ok((s.value() / pred.values().len() as f64).sqrt())
}

/// Hard-mask fractions skill score over non-overlapping windows.
pub fn fss(pred: &GridField, obs: &GridField, threshold: f64, window: usize) -> Result<f64> {
    same_dims(pred, obs)?;
    let (h, w) = pred.dims();
    let mask = |f: &GridField| f.values().iter().map(|v| (*v as f64 > threshold) as u8 as f64).collect::<Vec<f64>>();
    let m = window_means(&mask(pred), h, w, window)?;
    let o = window_means(&mask(obs), h, w, window)?;
    Ok(fss_from_fractions(&o, &m))
}

/// Pixelwise precision and recall of exceedances; `None` where undefined.
pub fn precision_recall(pred: &GridField, obs: &GridField, threshold: f64) -> Result<(Option<f64>, Option<f64>)> {
    same_dims(pred, obs)?;
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for (p, o) in pred.values().iter().zip(obs.values()) {
        match (*p as f64 > threshold, *o as f64 > threshold) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    let ratio = |a: u64, b: u64| (a + b > 0).then(|| a as f64 / (a + b) as f64);
    Ok((ratio(tp, fp), ratio(tp, fn_)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdScores {
    pub threshold: f64,
    pub fss: f64,
    /// Mean over member-patch evaluations where precision is defined.
    pub precision: Option<f64>,
    pub precision_undefined: u64,
    pub recall: Option<f64>,
    pub recall_undefined: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeterministicScores {
    pub rmse: f64,
    pub fss_window: usize,
    pub evaluations: u64,
    pub per_threshold: Vec<ThresholdScores>,
}

#[derive(Debug, Clone, Default)]
struct Slot {
    fss: CompensatedSum,
    precision: CompensatedSum,
    precision_n: u64,
    recall: CompensatedSum,
    recall_n: u64,
}

/// Per-member scores averaged over members and patches.
#[derive(Debug, Clone)]
pub struct DeterministicAccumulator {
    thresholds: Vec<f64>,
    window: usize,
    rmse: CompensatedSum,
    n: u64,
    slots: Vec<Slot>,
}

impl DeterministicAccumulator {
    pub fn new(thresholds: &[f64], window: usize) -> Self {
        Self { thresholds: thresholds.to_vec(), window, rmse: Default::default(), n: 0, slots: vec![Slot::default(); thresholds.len()] }
    }

    pub fn add(&mut self, ens: &EnsembleForecast, obs: &GridField) -> Result<()> {
        check_pair(ens, obs)?;
        for m in ens.members() {
            self.rmse.add(rmse(m, obs)?);
            self.n += 1;
            for (t, slot) in self.thresholds.iter().zip(self.slots.iter_mut()) {
                slot.fss.add(fss(m, obs, *t, self.window)?);
                let (p, r) = precision_recall(m, obs, *t)?;
                if let Some(p) = p {
                    slot.precision.add(p);
                    slot.precision_n += 1;
                }
                if let Some(r) = r {
                    slot.recall.add(r);
                    slot.recall_n += 1;
                }
            }
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<DeterministicScores> {
        if self.n == 0 {
            return Err(Error::InvalidArgument("deterministic scores over an empty stream".into()));
        }
        let n = self.n as f64;
        let mean = |s: &CompensatedSum, k: u64| (k > 0).then(|| s.value() / k as f64);
        Ok(DeterministicScores {
            rmse: self.rmse.value() / n,
            fss_window: self.window,
            evaluations: self.n,
            per_threshold: self
                .thresholds
                .iter()
                .zip(&self.slots)
                .map(|(t, s)| ThresholdScores {
                    threshold: *t,
                    fss: s.fss.value() / n,
                    precision: mean(&s.precision, s.precision_n),
                    precision_undefined: self.n - s.precision_n,
                    recall: mean(&s.recall, s.recall_n),
                    recall_undefined: self.n - s.recall_n,
                })
                .collect(),
        })
    }
}

pub fn deterministic_suite(pairs: &[(EnsembleForecast, GridField)], thresholds: &[f64], window: usize) -> Result<DeterministicScores> {
    let mut acc = DeterministicAccumulator::new(thresholds, window);
    for (e, o) in pairs {
        acc.add(e, o)?;
    }
    acc.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fieldio::Space;
    use crate::losses::soft_fss;
    use crate::netcore::Tensor;
    use rand::Rng;

    fn raw(v: Vec<f32>, h: usize, w: usize) -> GridField {
        GridField::new(v, h, w, Space::RawMm).unwrap()
    }

    #[test]
    fn fss_hand_cases() {
        let a = raw(vec![1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], 2, 4);
        let b = raw(vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0], 2, 4);
        assert_eq!(fss(&a, &a, 0.5, 2).unwrap(), 1.0);
        assert_eq!(fss(&a, &b, 0.5, 2).unwrap(), 0.0);
        let dry = raw(vec![0.0; 8], 2, 4);
        assert_eq!(fss(&dry, &dry, 0.5, 2).unwrap(), 1.0);
        assert!(fss(&a, &a, 0.5, 3).is_err());
    }

    #[test]
    fn fss_is_sharp_limit_of_soft_fss() {
        let mut r = crate::rng::stream(13, &[]);
        let mut draw = || if r.random_bool(0.5) { r.random_range(0.0..0.3) } else { r.random_range(0.7..1.0) };
        for _ in 0..50 {
            let a: Vec<f64> = (0..256).map(|_| draw()).collect();
            let b: Vec<f64> = (0..256).map(|_| draw()).collect();
            let hard = fss(&raw(a.iter().map(|v| *v as f32).collect(), 16, 16), &raw(b.iter().map(|v| *v as f32).collect(), 16, 16), 0.5, 4).unwrap();
            let soft = soft_fss(&Tensor::from_vec(1, 16, 16, a).unwrap(), &Tensor::from_vec(1, 16, 16, b).unwrap(), 0.5, 1000.0, 4).unwrap();
            assert!((hard - soft).abs() < 1e-3);
        }
    }

    #[test]
    fn confusion_corners() {
        let obs = raw(vec![5.0, 0.0, 5.0, 0.0], 2, 2);
        let pred = raw(vec![5.0, 5.0, 0.0, 0.0], 2, 2);
        assert_eq!(precision_recall(&pred, &obs, 1.0).unwrap(), (Some(0.5), Some(0.5)));
        let wet = raw(vec![5.0; 4], 2, 2);
        let dry = raw(vec![0.0; 4], 2, 2);
        assert_eq!(precision_recall(&wet, &dry, 1.0).unwrap(), (Some(0.0), None));
    }

    #[test]
    fn perfect_member_scores() {
        let obs = raw((0..256).map(|i| (i % 13) as f32).collect(), 16, 16);
        let ens = EnsembleForecast::new(vec![obs.clone(); 3]).unwrap();
        let s = deterministic_suite(&[(ens, obs)], &[1.0, 100.0], 4).unwrap();
        assert_eq!(s.rmse, 0.0);
        assert_eq!(s.evaluations, 3);
        let t = &s.per_threshold[0];
        assert_eq!((t.fss, t.precision, t.recall), (1.0, Some(1.0), Some(1.0)));
        let none = &s.per_threshold[1];
        assert_eq!((none.precision, none.precision_undefined, none.recall_undefined), (None, 3, 3));
    }
}
