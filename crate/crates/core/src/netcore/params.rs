use rand::Rng;
use serde::{Deserialize, Serialize};

use super::real::Real;
use crate::error::{Error, Result};
use crate::rng;

/// Which sub-network a parameter belongs to. Stage-wise training updates
/// only the groups it targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Corrector,
    SuperResolver,
    Critic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Weight,
    Bias,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub group: ParamGroup,
    pub kind: ParamKind,
    pub fan_in: usize,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Named parameter tensors of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub specs: Vec<ParamSpec>,
    pub tensors: Vec<Vec<T>>,
    pub seed: u64,
}

impl<T: Real> ModelParams<T> {
    /// He-style uniform init, `U(-sqrt(6/fan_in), sqrt(6/fan_in))` for weights,
    /// zero biases. Each tensor draws from its own stream.
    pub fn init(specs: Vec<ParamSpec>, seed: u64) -> Self {
        let tensors = specs
            .iter()
            .enumerate()
            .map(|(i, spec)| match spec.kind {
                ParamKind::Bias => vec![T::zero(); spec.len()],
                ParamKind::Weight => {
                    let bound = (6.0 / spec.fan_in.max(1) as f64).sqrt();
                    let mut r = rng::stream(seed, &[rng::label::INIT, i as u64]);
                    (0..spec.len()).map(|_| T::of(r.random_range(-bound..bound))).collect()
                }
            })
            .collect();
        Self { specs, tensors, seed }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            specs: self.specs.clone(),
            tensors: self.tensors.iter().map(|t| vec![T::zero(); t.len()]).collect(),
            seed: self.seed,
        }
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Vec::len).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&[T]> {
        self.index_of(name).map(|i| self.tensors[i].as_slice())
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Vec<T>> {
        self.index_of(name).map(move |i| &mut self.tensors[i])
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().flatten().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            specs: self.specs.clone(),
            tensors: self.tensors.iter().map(|t| t.iter().map(|&v| U::of(v.f64())).collect()).collect(),
            seed: self.seed,
        }
    }

    pub fn fill_zero(&mut self) {
        self.tensors.iter_mut().flatten().for_each(|v| *v = T::zero());
    }

    /// `self += scale * other`, tensor by tensor in a fixed order.
    pub fn add_scaled(&mut self, other: &ModelParams<T>, scale: T) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    /// Zeroes every tensor not in `groups`.
    pub fn retain_groups(&mut self, groups: &[ParamGroup]) {
        for (spec, t) in self.specs.iter().zip(self.tensors.iter_mut()) {
            if !groups.contains(&spec.group) {
                t.iter_mut().for_each(|v| *v = T::zero());
            }
        }
    }

    pub fn check_compatible(&self, other: &ModelParams<T>) -> Result<()> {
        if self.specs.len() != other.specs.len() {
            return Err(Error::Shape(format!(
                "parameter sets differ: {} vs {} tensors",
                self.specs.len(),
                other.specs.len()
            )));
        }
        for (a, b) in self.specs.iter().zip(&other.specs) {
            if a.name != b.name || a.shape != b.shape {
                return Err(Error::Shape(format!("parameter {} {:?} vs {} {:?}", a.name, a.shape, b.name, b.shape)));
            }
        }
        Ok(())
    }
}

/// Gradients share the parameter layout.
pub type ParamGrads<T> = ModelParams<T>;
