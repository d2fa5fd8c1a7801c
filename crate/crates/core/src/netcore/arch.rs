//! The generator (Corrector + Super-resolver) and the conditional critic.

use serde::{Deserialize, Serialize};

use super::graph::{Activation, Graph, GraphBuilder, NodeId, Tape};
use super::params::{ModelParams, ParamGrads, ParamGroup};
use super::real::Real;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Network shape. `width_divisor` scales every stated channel count down
/// (1 = full width); `lo_size` is the coarse grid edge (16 in production,
/// smaller for gradient checks). The high-resolution grid is always 8x.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub in_channels: usize,
    pub width_divisor: usize,
    pub lo_size: usize,
}

pub const UPSCALE: usize = 8;

impl Default for ArchSpec {
    fn default() -> Self {
        Self { in_channels: 24, width_divisor: 4, lo_size: 16 }
    }
}

impl ArchSpec {
    pub fn full_width() -> Self {
        Self { width_divisor: 1, ..Self::default() }
    }

    pub fn hi_size(&self) -> usize {
        self.lo_size * UPSCALE
    }

    /// A stated channel count after width reduction.
    pub fn ch(&self, n: usize) -> usize {
        (n / self.width_divisor.max(1)).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.lo_size == 0 || self.width_divisor == 0 {
            return Err(Error::InvalidArgument(format!("degenerate architecture {self:?}")));
        }
        if self.ch(256) < 2 {
            return Err(Error::InvalidArgument(format!(
                "width divisor {} leaves no room for the noise channel",
                self.width_divisor
            )));
        }
        Ok(())
    }
}

/// z ~ N(0, I) on the coarse grid, one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSample<T>(pub Tensor<T>);

impl<T: Real> NoiseSample<T> {
    pub fn zeros(size: usize) -> Self {
        Self(Tensor::zeros(1, size, size))
    }

    pub fn standard_normal(size: usize, rng: &mut impl rand::Rng) -> Self {
        use rand_distr::{Distribution, StandardNormal};
        let data = (0..size * size).map(|_| T::of(StandardNormal.sample(rng))).collect();
        Self(Tensor { c: 1, h: size, w: size, data })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorOutput<T> {
    /// G(x, z): `1 x 8n x 8n`, strictly inside (0,1).
    pub hi_res: Tensor<T>,
    /// g(x, z): `1 x n x n` corrected coarse proxy.
    pub lo_res_proxy: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct Generator {
    pub spec: ArchSpec,
    graph: Graph,
    x: NodeId,
    z: NodeId,
    lo: NodeId,
    hi: NodeId,
}

impl Generator {
    pub fn new(spec: ArchSpec) -> Result<Self> {
        spec.validate()?;
        let mut b = GraphBuilder::new();
        let c = |n| spec.ch(n);
        let corr = ParamGroup::Corrector;
        let sr = ParamGroup::SuperResolver;
        let relu = Activation::Relu;
        let leaky = Activation::LeakyRelu;

        let x = b.input(spec.in_channels);
        let z = b.input(1);
        let h = b.conv(x, c(64), 3, 1, corr, "corrector.conv_in");
        let h = b.residual(h, c(128), 1, relu, corr, "corrector.res1");
        let h = b.residual(h, c(256) - 1, 1, relu, corr, "corrector.res2");
        let mut h = b.concat(&[h, z]);
        for i in 3..6 {
            h = b.residual(h, c(256), 1, relu, corr, &format!("corrector.res{i}"));
        }
        let lo = b.conv(h, 1, 3, 1, corr, "corrector.proxy_head");

        let mut s = b.residual(h, c(256), 1, leaky, sr, "superres.res1");
        for (i, width) in [128, 64, 32].into_iter().enumerate() {
            s = b.upsample2x(s);
            s = b.residual(s, c(width), 1, leaky, sr, &format!("superres.res{}", i + 2));
        }
        let logits = b.conv(s, 1, 3, 1, sr, "superres.head");
        let hi = b.act(logits, Activation::Sigmoid);
        Ok(Self { spec, graph: b.finish(), x, z, lo, hi })
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn init_params<T: Real>(&self, seed: u64) -> ModelParams<T> {
        self.graph.init_params(seed)
    }

    fn check_inputs<T: Real>(&self, x: &Tensor<T>, z: &NoiseSample<T>) -> Result<()> {
        let n = self.spec.lo_size;
        if x.shape() != (self.spec.in_channels, n, n) {
            return Err(Error::Shape(format!(
                "generator input {:?}, expected {:?}",
                x.shape(),
                (self.spec.in_channels, n, n)
            )));
        }
        if z.0.shape() != (1, n, n) {
            return Err(Error::Shape(format!("noise {:?}, expected (1, {n}, {n})", z.0.shape())));
        }
        Ok(())
    }

    /// Full forward pass, keeping the tape for [`Generator::backward`].
    pub fn forward<T: Real>(&self, params: &ModelParams<T>, x: &Tensor<T>, z: &NoiseSample<T>) -> Result<(GeneratorOutput<T>, Tape<T>)> {
        self.check_inputs(x, z)?;
        let tape = self.graph.forward(params, &[(self.x, x), (self.z, &z.0)], &[self.lo, self.hi])?;
        let out = GeneratorOutput {
            hi_res: tape.value(self.hi).expect("evaluated").clone(),
            lo_res_proxy: tape.value(self.lo).expect("evaluated").clone(),
        };
        Ok((out, tape))
    }

    /// Corrector-only forward pass producing g(x, z).
    pub fn forward_corrector<T: Real>(&self, params: &ModelParams<T>, x: &Tensor<T>, z: &NoiseSample<T>) -> Result<(Tensor<T>, Tape<T>)> {
        self.check_inputs(x, z)?;
        let tape = self.graph.forward(params, &[(self.x, x), (self.z, &z.0)], &[self.lo])?;
        Ok((tape.value(self.lo).expect("evaluated").clone(), tape))
    }

    /// Accumulates parameter gradients for the given output adjoints.
    pub fn backward<T: Real>(
        &self,
        params: &ModelParams<T>,
        tape: &Tape<T>,
        d_hi: Option<Tensor<T>>,
        d_lo: Option<Tensor<T>>,
        grads: &mut ParamGrads<T>,
    ) -> Result<()> {
        let mut seeds = Vec::new();
        if let Some(g) = d_lo {
            seeds.push((self.lo, g));
        }
        if let Some(g) = d_hi {
            seeds.push((self.hi, g));
        }
        self.graph.backward(params, tape, &seeds, Some(grads), &[])?;
        Ok(())
    }
}

/// Result of the gradient-penalty evaluation at one interpolate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyTerm<T> {
    pub grad_norm: T,
    pub penalty: T,
}

#[derive(Debug, Clone)]
pub struct Discriminator {
    pub spec: ArchSpec,
    graph: Graph,
    x: NodeId,
    y: NodeId,
    out: NodeId,
}

impl Discriminator {
    pub fn new(spec: ArchSpec) -> Result<Self> {
        spec.validate()?;
        let mut b = GraphBuilder::new();
        let c = |n| spec.ch(n);
        let g = ParamGroup::Critic;
        let act = Activation::LeakyRelu;

        let x = b.input(spec.in_channels);
        let y = b.input(1);

        // high-res branch: three stride-2 blocks bring 8n down to n
        let mut h1 = b.conv(y, c(32), 3, 1, g, "critic.hi.conv_in");
        for (i, width) in [64, 128, 256].into_iter().enumerate() {
            h1 = b.residual(h1, c(width), 2, act, g, &format!("critic.hi.res{}", i + 1));
        }
        let mut h2 = b.conv(x, c(32), 3, 1, g, "critic.lo.conv_in");
        for (i, width) in [64, 128, 256].into_iter().enumerate() {
            h2 = b.residual(h2, c(width), 1, act, g, &format!("critic.lo.res{}", i + 1));
        }
        let joint = b.concat(&[h1, h2]);
        let joint = b.residual(joint, c(256), 1, act, g, "critic.joint.res");
        let pooled_joint = b.global_avg_pool(joint);
        let alone = b.residual(h1, c(256), 1, act, g, "critic.hi_only.res");
        let pooled_alone = b.global_avg_pool(alone);
        let feats = b.concat(&[pooled_joint, pooled_alone]);
        let hidden = b.linear(feats, c(256), g, "critic.dense1");
        let hidden = b.act(hidden, act);
        let out = b.linear(hidden, 1, g, "critic.dense2");
        Ok(Self { spec, graph: b.finish(), x, y, out })
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn init_params<T: Real>(&self, seed: u64) -> ModelParams<T> {
        self.graph.init_params(seed)
    }

    fn check_inputs<T: Real>(&self, x: &Tensor<T>, y: &Tensor<T>) -> Result<()> {
        let (n, hn) = (self.spec.lo_size, self.spec.hi_size());
        if x.shape() != (self.spec.in_channels, n, n) {
            return Err(Error::Shape(format!("critic condition {:?}", x.shape())));
        }
        if y.shape() != (1, hn, hn) {
            return Err(Error::Shape(format!("critic field {:?}, expected (1, {hn}, {hn})", y.shape())));
        }
        Ok(())
    }

    fn run<T: Real>(&self, params: &ModelParams<T>, x: &Tensor<T>, y: &Tensor<T>) -> Result<Tape<T>> {
        self.check_inputs(x, y)?;
        self.graph.forward(params, &[(self.x, x), (self.y, y)], &[self.out])
    }

    fn score_of<T: Real>(&self, tape: &Tape<T>) -> T {
        tape.value(self.out).expect("evaluated").data[0]
    }

    pub fn score<T: Real>(&self, params: &ModelParams<T>, x: &Tensor<T>, y: &Tensor<T>) -> Result<T> {
        Ok(self.score_of(&self.run(params, x, y)?))
    }

    /// Score and its gradient with respect to the high-resolution field,
    /// optionally accumulating `weight * dD/dtheta` into `grads`.
    pub fn score_and_grad<T: Real>(
        &self,
        params: &ModelParams<T>,
        x: &Tensor<T>,
        y: &Tensor<T>,
        weight: T,
        grads: Option<&mut ParamGrads<T>>,
    ) -> Result<(T, Tensor<T>)> {
        let tape = self.run(params, x, y)?;
        let seed = Tensor::filled(1, 1, 1, weight);
        let mut dy = self.graph.backward(params, &tape, &[(self.out, seed)], grads, &[self.y])?;
        Ok((self.score_of(&tape), dy.remove(0)))
    }

    /// `lambda * (||grad_y D(x, y)|| - 1)^2` at `y`, accumulating
    /// `weight * dPenalty/dtheta` into `grads` when given.
    ///
    /// The parameter gradient equals the gradient of the directional
    /// derivative `D'(y)[v]` with `v = dPenalty/d(grad_y D)` held fixed,
    /// computed by a tangent pass followed by its reverse.
    pub fn gradient_penalty<T: Real>(
        &self,
        params: &ModelParams<T>,
        x: &Tensor<T>,
        y: &Tensor<T>,
        lambda: T,
        weight: T,
        grads: Option<&mut ParamGrads<T>>,
    ) -> Result<PenaltyTerm<T>> {
        let tape = self.run(params, x, y)?;
        let one = Tensor::filled(1, 1, 1, T::one());
        let g = self.graph.backward(params, &tape, &[(self.out, one)], None, &[self.y])?.remove(0);
        let norm = g.norm();
        if !norm.is_finite() {
            return Err(Error::Divergence("non-finite critic input gradient".into()));
        }
        let gap = norm - T::one();
        let penalty = lambda * gap * gap;
        if let Some(grads) = grads {
            if norm > T::zero() {
                let mut v = g;
                v.scale(weight * T::of(2.0) * lambda * gap / norm);
                let tan = self.graph.tangent_forward(params, &tape, &[(self.y, v)])?;
                let seed = Tensor::filled(1, 1, 1, T::one());
                self.graph.tangent_backward(params, &tape, &tan, &[(self.out, seed)], grads)?;
            }
        }
        Ok(PenaltyTerm { grad_norm: norm, penalty })
    }
}
