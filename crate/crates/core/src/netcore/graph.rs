//! A static computation graph over single-sample `C x H x W` tensors.
//!
//! The graph supports three passes over a recorded forward [`Tape`]:
//!
//! * reverse mode ([`Graph::backward`]): adjoints of seeded nodes with
//!   respect to parameters and chosen inputs;
//! * forward mode ([`Graph::tangent_forward`]): directional derivatives
//!   along a tangent seeded at an input;
//! * reverse over forward ([`Graph::tangent_backward`]): parameter gradient
//!   of a tangent output.
//!
//! The last pass gives exact second-order terms only when every
//! nonlinearity on the tangent path is piecewise linear (ReLU, leaky ReLU),
//! since then the curvature terms vanish almost everywhere. Sigmoid nodes
//! on a tangent path are rejected.

use super::conv::{ConvCache, ConvShape};
use super::kernels::Upsampler;
use super::params::{ModelParams, ParamGrads, ParamGroup, ParamKind, ParamSpec};
use super::real::Real;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub type NodeId = usize;

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    LeakyRelu,
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Input { channels: usize },
    Conv { src: NodeId, weight: usize, bias: usize, cin: usize, cout: usize, ksize: usize, stride: usize },
    Act { src: NodeId, kind: Activation },
    Add { a: NodeId, b: NodeId },
    Concat { parts: Vec<NodeId> },
    Upsample2x { src: NodeId },
    GlobalAvgPool { src: NodeId },
}

impl Op {
    fn sources(&self) -> Vec<NodeId> {
        match self {
            Op::Input { .. } => vec![],
            Op::Conv { src, .. } | Op::Act { src, .. } | Op::Upsample2x { src } | Op::GlobalAvgPool { src } => vec![*src],
            Op::Add { a, b } => vec![*a, *b],
            Op::Concat { parts } => parts.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Graph {
    ops: Vec<Op>,
    channels: Vec<usize>,
    specs: Vec<ParamSpec>,
}

/// Values recorded by a forward pass. Nodes outside the requested outputs'
/// ancestry stay `None`.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    values: Vec<Option<Tensor<T>>>,
    caches: Vec<Option<ConvCache<T>>>,
}

impl<T: Real> Tape<T> {
    pub fn value(&self, node: NodeId) -> Option<&Tensor<T>> {
        self.values[node].as_ref()
    }
}

fn activate<T: Real>(kind: Activation, v: T) -> T {
    match kind {
        Activation::Relu => v.max(T::zero()),
        Activation::LeakyRelu => {
            if v > T::zero() {
                v
            } else {
                v * T::of(LEAKY_SLOPE)
            }
        }
        // clamped so the output stays strictly inside (0,1) after rounding
        Activation::Sigmoid => (T::one() / (T::one() + (-v).exp()))
            .max(T::min_positive_value())
            .min(T::one() - T::epsilon() / T::of(2.0)),
    }
}

/// Slope of a piecewise-linear activation at pre-activation `v`.
fn slope<T: Real>(kind: Activation, v: T) -> T {
    match kind {
        Activation::Relu if v > T::zero() => T::one(),
        Activation::Relu => T::zero(),
        Activation::LeakyRelu if v > T::zero() => T::one(),
        Activation::LeakyRelu => T::of(LEAKY_SLOPE),
        Activation::Sigmoid => unreachable!("sigmoid slope uses the output value"),
    }
}

fn accumulate<T: Real>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(t) => t.add_assign(&g),
        None => *slot = Some(g),
    }
}

impl Graph {
    pub fn ops(&self) -> &[Op] {
        &self.ops
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn channels(&self, node: NodeId) -> usize {
        self.channels[node]
    }

    pub fn init_params<T: Real>(&self, seed: u64) -> ModelParams<T> {
        ModelParams::init(self.specs.clone(), seed)
    }

    fn ancestors(&self, outputs: &[NodeId]) -> Vec<bool> {
        let mut needed = vec![false; self.ops.len()];
        for &o in outputs {
            needed[o] = true;
        }
        for n in (0..self.ops.len()).rev() {
            if needed[n] {
                for s in self.ops[n].sources() {
                    needed[s] = true;
                }
            }
        }
        needed
    }

    fn check_params<T: Real>(&self, params: &ModelParams<T>) -> Result<()> {
        if params.specs.len() != self.specs.len() {
            return Err(Error::Shape(format!(
                "graph has {} parameter tensors, got {}",
                self.specs.len(),
                params.specs.len()
            )));
        }
        for (spec, t) in self.specs.iter().zip(&params.tensors) {
            if t.len() != spec.len() {
                return Err(Error::Shape(format!("parameter {} has {} values, expected {}", spec.name, t.len(), spec.len())));
            }
        }
        Ok(())
    }

    /// Evaluates the ancestors of `outputs`.
    pub fn forward<T: Real>(
        &self,
        params: &ModelParams<T>,
        inputs: &[(NodeId, &Tensor<T>)],
        outputs: &[NodeId],
    ) -> Result<Tape<T>> {
        self.check_params(params)?;
        let needed = self.ancestors(outputs);
        let mut values: Vec<Option<Tensor<T>>> = vec![None; self.ops.len()];
        let mut caches: Vec<Option<ConvCache<T>>> = vec![None; self.ops.len()];
        for (n, op) in self.ops.iter().enumerate() {
            if !needed[n] {
                continue;
            }
            let out = match op {
                Op::Input { channels } => {
                    let (_, t) = inputs
                        .iter()
                        .find(|(id, _)| *id == n)
                        .ok_or_else(|| Error::InvalidArgument(format!("input node {n} not supplied")))?;
                    if t.c != *channels {
                        return Err(Error::Shape(format!("input node {n} expects {channels} channels, got {}", t.c)));
                    }
                    if t.h == 0 || t.w == 0 {
                        return Err(Error::Shape("empty input".into()));
                    }
                    (*t).clone()
                }
                &Op::Conv { src, weight, bias, cin, cout, ksize, stride } => {
                    let x = values[src].as_ref().expect("source evaluated");
                    let shape = ConvShape { cin, cout, ksize, stride };
                    let cache = shape.prepare(x);
                    let y = shape.forward(&params.tensors[weight], Some(&params.tensors[bias]), x, &cache);
                    caches[n] = Some(cache);
                    y
                }
                &Op::Act { src, kind } => {
                    let x = values[src].as_ref().expect("source evaluated");
                    let mut y = x.clone();
                    y.data.iter_mut().for_each(|v| *v = activate(kind, *v));
                    y
                }
                &Op::Add { a, b } => {
                    let mut y = values[a].clone().expect("source evaluated");
                    let rhs = values[b].as_ref().expect("source evaluated");
                    if y.shape() != rhs.shape() {
                        return Err(Error::Shape(format!("add {:?} + {:?}", y.shape(), rhs.shape())));
                    }
                    y.add_assign(rhs);
                    y
                }
                Op::Concat { parts } => {
                    let first = values[parts[0]].as_ref().expect("source evaluated");
                    let (h, w) = (first.h, first.w);
                    let mut data = Vec::with_capacity(self.channels[n] * h * w);
                    for &p in parts {
                        let t = values[p].as_ref().expect("source evaluated");
                        if (t.h, t.w) != (h, w) {
                            return Err(Error::Shape(format!("concat {}x{} with {}x{}", h, w, t.h, t.w)));
                        }
                        data.extend_from_slice(&t.data);
                    }
                    Tensor::from_vec(self.channels[n], h, w, data)?
                }
                &Op::Upsample2x { src } => {
                    let x = values[src].as_ref().expect("source evaluated");
                    Upsampler::new(x.h, x.w).forward(x)
                }
                &Op::GlobalAvgPool { src } => {
                    let x = values[src].as_ref().expect("source evaluated");
                    let inv = T::one() / T::of(x.plane() as f64);
                    let data = (0..x.c).map(|c| x.channel(c).iter().copied().sum::<T>() * inv).collect();
                    Tensor::from_vec(x.c, 1, 1, data)?
                }
            };
            values[n] = Some(out);
        }
        Ok(Tape { values, caches })
    }

    /// Directional derivative of every evaluated node along tangents seeded
    /// at input nodes. Nodes not downstream of a seed get `None` (zero).
    pub fn tangent_forward<T: Real>(
        &self,
        params: &ModelParams<T>,
        tape: &Tape<T>,
        seeds: &[(NodeId, Tensor<T>)],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let mut tan: Vec<Option<Tensor<T>>> = vec![None; self.ops.len()];
        for (n, op) in self.ops.iter().enumerate() {
            if tape.values[n].is_none() {
                continue;
            }
            let out = match op {
                Op::Input { .. } => seeds.iter().find(|(id, _)| *id == n).map(|(_, t)| t.clone()),
                &Op::Conv { src, weight, cin, cout, ksize, stride, .. } => tan[src].as_ref().map(|dx| {
                    let shape = ConvShape { cin, cout, ksize, stride };
                    shape.forward(&params.tensors[weight], None, dx, &shape.prepare(dx))
                }),
                &Op::Act { src, kind } => match &tan[src] {
                    None => None,
                    Some(_) if kind == Activation::Sigmoid => {
                        return Err(Error::Unsupported("tangent through a sigmoid node".into()));
                    }
                    Some(dx) => {
                        let x = tape.values[src].as_ref().expect("evaluated");
                        let mut y = dx.clone();
                        for (d, &v) in y.data.iter_mut().zip(&x.data) {
                            *d *= slope(kind, v);
                        }
                        Some(y)
                    }
                },
                &Op::Add { a, b } => match (&tan[a], &tan[b]) {
                    (None, None) => None,
                    (Some(t), None) | (None, Some(t)) => Some(t.clone()),
                    (Some(x), Some(y)) => {
                        let mut s = x.clone();
                        s.add_assign(y);
                        Some(s)
                    }
                },
                Op::Concat { parts } => {
                    if parts.iter().all(|&p| tan[p].is_none()) {
                        None
                    } else {
                        let mut data = Vec::new();
                        let mut hw = (0, 0);
                        for &p in parts {
                            let v = tape.values[p].as_ref().expect("evaluated");
                            hw = (v.h, v.w);
                            match &tan[p] {
                                Some(t) => data.extend_from_slice(&t.data),
                                None => data.extend(std::iter::repeat_n(T::zero(), v.data.len())),
                            }
                        }
                        Some(Tensor::from_vec(self.channels[n], hw.0, hw.1, data)?)
                    }
                }
                &Op::Upsample2x { src } => tan[src].as_ref().map(|dx| Upsampler::new(dx.h, dx.w).forward(dx)),
                &Op::GlobalAvgPool { src } => match &tan[src] {
                    None => None,
                    Some(dx) => {
                        let inv = T::one() / T::of(dx.plane() as f64);
                        let data = (0..dx.c).map(|c| dx.channel(c).iter().copied().sum::<T>() * inv).collect();
                        Some(Tensor::from_vec(dx.c, 1, 1, data)?)
                    }
                },
            };
            tan[n] = out;
        }
        Ok(tan)
    }

    /// Reverse pass. Accumulates parameter gradients into `grads` when given
    /// and returns the adjoints of `wanted_inputs` (zero tensors if the
    /// input does not influence the seeds).
    pub fn backward<T: Real>(
        &self,
        params: &ModelParams<T>,
        tape: &Tape<T>,
        seeds: &[(NodeId, Tensor<T>)],
        grads: Option<&mut ParamGrads<T>>,
        wanted_inputs: &[NodeId],
    ) -> Result<Vec<Tensor<T>>> {
        self.propagate(params, tape, None, seeds, grads, wanted_inputs)
    }

    /// Parameter gradient of the tangent outputs seeded in `seeds`, given the
    /// tangents from [`Graph::tangent_forward`]. Exact for piecewise-linear
    /// graphs; biases receive no gradient since tangents do not depend on them.
    pub fn tangent_backward<T: Real>(
        &self,
        params: &ModelParams<T>,
        tape: &Tape<T>,
        tangents: &[Option<Tensor<T>>],
        seeds: &[(NodeId, Tensor<T>)],
        grads: &mut ParamGrads<T>,
    ) -> Result<()> {
        self.propagate(params, tape, Some(tangents), seeds, Some(grads), &[]).map(|_| ())
    }

    fn propagate<T: Real>(
        &self,
        params: &ModelParams<T>,
        tape: &Tape<T>,
        tangents: Option<&[Option<Tensor<T>>]>,
        seeds: &[(NodeId, Tensor<T>)],
        mut grads: Option<&mut ParamGrads<T>>,
        wanted_inputs: &[NodeId],
    ) -> Result<Vec<Tensor<T>>> {
        let n_nodes = self.ops.len();
        // flows[n]: the adjoint of n is needed by some parameter or wanted input
        let mut flows = vec![false; n_nodes];
        for (n, op) in self.ops.iter().enumerate() {
            let from_sources = op.sources().iter().any(|&s| flows[s]);
            flows[n] = match op {
                Op::Input { .. } => wanted_inputs.contains(&n),
                Op::Conv { .. } => grads.is_some() || from_sources,
                _ => from_sources,
            };
            if let Some(t) = tangents {
                flows[n] &= t[n].is_some();
            }
            flows[n] &= tape.values[n].is_some();
        }

        let mut adj: Vec<Option<Tensor<T>>> = vec![None; n_nodes];
        for (id, g) in seeds {
            let v = tape.values[*id].as_ref().ok_or_else(|| Error::InvalidArgument(format!("node {id} not evaluated")))?;
            if v.shape() != g.shape() {
                return Err(Error::Shape(format!("seed {:?} for node of shape {:?}", g.shape(), v.shape())));
            }
            accumulate(&mut adj[*id], g.clone());
        }

        let mut input_adj: Vec<Option<Tensor<T>>> = vec![None; n_nodes];
        for n in (0..n_nodes).rev() {
            let Some(g) = adj[n].take() else { continue };
            match &self.ops[n] {
                Op::Input { .. } => input_adj[n] = Some(g),
                &Op::Conv { src, weight, bias, cin, cout, ksize, stride } => {
                    let x = tape.values[src].as_ref().expect("evaluated");
                    let shape = ConvShape { cin, cout, ksize, stride };
                    if let Some(grads) = grads.as_deref_mut() {
                        match tangents {
                            None => {
                                let cache = tape.caches[n].as_ref().expect("conv cache");
                                shape.weight_grad(&g, x, cache, &mut grads.tensors[weight]);
                                for (c, chunk) in g.data.chunks(g.plane()).enumerate() {
                                    grads.tensors[bias][c] += chunk.iter().copied().sum::<T>();
                                }
                            }
                            Some(t) => {
                                let dx = t[src].as_ref().expect("tangent path");
                                shape.weight_grad(&g, dx, &shape.prepare(dx), &mut grads.tensors[weight]);
                            }
                        }
                    }
                    if flows[src] {
                        accumulate(&mut adj[src], shape.input_grad(&g, &params.tensors[weight], x.h, x.w));
                    }
                }
                &Op::Act { src, kind } => {
                    if flows[src] {
                        let mut dx = g;
                        if kind == Activation::Sigmoid {
                            if tangents.is_some() {
                                return Err(Error::Unsupported("tangent through a sigmoid node".into()));
                            }
                            let y = tape.values[n].as_ref().expect("evaluated");
                            for (d, &s) in dx.data.iter_mut().zip(&y.data) {
                                *d *= s * (T::one() - s);
                            }
                        } else {
                            let x = tape.values[src].as_ref().expect("evaluated");
                            for (d, &v) in dx.data.iter_mut().zip(&x.data) {
                                *d *= slope(kind, v);
                            }
                        }
                        accumulate(&mut adj[src], dx);
                    }
                }
                &Op::Add { a, b } => {
                    if flows[a] && flows[b] {
                        accumulate(&mut adj[a], g.clone());
                        accumulate(&mut adj[b], g);
                    } else if flows[a] {
                        accumulate(&mut adj[a], g);
                    } else if flows[b] {
                        accumulate(&mut adj[b], g);
                    }
                }
                Op::Concat { parts } => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.channels[p] * g.plane();
                        if flows[p] {
                            let piece = Tensor::from_vec(self.channels[p], g.h, g.w, g.data[offset..offset + len].to_vec())?;
                            accumulate(&mut adj[p], piece);
                        }
                        offset += len;
                    }
                }
                &Op::Upsample2x { src } => {
                    if flows[src] {
                        let x = tape.values[src].as_ref().expect("evaluated");
                        accumulate(&mut adj[src], Upsampler::new(x.h, x.w).adjoint(&g, x.h, x.w));
                    }
                }
                &Op::GlobalAvgPool { src } => {
                    if flows[src] {
                        let x = tape.values[src].as_ref().expect("evaluated");
                        let inv = T::one() / T::of(x.plane() as f64);
                        let mut dx = Tensor::zeros(x.c, x.h, x.w);
                        for c in 0..x.c {
                            let v = g.data[c] * inv;
                            dx.data[c * x.plane()..(c + 1) * x.plane()].iter_mut().for_each(|d| *d = v);
                        }
                        accumulate(&mut adj[src], dx);
                    }
                }
            }
        }

        Ok(wanted_inputs
            .iter()
            .map(|&i| {
                input_adj[i].take().unwrap_or_else(|| {
                    let v = tape.values[i].as_ref().map(|t| t.shape()).unwrap_or((self.channels[i], 1, 1));
                    Tensor::zeros(v.0, v.1, v.2)
                })
            })
            .collect())
    }
}

/// Incremental graph construction; parameter names are dotted paths.
#[derive(Debug, Default)]
pub struct GraphBuilder {
    ops: Vec<Op>,
    channels: Vec<usize>,
    specs: Vec<ParamSpec>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op, channels: usize) -> NodeId {
        self.ops.push(op);
        self.channels.push(channels);
        self.ops.len() - 1
    }

    pub fn channels(&self, node: NodeId) -> usize {
        self.channels[node]
    }

    pub fn input(&mut self, channels: usize) -> NodeId {
        self.push(Op::Input { channels }, channels)
    }

    pub fn conv(&mut self, src: NodeId, cout: usize, ksize: usize, stride: usize, group: ParamGroup, name: &str) -> NodeId {
        let cin = self.channels[src];
        let fan_in = cin * ksize * ksize;
        self.specs.push(ParamSpec {
            name: format!("{name}.weight"),
            shape: vec![cout, cin, ksize, ksize],
            group,
            kind: ParamKind::Weight,
            fan_in,
        });
        self.specs.push(ParamSpec { name: format!("{name}.bias"), shape: vec![cout], group, kind: ParamKind::Bias, fan_in });
        let weight = self.specs.len() - 2;
        self.push(Op::Conv { src, weight, bias: weight + 1, cin, cout, ksize, stride }, cout)
    }

    /// Dense layer on a `C x 1 x 1` vector.
    pub fn linear(&mut self, src: NodeId, fout: usize, group: ParamGroup, name: &str) -> NodeId {
        self.conv(src, fout, 1, 1, group, name)
    }

    pub fn act(&mut self, src: NodeId, kind: Activation) -> NodeId {
        let c = self.channels[src];
        self.push(Op::Act { src, kind }, c)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.channels[a], self.channels[b], "add needs equal channel counts");
        let c = self.channels[a];
        self.push(Op::Add { a, b }, c)
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        let c = parts.iter().map(|&p| self.channels[p]).sum();
        self.push(Op::Concat { parts: parts.to_vec() }, c)
    }

    pub fn upsample2x(&mut self, src: NodeId) -> NodeId {
        let c = self.channels[src];
        self.push(Op::Upsample2x { src }, c)
    }

    pub fn global_avg_pool(&mut self, src: NodeId) -> NodeId {
        let c = self.channels[src];
        self.push(Op::GlobalAvgPool { src }, c)
    }

    /// Pre-activation residual block: `skip(x) + conv3(act(conv3_s(act(x))))`,
    /// with a strided 1x1 projection as skip when shape changes.
    pub fn residual(&mut self, src: NodeId, cout: usize, stride: usize, kind: Activation, group: ParamGroup, name: &str) -> NodeId {
        let a1 = self.act(src, kind);
        let c1 = self.conv(a1, cout, 3, stride, group, &format!("{name}.conv1"));
        let a2 = self.act(c1, kind);
        let c2 = self.conv(a2, cout, 3, 1, group, &format!("{name}.conv2"));
        let skip = if cout != self.channels[src] || stride != 1 {
            self.conv(src, cout, 1, stride, group, &format!("{name}.skip"))
        } else {
            src
        };
        self.add(c2, skip)
    }

    pub fn finish(self) -> Graph {
        Graph { ops: self.ops, channels: self.channels, specs: self.specs }
    }
}
