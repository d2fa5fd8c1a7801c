//! Differentiable building blocks and the two networks.

mod arch;
mod checkpoint;
mod conv;
mod graph;
mod kernels;
mod params;
mod real;
mod tensor;

pub use arch::{ArchSpec, Discriminator, Generator, GeneratorOutput, NoiseSample, PenaltyTerm, UPSCALE};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointManifest, TensorEntry};
pub use graph::{Activation, Graph, GraphBuilder, NodeId, Op, Tape, LEAKY_SLOPE};
pub use params::{ModelParams, ParamGrads, ParamGroup, ParamKind, ParamSpec};
pub use real::Real;
pub use tensor::Tensor;

/// Channel-wise corner-aligned 2x bilinear upsampling.
pub fn bilinear_upsample_2x<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    kernels::Upsampler::new(input.h, input.w).forward(input)
}

/// Sets flush-to-zero and denormals-are-zero for the calling thread.
///
/// Tiny gradients otherwise fall into the subnormal range, where x86 FMA
/// throughput drops by two orders of magnitude. Results stay deterministic.
pub fn enable_flush_to_zero() {
    #[cfg(any(target_arch = "x86_64", target_arch = "x86"))]
    #[allow(deprecated)]
    // SAFETY: only the FTZ (bit 15) and DAZ (bit 6) control bits are changed.
    unsafe {
        #[cfg(target_arch = "x86")]
        use std::arch::x86::{_mm_getcsr, _mm_setcsr};
        #[cfg(target_arch = "x86_64")]
        use std::arch::x86_64::{_mm_getcsr, _mm_setcsr};
        _mm_setcsr(_mm_getcsr() | 0x8040);
    }
}
