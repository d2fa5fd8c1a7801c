//! Bias correction and 8x super-resolution of coarse ensemble precipitation
//! forecasts with a conditional Wasserstein GAN, plus the probabilistic
//! verification suite used to score the resulting ensembles.
//!
//! Modules follow the data flow:
//!
//! * [`fieldio`]: gridded fields, the RGF v1 file format, regridding and
//!   archive-ingestion heuristics.
//! * [`datagen`]: normalization, patch assembly, weighted sampling and the
//!   synthetic toy-weather dataset.
//! * [`netcore`]: a small reverse-mode engine with forward-mode tangents,
//!   the generator and the conditional critic.
//! * [`losses`]: the three training-stage objectives.
//! * [`trainer`]: staged training, checkpointing and ensemble sampling.
//! * [`verify`]: CRPS, Brier, reliability, rank histograms, FSS and the
//!   deterministic metric suite.

// `!(x > 0.0)` is the NaN-rejecting form used for argument checks
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod datagen;
pub mod error;
pub mod fieldio;
pub mod losses;
pub mod netcore;
pub mod rng;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
