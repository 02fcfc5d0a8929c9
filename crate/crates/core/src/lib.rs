//! Desk-scale diffusion sampling testbed.
//!
//! The crate implements the pieces needed to study truncation-accelerated
//! diffusion sampling end to end on analytic targets: variance schedules,
//! forward/reverse diffusion with DDPM and deterministic DDIM steps,
//! Gaussian-mixture targets with a closed-form optimal denoiser, a
//! locked-base/adapter trainable denoiser, synthetic coarse generators that
//! seed truncated chains, Poisson blending for compositing, and energy
//! distance metrics with a resampled baseline protocol. Everything is
//! deterministic given seeds; see [`rng`] for the stream layout.

pub mod batch;
pub mod blend;
pub mod coarse;
pub mod config;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod mixture;
pub mod net;
pub mod pgm;
pub mod rng;
pub mod schedule;

pub use batch::{ConditionBatch, SampleBatch};
pub use denoiser::{AnalyticDenoiser, Denoiser};
pub use diffusion::{SamplerKind, SamplerSpec};
pub use error::{Error, Result};
pub use mixture::GaussianMixture;
pub use net::AdapterDenoiser;
pub use schedule::NoiseSchedule;
