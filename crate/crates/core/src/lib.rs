//! Train a small denoising diffusion model on bounded synthetic data and
//! evaluate a five-term upper bound on the Wasserstein-1 distance between the
//! data distribution and the model's sampling distribution.
//!
//! The pieces, bottom up:
//!
//! - [`schedule`]: the noise schedule and its derived constants.
//! - [`forward`]: the forward process and the prior-matching KL.
//! - [`net`], [`denoiser`], [`trainer`]: the ε-prediction network, the
//!   backward sampler built on it, and its training loop.
//! - [`bound`]: every bound term, λ sweeps, and checks of the contraction
//!   inequalities.
//! - [`transport`]: empirical W1 estimates used to validate the bound.
//! - [`data`], [`config`], [`checkpoint`], [`experiment`]: data sets and
//!   end-to-end plumbing for the `ddpm-bound` binary.

pub mod bound;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod denoiser;
pub mod error;
pub mod experiment;
pub mod forward;
pub mod net;
pub mod rng;
pub mod schedule;
pub mod stats;
pub mod trainer;
pub mod transport;

pub use bound::{lambda_sweep, theorem_bound, BoundConfig, BoundMode, BoundReport, KSource};
pub use config::ExperimentConfig;
pub use data::{DomainBox, SampleSet};
pub use denoiser::DiffusionModel;
pub use error::{Error, Result};
pub use net::{Activation, DenoiserNet, TimeEmbedding};
pub use rng::SeedRoot;
pub use schedule::{linear_schedule, NoiseSchedule, SigmaKind};
pub use trainer::{train, TrainConfig};
pub use transport::{exact_w1, sliced_w1_lower, trivial_coupling_upper, W1Estimate};
