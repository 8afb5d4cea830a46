//! Complex-network metrics for small neural networks.
//!
//! The crate trains pools of fully connected, convolutional, recurrent and
//! autoencoder networks and measures them as weighted directed graphs:
//!
//! - [`topology`]: link-weight mean and variance, node strength, layer
//!   fluctuation. These depend on the parameters only.
//! - [`neuron`]: neuron strength and neuron activation, which propagate
//!   inputs sampled from the training distribution. Convolutions are
//!   handled by patch isolation and recurrent layers by unfolding in time.
//! - [`population`]: pooled distributions, correlations, and
//!   trained-versus-untrained comparisons across a pool of networks.
//! - [`experiment`]: config-driven runs that write CSV/JSON artifacts and a
//!   digest manifest.
//!
//! Layer indices in the metric APIs are 1-based: parameterized layer `l`
//! maps node layer `l - 1` onto node layer `l`, and node layer 0 is the
//! input.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the precision used by the experiments.

pub mod data;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod neuron;
pub mod population;
pub mod scalar;
pub mod stats;
pub mod topology;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Network64 = engine::Network<f64>;
pub type Network32 = engine::Network<f32>;
pub type Dataset64 = data::Dataset<f64>;
pub type Dataset32 = data::Dataset<f32>;
pub type SampleBatch64 = data::SampleBatch<f64>;
pub type PoolResult64 = population::PoolResult<f64>;
