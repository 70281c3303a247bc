//! Marked temporal point processes with latent missing events.
//!
//! A generative model of observed event streams that treats unrecorded
//! events as latent random variables: an observed-event process emits the
//! next (time, mark) pair conditioned on two recurrent states, a posterior
//! process fills each inter-observation interval with truncated log-normal
//! draws, and a scaled prior anchors the KL term of the variational
//! objective. The crate also ships a multivariate Hawkes generator for
//! synthetic data, a trainer (stochastic gradients through reparameterized
//! draws), and an evaluation harness covering one-step prediction,
//! multi-step forecasting, imputation, and baselines.

pub mod autodiff;
pub mod config;
pub mod data;
pub mod dist;
pub mod error;
pub mod eval;
pub mod hawkes;
pub mod model;
pub mod rng;
pub mod train;

pub use data::{Dataset, Event, Sequence, Split, SplitSpec, Vocab};
pub use error::{Error, Result};
pub use eval::{EvalConfig, MetricReport, PredictRule};
pub use hawkes::HawkesSpec;
pub use model::{ModelSpecs, ParameterStore, TimeHead};
pub use train::{ElboReport, TrainConfig, TrainVariant};
