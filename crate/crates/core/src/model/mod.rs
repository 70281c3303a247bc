//! The three coupled point-process components and their parameters.
//!
//! [`observed`] emits the next observed event from two recurrent states;
//! [`missing`] holds the posterior generator of latent events inside each
//! inter-observation interval and the scaled prior used by the KL term.
//! All trainable tensors live in a [`ParameterStore`] keyed by name, with a
//! gradient slot per tensor so stochastic updates can accumulate
//! contributions across timesteps and sequences.

pub mod missing;
pub mod observed;
pub mod params;

pub use missing::{PosteriorCell, PriorCell};
pub use observed::ObservedCell;
pub use params::{Binding, ModelSpecs, ParameterStore, ScalarIn, StepOutcome, TimeHead};
