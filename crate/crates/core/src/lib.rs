//! Latent-variable recommendation models, encoders and the experiments built
//! on them.

pub mod baselines;
pub mod domain;
pub mod encoders;
pub mod error;
pub mod experiments;
pub mod graph;
pub mod loglinear;
pub mod mixture;
pub mod oracle;
pub mod semisup;
pub mod stream;

pub use error::{Error, Result};
