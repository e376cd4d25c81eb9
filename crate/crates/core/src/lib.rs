//! Learned control barrier functions for steering latent-state trajectories.
//!
//! The crate is organised around the life cycle of a safety filter:
//!
//! * [`barrier`] holds barrier functions (neural and closed-form), their
//!   training losses and the trainer.
//! * [`steering`] turns a bank of barriers into a minimal-intervention filter
//!   on the latent velocity, in QP, Top-2 closed-form and log-sum-exp modes,
//!   plus the difference-in-means baselines.
//! * [`dynamics`] rolls out discrete latent trajectories with the filter in
//!   the loop and checks forward invariance / exponential stabilization.
//! * [`dataio`] reads and writes labeled activation dumps and generates
//!   synthetic datasets.
//! * [`cli`] wires everything into the `barrier-steer` command.

pub mod barrier;
pub mod cli;
pub mod dataio;
pub mod dynamics;
mod error;
pub mod linalg;
pub mod steering;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    nominal_control, ControlInput, LabeledState, LatentState, SafetyLabel, SteeringConfig, SteeringMode,
    SteeringOutcome,
};

/// Version string embedded into every report.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
