//! Desk-scale laboratory for constrained portfolio control: data pipeline,
//! curriculum smoothing, oracle policy distillation, three actor-critic
//! learners, and a seed-replicated evaluation harness with significance
//! reporting.
//!
//! The crate is organized around the experiment pipeline:
//!
//! - [`data`]: CSV ingestion, return conversion, splits, synthetic series
//! - [`smoothing`]: EMA / rounding transforms and inverse-smoothing schedules
//! - [`env`]: the constrained portfolio MDP
//! - [`net`]: from-scratch MLP policy/value networks with exact gradients
//! - [`rl`]: rollouts, GAE and the A2C / PPO / TRPO learners
//! - [`imitation`]: oracle extraction, distillation rewards, noise tolerance
//! - [`experiment`]: tuning, replica runs, Welch tests, report emission
//! - [`driver`]: config files and the CLI-facing commands
//!
//! Replica and tuning runs fan out over a rayon pool when the `parallel`
//! feature (default) is enabled; without it everything runs sequentially on
//! the calling thread.

pub mod data;
pub mod driver;
pub mod env;
pub mod error;
pub mod experiment;
pub mod imitation;
pub mod net;
pub mod parallel;
pub mod rl;
pub mod smoothing;

pub use error::{Error, Result};
