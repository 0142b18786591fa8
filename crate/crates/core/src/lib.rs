//! Conventional and Hamiltonian neural networks for Hamiltonian dynamics.
//!
//! A conventional network (NN) regresses the time derivatives of the state
//! directly. A Hamiltonian network (HNN) outputs a single scalar energy and
//! obtains the dynamics from its input-gradient through Hamilton's
//! equations, so its forecasts stay on level sets of the learned energy.
//!
//! The crate covers the whole pipeline: exact systems ([`systems`]),
//! ground-truth orbits and training pairs ([`dataset`]), the network and
//! its derivatives ([`mlp`], [`autodiff`]), Adam training ([`training`]),
//! rollouts ([`forecast`]), error metrics ([`metrics`]) and the experiment
//! grid ([`harness`]).

pub mod autodiff;
pub mod csvio;
pub mod dataset;
pub mod exec;
pub mod forecast;
pub mod harness;
pub mod metrics;
pub mod mlp;
pub mod seeds;
pub mod systems;
pub mod training;

pub use dataset::{Flavor, Orbit, TrainingPair};
pub use exec::Execution;
pub use mlp::{MlpParams, NetSpec};
pub use systems::{ChainParams, Family, PhaseState, SystemSpec};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
