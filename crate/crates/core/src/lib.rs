//! Bayesian reward extrapolation: posterior sampling over linear reward weights from
//! pairwise trajectory preferences, and high-confidence evaluation of policies under the
//! resulting reward posterior.

pub mod config;
pub mod error;
pub mod experiment;
pub mod features;
pub mod gridworld;
pub mod hcope;
pub mod io;
pub mod likelihood;
pub mod mcmc;
pub mod mdp;
pub mod pipeline;
pub mod pretrain;

pub use error::{BrexError, Result};
