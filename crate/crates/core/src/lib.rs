//! Simulation and verification toolkit for scalar diffusions in random
//! (finite-state Markov) and periodic environments.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chain_algebra;
pub mod cli;
pub mod config;
pub mod env;
pub mod error;
pub mod homogenize;
pub mod martingale;
pub mod mdp;
pub mod parallel;
pub mod rng;
pub mod sde;
pub mod stats;

pub use error::{Error, Result};
