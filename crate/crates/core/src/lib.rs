//! Learning one-step surrogate propagators for chaotic systems from partial,
//! noisy observations.
//!
//! The pipeline has four stages:
//!
//! 1. [`dynamics`] simulates a truth model (Lorenz-63) and observes it through
//!    a partial, noisy observation operator.
//! 2. [`embedding`] reconstructs a state space from the scalar observations
//!    with delay coordinates, choosing the delay from the average mutual
//!    information and the dimension from false nearest neighbours.
//! 3. [`features`] defines a random feature map surrogate `W tanh(W_in z + b_in)`
//!    whose output weights are learned either in batch by ridge regression
//!    ([`regression`]) or sequentially with a stochastic ensemble Kalman
//!    filter over the joint state/weight space ([`enkf`]).
//! 4. [`evaluation`] and [`experiments`] score the learned surrogates by
//!    forecast time and long-run attractor statistics, over many seeded
//!    realizations.
//!
//! Runnable walkthroughs for each stage live in the crate's `examples/`
//! directory (`cargo run --release --example <name>`); the `rafda` binary
//! exposes the same pipeline as subcommands.

pub mod cli;
pub mod dynamics;
pub mod embedding;
pub mod enkf;
mod error;
pub mod evaluation;
pub mod experiments;
pub mod features;
pub mod io;
pub mod regression;
pub mod seeds;

pub use error::{RafdaError, Result};
