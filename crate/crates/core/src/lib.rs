//! Sequence-level clipped policy optimization with a communication-cost
//! reward, trained on toy signaling tasks where short messages are optimal.
//!
//! The pieces, bottom up:
//!
//! * [`policy`]: tabular autoregressive softmax policy with exact
//!   log-probabilities and gradients.
//! * [`reward`]: task score minus token, turn and repetition penalties.
//! * [`gspo`]: group-normalized advantages, length-normalized importance
//!   ratios and the clipped sequence-level surrogate with its gradient.
//! * [`budget`]: projected dual ascent that adapts the token penalty toward a
//!   target mean message length.
//! * [`env`]: key-echo and relay-sum signaling tasks.
//! * [`trainer`]: the training loop and greedy evaluation.
//! * [`config`] and [`cli`]: run configuration and the command implementations
//!   behind the `terse` binary.

pub mod budget;
pub mod cli;
pub mod config;
pub mod env;
pub mod error;
pub mod exec;
pub mod gspo;
pub mod policy;
pub mod reward;
pub mod trainer;
pub mod vocab;

pub use error::{Error, Result};
