//! Desk-scale laboratory for RNN-controller architecture search with weight
//! sharing over recurrent-cell DAGs.
//!
//! Modules, bottom-up:
//! - [`numkit`]: dense matrices, softmax, sampling, gradient checking.
//! - [`cellspace`]: the cell search space and its text/JSON codec.
//! - [`controller`]: the LSTM policy, REINFORCE and the reconstruction penalty.
//! - [`childnet`]: the shared weight pool and the character-level language model.
//! - [`replay`]: the architecture memory buffer and its fill/replace schedule.
//! - [`simlab`]: similarity metrics, exact graph edit distance, Spearman, collapse.
//! - [`harness`]: the search loop, analyses and CSV artifacts behind the CLI.

pub mod cellspace;
pub mod checkpoint;
pub mod childnet;
pub mod controller;
pub mod error;
pub mod harness;
pub mod numkit;
pub mod replay;
pub mod selftest;
pub mod simlab;

pub use error::{Error, Result};
