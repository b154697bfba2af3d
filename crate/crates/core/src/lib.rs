//! Linear (Koopman) surrogate models for nonlinear systems with input delay.
//!
//! Two model families are provided: extended DMD over a fixed dictionary with
//! time-delayed input embeddings ([`edmd`]), and a deep Koopman autoencoder
//! whose encoder sees the current state together with an LSTM summary of the
//! recent state/input history ([`dko`]). The [`sim`] module generates the
//! delayed two-tank benchmark and [`eval`] compares the fitted models.

pub mod config;
pub mod dataset;
pub mod dko;
pub mod edmd;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod nn;
pub mod pipeline;
pub mod sim;

pub use error::{Error, Result};
