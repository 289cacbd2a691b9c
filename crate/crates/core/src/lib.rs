//! Adaptive ensemble Q-learning: estimation-bias bounds, a polynomial toy
//! experiment, and tabular training with error-feedback ensemble sizing.

pub mod bias;
pub mod config;
pub mod controller;
pub mod diagnostics;
pub mod ensemble;
pub mod error;
pub mod mdp;
pub mod seeds;
pub mod special;
pub mod svg;
pub mod toy;

pub use error::{Error, Result};
