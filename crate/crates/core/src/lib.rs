//! Reference-free iterative learning MPC with learned neural terminal
//! certificates, plus a sampled-safe-set baseline for comparison.
//!
//! The controller solves a finite-horizon nonlinear program whose terminal
//! cost and terminal constraint come from a certificate network trained on
//! trajectories of earlier iterations. Each iteration collects new data,
//! retrains the certificate, and (provably, under bounded training error)
//! does not degrade the closed-loop performance cost.

pub mod alpha;
pub mod baseline;
pub mod config;
pub mod dataset;
pub mod error;
pub mod io;
pub mod nn;
pub mod orchestrator;
pub mod solver;
pub mod trainer;
pub mod task;

pub use error::{Error, Result};
