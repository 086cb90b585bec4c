//! Capacity-aware learning-to-defer simulation and benchmarking.
//!
//! Synthesizes teams of parametric decision-makers over a tabular binary
//! classification dataset, draws capacity-constrained batch scenarios, routes
//! cases through rejection-learning, greedy and optimal assignment policies, and
//! scores the outcome with a cost-sensitive loss and predictive equality.

pub mod capacity;
pub mod data;
pub mod deferral;
mod error;
pub mod eval;
pub mod experts;
pub mod expertise;
pub mod math;
pub mod pipeline;
pub mod seed;

pub use error::{Error, Result};
