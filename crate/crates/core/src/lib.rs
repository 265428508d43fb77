//! Gradient-based training of biomolecular neural networks (BNNs) against
//! signal temporal logic (STL) robustness.
//!
//! The pieces, bottom-up:
//!
//! * [`signal`]: sampled traces and linear interpolation.
//! * [`stl`]: STL syntax tree and parser.
//! * [`robustness`]: min/max quantitative semantics and subgradients.
//! * [`grad`]: forward-mode dual numbers.
//! * [`ode`]: ESDIRK 5(4) adaptive implicit integrator plus an RK4 reference.
//! * [`bnn`]: the sequestration-perceptron network and its parameters.
//! * [`trainer`]: hinge robustness loss, AdaBelief, and the training loop.
//! * [`experiments`]: condition sets, the immune plant and the three tasks.

pub mod bnn;
pub mod error;
pub mod experiments;
pub mod grad;
pub mod ode;
pub mod robustness;
pub mod signal;
pub mod stl;
pub mod trainer;

pub use error::{Error, ErrorClass, Result};
