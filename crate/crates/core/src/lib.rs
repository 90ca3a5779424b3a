//! Photon shot-noise dephasing of a qubit dispersively coupled to a
//! multimode cavity.
//!
//! - [`model`]: system parameters and closed-form rate budgets
//! - [`photon`]: birth-death dynamics of a thermally driven cavity mode
//! - [`qsim`]: qubit x cavity open-system and trajectory simulations
//! - [`analysis`]: fringe and decay fitting, photon-number calibration

// `!(x > 0.0)` is used throughout to reject NaN along with non-positive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod model;
pub mod photon;
pub mod qsim;
pub mod rng;
