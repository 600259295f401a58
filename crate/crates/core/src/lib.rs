//! Model-plant mismatch estimation for MPC-controlled continuous processes.
//!
//! The crate simulates a multivariable FOPDT plant under an unconstrained MPC
//! controller, converts the controller's transfer-matrix model into a sparse
//! high-order ARX model, estimates a sparse correction of that ARX model from
//! routine closed-loop data around reference steps (lasso with two-fold
//! cross-validated lambda), and benchmarks the corrected model against the true
//! plant through step and impulse responses.

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod arx;
pub mod bench;
pub mod error;
pub mod io;
pub mod lasso;
pub mod mle;
pub mod mpc;
pub mod plant;
pub mod reproduce;
pub mod rng;
pub mod scenario;
pub mod sim;

pub use error::{Error, Result};
