//! Exact computation and simulation toolkit for ergodicity and mixing of
//! stationary max-infinitely divisible processes.
//!
//! A stationary max-i.d. process is mixing exactly when its dependence
//! coefficient `tau_a(t)` tends to zero for every level `a`, and ergodic
//! exactly when the Cesàro means of `tau_a` tend to zero. The modules here
//! compute `tau_a` exactly for atomic models ([`exponent_core`]), turn finite
//! sequences into mixing/ergodicity verdicts ([`ergodic_diag`]), and simulate
//! the two worked families: Brown–Resnick processes ([`brown_resnick`]) and
//! the nearest-particle distance in an ideal gas ([`ideal_gas`]).

// `!(x > y)` is how the validators reject NaN alongside out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod brown_resnick;
pub mod cli;
pub mod ergodic_diag;
pub mod exponent_core;
pub mod ideal_gas;
pub mod normal;
pub mod quadrature;
pub mod rng;
pub mod stats;
