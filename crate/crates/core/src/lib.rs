//! Simulation and audit toolkit for `G`-convergence of Cesàro means.
//!
//! For i.i.d. increments `X_1, X_2, ...` with partial sums `S_n` and a
//! nondecreasing positive `G` with bounded doubling ratio, the following are
//! equivalent:
//!
//! ```text
//!     (a)  E[|X| G(|X|)] < inf
//!     (b)  sum_n n^-1 G(n) P[|S_n / n| >= a] < inf        for every a > 0
//!     (c)  E[G(L_a)] < inf,  L_a = sup({0} u {n : |S_n / n| >= a})
//! ```
//!
//! The crate computes all three functionals, audits the explicit bounds that
//! link them, builds the law showing that bounded doubling cannot be dropped,
//! and runs the multi-hypothesis Wald test whose stopping time is studied
//! through `E[G(tau)]`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod dist;
mod error;
pub mod lln;
pub mod modfun;
pub mod numeric;
pub mod report;
pub mod rng;
pub mod seqtest;
mod spec_parse;

pub use error::{Error, Result};
