//! Sparse recovery toolkit: ISTA-family LASSO solvers, unrolled LISTA
//! networks with weight coupling and support selection, coherence-based
//! analytic parameters with certified linear convergence, and a stage-wise
//! trainer with hand-written backpropagation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coherence;
pub mod error;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod lp;
pub mod nets;
pub mod operators;
pub mod parallel;
pub mod problem;
pub mod rng;
pub mod solvers;
pub mod trainer;

pub use error::{Error, Result};
pub use linalg::{DenseMatrix, Vector};
