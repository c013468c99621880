//! Neural graph differential equations: graph layers, ODE/SDE solvers,
//! adjoint gradients, models, synthetic data and training utilities.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adjoint;
pub mod datagen;
pub mod error;
pub mod graph;
pub mod layers;
pub mod models;
pub mod numerics;
pub mod solvers;
pub mod training;

pub use error::{Error, Result};
pub use numerics::Matrix;
