//! Tensor-variate Gaussian-process emulators for simulators with gridded,
//! multi-dimensional output.

pub mod design;
pub mod diagnostics;
pub mod error;
pub mod gp;
pub mod kernels;
pub mod kron;
pub mod ope;
pub mod optim;
pub mod persist;
pub mod pipeline;
pub mod ppe;
pub mod predictive;
pub mod regress;
pub mod simulators;
pub mod tensor;

pub use error::{Error, Result};
