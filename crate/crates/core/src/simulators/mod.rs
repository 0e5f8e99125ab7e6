//! Built-in simulators and output transforms.

pub mod env;
pub mod seir;

use crate::error::{Error, Result};
use crate::tensor::OutputTensor;

pub use env::{env_raw, env_simulate, EnvConfig};
pub use seir::{parse_network, rank_spatial_coordinate, seir_simulate, SeirPatchConfig};

/// Elementwise `log(y + 1)`.
pub fn log_shift_transform(y: &OutputTensor) -> Result<OutputTensor> {
    if let Some(bad) = y.data().iter().find(|v| !(**v >= -1.0)) {
        return Err(Error::Domain(format!("log shift needs y >= -1, got {bad}")));
    }
    Ok(y.map(f64::ln_1p))
}

/// Elementwise `exp(f) - 1`.
pub fn log_shift_inverse(f: &OutputTensor) -> OutputTensor {
    f.map(f64::exp_m1)
}
