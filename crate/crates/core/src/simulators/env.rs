//! Two-release pollutant spill in a long narrow channel.
//!
//! A mass `x1` is released at `(s, t) = (0, 0)` and again at `(x2, x3)`; the
//! channel diffuses at rate `x4`. The second release only contributes once it
//! has happened, i.e. for `t > x3`.

use serde::{Deserialize, Serialize};

use crate::design::Bound;
use crate::error::{dim_check, Result};
use crate::tensor::OutputTensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub space: Vec<f64>,
    pub time: Vec<f64>,
    pub bounds: Vec<Bound>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            space: (0..15).map(|k| 0.5 + k as f64 / 7.0).collect(),
            time: (1..=100).map(|k| 0.6 * k as f64 - 0.3).collect(),
            bounds: default_bounds(),
        }
    }
}

pub fn default_bounds() -> Vec<Bound> {
    vec![
        Bound::new(7.0, 13.0),
        Bound::new(0.01, 3.0),
        Bound::new(30.01, 30.295),
        Bound::new(0.02, 0.12),
    ]
}

impl EnvConfig {
    pub fn dims(&self) -> Vec<usize> {
        vec![self.space.len(), self.time.len()]
    }
}

/// The two plume terms of the concentration `C(x; s, t)`.
pub fn plume_terms(x: &[f64], s: f64, t: f64) -> (f64, f64) {
    let (m, x2, x3, d) = (x[0], x[1], x[2], x[3]);
    let pi4 = 4.0 * std::f64::consts::PI;
    let first = if t > 0.0 {
        m / (pi4 * d * t).sqrt() * (-s * s / (4.0 * d * t)).exp()
    } else {
        0.0
    };
    let second = if t > x3 {
        let dt = t - x3;
        m / (pi4 * d * dt).sqrt() * (-(s - x2) * (s - x2) / (4.0 * d * dt)).exp()
    } else {
        0.0
    };
    (first, second)
}

/// Scaled concentration `√(4π) C(x; s, t)` over the grid.
pub fn env_raw(x: &[f64], cfg: &EnvConfig) -> Result<OutputTensor> {
    dim_check("environmental input", 4, x.len())?;
    for (v, b) in x.iter().zip(&cfg.bounds) {
        if *v < b.lo || *v > b.hi {
            log::warn!("input {v} outside [{}, {}]", b.lo, b.hi);
        }
    }
    let root = (4.0 * std::f64::consts::PI).sqrt();
    OutputTensor::from_fn(cfg.dims(), |i| {
        let (a, b) = plume_terms(x, cfg.space[i[0]], cfg.time[i[1]]);
        root * (a + b)
    })
}

/// Log concentration `log(√(4π) C + 1)` over the `space × time` grid.
pub fn env_simulate(x: &[f64], cfg: &EnvConfig) -> Result<OutputTensor> {
    Ok(env_raw(x, cfg)?.map(f64::ln_1p))
}
