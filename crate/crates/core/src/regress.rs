//! Regressor bases and design matrices.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Regression basis over a point `x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    /// `g(x) = (1)`
    Constant,
    /// `g(x) = (1, x_1, ..., x_p)`
    Linear,
}

impl Basis {
    pub fn size(&self, p: usize) -> usize {
        match self {
            Basis::Constant => 1,
            Basis::Linear => p + 1,
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Basis::Constant => vec![1.0],
            Basis::Linear => std::iter::once(1.0).chain(x.iter().copied()).collect(),
        }
    }

    /// Rows `g(x_j)ᵀ` for each row `x_j` of `points`.
    pub fn design_matrix(&self, points: &DMatrix<f64>) -> DMatrix<f64> {
        let v = self.size(points.ncols());
        let mut g = DMatrix::zeros(points.nrows(), v);
        for j in 0..points.nrows() {
            let x: Vec<f64> = points.row(j).iter().copied().collect();
            for (k, val) in self.eval(&x).into_iter().enumerate() {
                g[(j, k)] = val;
            }
        }
        g
    }
}
