use serde::{Deserialize, Serialize};

use crate::tensor::OutputTensor;

/// Gaussian predictive summaries at a batch of query inputs: one mean tensor
/// and one tensor of marginal variances per query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveDistribution {
    pub means: Vec<OutputTensor>,
    pub variances: Vec<OutputTensor>,
    /// Degrees of freedom of the underlying Student-t law, when there is one.
    pub dof: Option<f64>,
}

impl PredictiveDistribution {
    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn sd(&self, query: usize, idx: &[usize]) -> f64 {
        self.variances[query].get(idx).sqrt()
    }
}
