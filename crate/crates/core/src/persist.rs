//! Flat, versioned JSON representations of matrices and tensors.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::OutputTensor;

/// Version written into every JSON artifact.
pub const FORMAT_VERSION: u32 = 1;

/// Dense matrix stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&DMatrix<f64>> for FlatMatrix {
    fn from(m: &DMatrix<f64>) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.transpose().as_slice().to_vec(),
        }
    }
}

impl FlatMatrix {
    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.rows * self.cols != self.data.len() {
            return Err(Error::InvalidShape {
                dims: vec![self.rows, self.cols],
                reason: format!("flat matrix holds {} values", self.data.len()),
            });
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatTensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl From<&OutputTensor> for FlatTensor {
    fn from(t: &OutputTensor) -> Self {
        Self {
            dims: t.dims().to_vec(),
            data: t.data().to_vec(),
        }
    }
}

impl FlatTensor {
    pub fn to_tensor(&self) -> Result<OutputTensor> {
        OutputTensor::new(self.dims.clone(), self.data.clone())
    }
}

pub(crate) fn check_version(found: u32, what: &str) -> Result<()> {
    if found == FORMAT_VERSION {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{what}: unsupported format_version {found} (expected {FORMAT_VERSION})"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_matrix_is_row_major() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let f = FlatMatrix::from(&m);
        assert_eq!(f.data, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(f.to_matrix().unwrap(), m);
    }
}
