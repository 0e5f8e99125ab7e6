//! Dense tensors stored in the canonical vec order.
//!
//! Entry `(i_1, ..., i_m)` lives at flat position
//! `sum_z i_z * prod_{z' > z} r_{z'}` (zero-based), so the last index runs
//! fastest. This is the placement produced by the Kronecker product of unit
//! vectors `e_{i_1} ⊗ ... ⊗ e_{i_m}`, and the full training stack
//! `(n, r_1, ..., r_m)` therefore has covariance `K ⊗ Σ_1 ⊗ ... ⊗ Σ_m`.
//! Every module relies on this single convention.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tag written into every serialized artifact that carries flattened tensors.
pub const VEC_ORDER_TAG: &str = "row-major/last-index-fastest";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputTensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl OutputTensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        validate_dims(&dims)?;
        let len: usize = dims.iter().product();
        if len != data.len() {
            return Err(Error::InvalidShape {
                dims,
                reason: format!("extent product {len} != data length {}", data.len()),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        validate_dims(&dims)?;
        let len = dims.iter().product();
        Ok(Self {
            dims,
            data: vec![0.0; len],
        })
    }

    /// Builds a tensor by evaluating `f` at every multi-index, in vec order.
    pub fn from_fn(dims: Vec<usize>, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        validate_dims(&dims)?;
        let len: usize = dims.iter().product();
        let mut data = Vec::with_capacity(len);
        let mut idx = vec![0usize; dims.len()];
        for _ in 0..len {
            data.push(f(&idx));
            increment(&mut idx, &dims);
        }
        Ok(Self { dims, data })
    }

    /// Stacks equally shaped tensors along a new leading mode.
    pub fn stack(items: &[OutputTensor]) -> Result<Self> {
        let first = items.first().ok_or_else(|| Error::InvalidShape {
            dims: vec![0],
            reason: "cannot stack zero tensors".into(),
        })?;
        let mut dims = vec![items.len()];
        dims.extend_from_slice(&first.dims);
        let mut data = Vec::with_capacity(items.len() * first.len());
        for t in items {
            if t.dims != first.dims {
                return Err(Error::InvalidShape {
                    dims: t.dims.clone(),
                    reason: format!("stack expects {:?}", first.dims),
                });
            }
            data.extend_from_slice(&t.data);
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dims.len());
        idx.iter()
            .zip(&self.dims)
            .fold(0, |acc, (&i, &r)| acc * r + i)
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.flat_index(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: f64) {
        let k = self.flat_index(idx);
        self.data[k] = value;
    }

    /// The `j`-th sub-tensor along the leading mode.
    pub fn slab(&self, j: usize) -> OutputTensor {
        let inner: usize = self.dims[1..].iter().product();
        let dims = if self.dims.len() > 1 {
            self.dims[1..].to_vec()
        } else {
            vec![1]
        };
        OutputTensor {
            dims,
            data: self.data[j * inner..(j + 1) * inner].to_vec(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> OutputTensor {
        OutputTensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn dot(&self, other: &OutputTensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    /// Mode-`c` tensor-matrix product (zero-based mode):
    /// `(P ×_c Λ)_{..a..} = Σ_b λ_ab p_{..b..}`.
    pub fn mode_product(&self, mat: &DMatrix<f64>, mode: usize) -> Result<OutputTensor> {
        if mode >= self.dims.len() {
            return Err(Error::InvalidShape {
                dims: self.dims.clone(),
                reason: format!("mode {mode} out of range"),
            });
        }
        if mat.ncols() != self.dims[mode] {
            return Err(Error::ModeMismatch {
                mode,
                cols: mat.ncols(),
                extent: self.dims[mode],
            });
        }
        let unfolded = self.unfold(mode);
        let product = mat * unfolded;
        let mut dims = self.dims.clone();
        dims[mode] = mat.nrows();
        Ok(fold(&dims, mode, &product))
    }

    /// Mode-`c` unfolding as an `r_c × (N / r_c)` matrix whose column index
    /// enumerates the remaining modes in vec order.
    pub fn unfold(&self, mode: usize) -> DMatrix<f64> {
        let (pre, extent, post) = split(&self.dims, mode);
        let mut out = DMatrix::<f64>::zeros(extent, pre * post);
        let dst = out.as_mut_slice();
        for a in 0..pre {
            for i in 0..extent {
                let src = &self.data[(a * extent + i) * post..(a * extent + i + 1) * post];
                for (q, &v) in src.iter().enumerate() {
                    dst[i + extent * (a * post + q)] = v;
                }
            }
        }
        out
    }
}

/// Inverse of [`OutputTensor::unfold`] for a tensor of shape `dims`.
pub fn fold(dims: &[usize], mode: usize, mat: &DMatrix<f64>) -> OutputTensor {
    let (pre, extent, post) = split(dims, mode);
    debug_assert_eq!(mat.nrows(), extent);
    debug_assert_eq!(mat.ncols(), pre * post);
    let src = mat.as_slice();
    let mut data = vec![0.0; pre * extent * post];
    for a in 0..pre {
        for i in 0..extent {
            let dst = &mut data[(a * extent + i) * post..(a * extent + i + 1) * post];
            for (q, v) in dst.iter_mut().enumerate() {
                *v = src[i + extent * (a * post + q)];
            }
        }
    }
    OutputTensor {
        dims: dims.to_vec(),
        data,
    }
}

/// Flattens a tensor in vec order.
pub fn vec(t: &OutputTensor) -> Vec<f64> {
    t.data.clone()
}

/// Rebuilds a tensor of shape `dims` from its vec.
pub fn unvec(dims: &[usize], v: &[f64]) -> Result<OutputTensor> {
    OutputTensor::new(dims.to_vec(), v.to_vec())
}

fn split(dims: &[usize], mode: usize) -> (usize, usize, usize) {
    let pre = dims[..mode].iter().product();
    let post = dims[mode + 1..].iter().product();
    (pre, dims[mode], post)
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.is_empty() || dims.contains(&0) {
        return Err(Error::InvalidShape {
            dims: dims.to_vec(),
            reason: "extents must be nonempty and positive".into(),
        });
    }
    Ok(())
}

fn increment(idx: &mut [usize], dims: &[usize]) {
    for z in (0..dims.len()).rev() {
        idx[z] += 1;
        if idx[z] < dims[z] {
            return;
        }
        idx[z] = 0;
    }
}
