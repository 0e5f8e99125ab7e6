//! Kronecker-structured matrices applied through mode products.
//!
//! `(A_1 ⊗ ... ⊗ A_m) vec(X) = vec(X ×_1 A_1 ×_2 ... ×_m A_m)` under the
//! last-index-fastest vec order, so neither products nor solves ever form
//! the full matrix.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{dim_check, Error, Result};
use crate::tensor::{fold, OutputTensor};

/// Largest dense Kronecker product [`KroneckerMatrix::to_dense`] will build
/// without an explicit override.
pub const DENSE_SIZE_GUARD: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct KroneckerMatrix {
    factors: Vec<DMatrix<f64>>,
}

impl KroneckerMatrix {
    pub fn new(factors: Vec<DMatrix<f64>>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::InvalidShape {
                dims: vec![],
                reason: "Kronecker product needs at least one factor".into(),
            });
        }
        for f in &factors {
            if !f.is_square() || f.nrows() == 0 {
                return Err(Error::InvalidShape {
                    dims: vec![f.nrows(), f.ncols()],
                    reason: "Kronecker factors must be square and nonempty".into(),
                });
            }
        }
        Ok(Self { factors })
    }

    pub fn identity(dims: &[usize]) -> Result<Self> {
        Self::new(dims.iter().map(|&r| DMatrix::identity(r, r)).collect())
    }

    pub fn factors(&self) -> &[DMatrix<f64>] {
        &self.factors
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.nrows()).collect()
    }

    pub fn size(&self) -> usize {
        self.factors.iter().map(|f| f.nrows()).product()
    }

    /// Product of the factor diagonals, i.e. the diagonal of the full matrix.
    pub fn diagonal(&self) -> Vec<f64> {
        let mut diag = vec![1.0];
        for f in &self.factors {
            let fd = f.diagonal();
            diag = diag
                .iter()
                .flat_map(|&a| fd.iter().map(move |&b| a * b))
                .collect();
        }
        diag
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        dim_check("kron_matvec", self.size(), v.len())?;
        let mut t = OutputTensor::new(self.dims(), v.to_vec())?;
        for (z, f) in self.factors.iter().enumerate() {
            t = t.mode_product(f, z)?;
        }
        Ok(t.into_data())
    }

    pub fn cholesky(&self) -> Result<KroneckerCholesky> {
        let factors = self
            .factors
            .iter()
            .enumerate()
            .map(|(z, f)| {
                Cholesky::new(f.clone()).ok_or_else(|| Error::NotPositiveDefinite {
                    factor: z,
                    pivot: failing_pivot(f),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(KroneckerCholesky { factors })
    }

    pub fn solve(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.cholesky()?.solve(v)
    }

    /// Materializes the full product. Refuses above [`DENSE_SIZE_GUARD`]
    /// unless `allow_large` is set.
    pub fn to_dense(&self, allow_large: bool) -> Result<DMatrix<f64>> {
        let size = self.size();
        if size > DENSE_SIZE_GUARD && !allow_large {
            return Err(Error::SizeGuard {
                size,
                guard: DENSE_SIZE_GUARD,
            });
        }
        let mut out = self.factors[0].clone();
        for f in &self.factors[1..] {
            out = out.kronecker(f);
        }
        Ok(out)
    }
}

/// Per-factor Cholesky decompositions of a Kronecker product.
#[derive(Debug, Clone)]
pub struct KroneckerCholesky {
    factors: Vec<Cholesky<f64, Dyn>>,
}

impl KroneckerCholesky {
    pub fn from_factors(factors: Vec<Cholesky<f64, Dyn>>) -> Self {
        Self { factors }
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(|c| c.l_dirty().nrows()).collect()
    }

    pub fn size(&self) -> usize {
        self.dims().iter().product()
    }

    pub fn factor(&self, z: usize) -> &Cholesky<f64, Dyn> {
        &self.factors[z]
    }

    /// Solves `(⊗A_z) x = v` mode by mode.
    pub fn solve(&self, v: &[f64]) -> Result<Vec<f64>> {
        dim_check("kron_solve", self.size(), v.len())?;
        let t = OutputTensor::new(self.dims(), v.to_vec())?;
        Ok(self.solve_tensor(&t).into_data())
    }

    pub fn solve_tensor(&self, t: &OutputTensor) -> OutputTensor {
        let dims = t.dims().to_vec();
        let mut cur = t.clone();
        for (z, chol) in self.factors.iter().enumerate() {
            let mut unfolded = cur.unfold(z);
            chol.solve_mut(&mut unfolded);
            cur = fold(&dims, z, &unfolded);
        }
        cur
    }

    /// `(⊗L_z) v` with `L_z` the lower Cholesky factors.
    pub fn apply_lower(&self, v: &[f64]) -> Result<Vec<f64>> {
        dim_check("kron lower factor", self.size(), v.len())?;
        let mut t = OutputTensor::new(self.dims(), v.to_vec())?;
        for (z, chol) in self.factors.iter().enumerate() {
            t = t.mode_product(&chol.l(), z)?;
        }
        Ok(t.into_data())
    }

    /// `log |⊗A_z| = Σ_z (N / r_z) log |A_z|`.
    pub fn ln_determinant(&self) -> f64 {
        let total = self.size() as f64;
        self.factors
            .iter()
            .map(|c| {
                let r = c.l_dirty().nrows() as f64;
                total / r * c.ln_determinant()
            })
            .sum()
    }
}

/// Runs an unpivoted Cholesky to report the first nonpositive pivot.
pub(crate) fn failing_pivot(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    let mut smallest = f64::INFINITY;
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        smallest = smallest.min(d);
        if d <= 0.0 || !d.is_finite() {
            return d;
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    smallest
}

/// `(⊗A_z) v`; see [`KroneckerMatrix::matvec`].
pub fn kron_matvec(k: &KroneckerMatrix, v: &[f64]) -> Result<Vec<f64>> {
    k.matvec(v)
}

/// Solves `(⊗A_z) x = v` through per-factor Cholesky decompositions.
pub fn kron_solve(k: &KroneckerMatrix, v: &[f64]) -> Result<Vec<f64>> {
    k.solve(v)
}

/// Dense Kronecker product of an ordered list of (not necessarily square) matrices.
pub fn kron_all(mats: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let mut out = DMatrix::from_element(1, 1, 1.0);
    for m in mats {
        out = out.kronecker(*m);
    }
    out
}
