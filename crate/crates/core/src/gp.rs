//! Tensor-variate Gaussian-process conditioning.
//!
//! With training stack `F` of shape `(n, r_1, ..., r_m)`, prior mean stack
//! `M`, input correlation matrix `K` and coregionalization `Σ_1 ⊗ ... ⊗ Σ_m`,
//! the posterior process has mean `M(x) + (F - M) ×_1 κ(x)ᵀ K⁻¹`, updated
//! input kernel `κ*(x, x') = κ(x, x') - κ(x)ᵀ K⁻¹ κ(x')` and unchanged
//! coregionalization.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{dim_check, Error, Result};
use crate::kernels::{self, CorrelationSpec, KernelMatrix};
use crate::kron::{KroneckerCholesky, KroneckerMatrix};
use crate::tensor::OutputTensor;

/// Predictive variances below this are treated as numerical noise and
/// clamped to zero; anything more negative is an error.
pub const NEGATIVE_VARIANCE_TOLERANCE: f64 = 1e-10;

/// A tensor-valued prior mean function over (scaled) inputs.
pub trait MeanFunction: Send + Sync {
    fn output_dims(&self) -> Vec<usize>;
    fn mean(&self, x: &[f64]) -> Result<OutputTensor>;
}

#[derive(Debug, Clone)]
pub struct ZeroMean {
    dims: Vec<usize>,
}

impl ZeroMean {
    pub fn new(dims: Vec<usize>) -> Self {
        Self { dims }
    }
}

impl MeanFunction for ZeroMean {
    fn output_dims(&self) -> Vec<usize> {
        self.dims.clone()
    }

    fn mean(&self, _x: &[f64]) -> Result<OutputTensor> {
        OutputTensor::zeros(self.dims.clone())
    }
}

/// Wraps a closure as a mean function.
pub struct FnMean<F> {
    dims: Vec<usize>,
    f: F,
}

impl<F> FnMean<F>
where
    F: Fn(&[f64]) -> OutputTensor + Send + Sync,
{
    pub fn new(dims: Vec<usize>, f: F) -> Self {
        Self { dims, f }
    }
}

impl<F> MeanFunction for FnMean<F>
where
    F: Fn(&[f64]) -> OutputTensor + Send + Sync,
{
    fn output_dims(&self) -> Vec<usize> {
        self.dims.clone()
    }

    fn mean(&self, x: &[f64]) -> Result<OutputTensor> {
        let t = (self.f)(x);
        if t.dims() != self.dims.as_slice() {
            return Err(Error::InvalidShape {
                dims: t.dims().to_vec(),
                reason: format!("mean function must return {:?}", self.dims),
            });
        }
        Ok(t)
    }
}

#[derive(Clone)]
pub struct TvGpPrior {
    pub mean: Arc<dyn MeanFunction>,
    pub input_corr: CorrelationSpec,
    pub coregionalization: KroneckerMatrix,
}

impl fmt::Debug for TvGpPrior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TvGpPrior")
            .field("output_dims", &self.mean.output_dims())
            .field("input_corr", &self.input_corr)
            .field("coregionalization", &self.coregionalization.dims())
            .finish()
    }
}

impl TvGpPrior {
    pub fn new(
        mean: Arc<dyn MeanFunction>,
        input_corr: CorrelationSpec,
        coregionalization: KroneckerMatrix,
    ) -> Result<Self> {
        let dims = mean.output_dims();
        if dims != coregionalization.dims() {
            return Err(Error::InvalidShape {
                dims: coregionalization.dims(),
                reason: format!("coregionalization must match output dims {dims:?}"),
            });
        }
        for (z, f) in coregionalization.factors().iter().enumerate() {
            if (f - f.transpose()).amax() > 1e-12 * f.amax().max(1.0) {
                return Err(Error::InvalidShape {
                    dims: vec![f.nrows(), f.ncols()],
                    reason: format!("coregionalization factor {z} is not symmetric"),
                });
            }
        }
        Ok(Self {
            mean,
            input_corr,
            coregionalization,
        })
    }

    pub fn output_dims(&self) -> Vec<usize> {
        self.mean.output_dims()
    }
}

/// A TvGP conditioned on training runs. Immutable; all prediction methods
/// take `&self` and are safe to call concurrently.
#[derive(Clone)]
pub struct PosteriorState {
    prior: TvGpPrior,
    inputs: DMatrix<f64>,
    outputs: OutputTensor,
    residuals: OutputTensor,
    kernel: KernelMatrix,
}

impl fmt::Debug for PosteriorState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PosteriorState")
            .field("prior", &self.prior)
            .field("n", &self.inputs.nrows())
            .field("jitter", &self.kernel.jitter_used)
            .finish()
    }
}

/// Conditions the prior on training inputs (rows of `inputs`) and the
/// output stack of shape `(n, r_1, ..., r_m)`.
pub fn condition(
    prior: TvGpPrior,
    inputs: &DMatrix<f64>,
    outputs: &OutputTensor,
) -> Result<PosteriorState> {
    let kernel = kernels::build_kernel_matrix(inputs, &prior.input_corr)?;
    condition_with_kernel(prior, inputs, outputs, kernel)
}

/// As [`condition`] with an already factorized input kernel matrix.
pub fn condition_with_kernel(
    prior: TvGpPrior,
    inputs: &DMatrix<f64>,
    outputs: &OutputTensor,
    kernel: KernelMatrix,
) -> Result<PosteriorState> {
    let n = inputs.nrows();
    if n == 0 {
        return Err(Error::InvalidDesign("conditioning needs at least one run".into()));
    }
    dim_check("kernel matrix size", n, kernel.size())?;
    let mut expected = vec![n];
    expected.extend(prior.output_dims());
    if outputs.dims() != expected.as_slice() {
        return Err(Error::InvalidShape {
            dims: outputs.dims().to_vec(),
            reason: format!("training stack must have shape {expected:?}"),
        });
    }
    if outputs.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("training outputs contain non-finite values".into()));
    }
    let means = (0..n)
        .map(|j| {
            let x: Vec<f64> = inputs.row(j).iter().copied().collect();
            prior.mean.mean(&x)
        })
        .collect::<Result<Vec<_>>>()?;
    let mean_stack = OutputTensor::stack(&means)?;
    let residuals = OutputTensor::new(
        outputs.dims().to_vec(),
        outputs
            .data()
            .iter()
            .zip(mean_stack.data())
            .map(|(f, m)| f - m)
            .collect(),
    )?;
    Ok(PosteriorState {
        prior,
        inputs: inputs.clone(),
        outputs: outputs.clone(),
        residuals,
        kernel,
    })
}

impl PosteriorState {
    pub fn prior(&self) -> &TvGpPrior {
        &self.prior
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn outputs(&self) -> &OutputTensor {
        &self.outputs
    }

    pub fn residuals(&self) -> &OutputTensor {
        &self.residuals
    }

    pub fn kernel(&self) -> &KernelMatrix {
        &self.kernel
    }

    pub fn n(&self) -> usize {
        self.inputs.nrows()
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        dim_check("query point", self.inputs.ncols(), x.len())
    }

    /// `κ(x)` and `K⁻¹ κ(x)`.
    pub fn weights(&self, x: &[f64]) -> Result<(DVector<f64>, DVector<f64>)> {
        self.check_point(x)?;
        let k = DVector::from_vec(kernels::cross_vector(&self.inputs, x, &self.prior.input_corr));
        let w = self.kernel.cholesky.solve(&k);
        Ok((k, w))
    }

    pub fn predict_mean(&self, x: &[f64]) -> Result<OutputTensor> {
        let (_, w) = self.weights(x)?;
        let row = DMatrix::from_row_slice(1, w.len(), w.as_slice());
        let update = self.residuals.mode_product(&row, 0)?;
        let mut mean = self.prior.mean.mean(x)?;
        for (m, u) in mean.data_mut().iter_mut().zip(update.data()) {
            *m += u;
        }
        Ok(mean)
    }

    /// Posterior means for every row of `xs`, assembling the cross matrix once.
    pub fn predict_mean_batch(&self, xs: &DMatrix<f64>) -> Result<Vec<OutputTensor>> {
        dim_check("query points", self.inputs.ncols(), xs.ncols())?;
        let cross = kernels::build_cross(&self.inputs, xs, &self.prior.input_corr)?;
        let weights = self.kernel.cholesky.solve(&cross);
        let update = self.residuals.mode_product(&weights.transpose(), 0)?;
        (0..xs.nrows())
            .map(|i| {
                let x: Vec<f64> = xs.row(i).iter().copied().collect();
                let mut mean = self.prior.mean.mean(&x)?;
                let slab = update.slab(i);
                for (m, u) in mean.data_mut().iter_mut().zip(slab.data()) {
                    *m += u;
                }
                Ok(mean)
            })
            .collect()
    }

    /// Updated input kernel `κ*(x, x')`.
    pub fn updated_kernel(&self, x: &[f64], xp: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        self.check_point(xp)?;
        let prior = kernels::gaussian_corr(x, xp, &self.prior.input_corr)?;
        let (_, w) = self.weights(x)?;
        let kp = DVector::from_vec(kernels::cross_vector(&self.inputs, xp, &self.prior.input_corr));
        Ok(prior - w.dot(&kp))
    }

    /// Posterior covariance between `F(x)` and `F(x')`: `κ*(x, x') (⊗Σ_z)`.
    pub fn predict_cov(&self, x: &[f64], xp: &[f64]) -> Result<(f64, KroneckerMatrix)> {
        Ok((
            self.updated_kernel(x, xp)?,
            self.prior.coregionalization.clone(),
        ))
    }

    /// One draw from the tensor-normal predictive at `x`.
    pub fn sample(&self, x: &[f64], seed: u64) -> Result<OutputTensor> {
        let mean = self.predict_mean(x)?;
        let kstar = clamp_variance(self.updated_kernel(x, x)?)?;
        if kstar == 0.0 {
            return Ok(mean);
        }
        let roots = coregionalization_roots(&self.prior.coregionalization)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u: Vec<f64> = (0..mean.len())
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let z = roots.apply_lower(&u)?;
        let scale = kstar.sqrt();
        let mut out = mean;
        for (m, zi) in out.data_mut().iter_mut().zip(z) {
            *m += scale * zi;
        }
        Ok(out)
    }
}

/// Applies the negative-variance policy.
pub fn clamp_variance(v: f64) -> Result<f64> {
    if v >= 0.0 {
        Ok(v)
    } else if v >= -NEGATIVE_VARIANCE_TOLERANCE {
        Ok(0.0)
    } else {
        Err(Error::Numerical(format!("negative predictive variance {v:e}")))
    }
}

fn coregionalization_roots(k: &KroneckerMatrix) -> Result<KroneckerCholesky> {
    let factors = k
        .factors()
        .iter()
        .map(|f| kernels::jittered_cholesky(f).map(|(c, _)| c))
        .collect::<Result<Vec<Cholesky<f64, Dyn>>>>()?;
    Ok(KroneckerCholesky::from_factors(factors))
}

/// Flat-prior generalized least squares for a Kronecker mean
/// `vec(M) = (⊗G_z) β` with covariance `⊗A_z`.
///
/// The estimator factorizes as `⊗_z (G_zᵀ A_z⁻¹ G_z)⁻¹ G_zᵀ A_z⁻¹` applied to
/// `vec(F)`, and is returned as a tensor of shape `(v_0, ..., v_m)`.
pub fn kron_gls(
    regressors: &[DMatrix<f64>],
    covariance: &KroneckerMatrix,
    outputs: &OutputTensor,
) -> Result<OutputTensor> {
    dim_check(
        "GLS factor count",
        covariance.factors().len(),
        regressors.len(),
    )?;
    let chol = covariance.cholesky()?;
    let mut cur = outputs.clone();
    for (z, g) in regressors.iter().enumerate() {
        dim_check("GLS regressor rows", covariance.dims()[z], g.nrows())?;
        let kinv_g = chol.factor(z).solve(g);
        let info = g.transpose() * &kinv_g;
        let info_chol = Cholesky::new(info).ok_or_else(|| {
            Error::RankDeficient(format!("GᵀA⁻¹G is singular in factor {z}"))
        })?;
        let projector = info_chol.solve(&kinv_g.transpose());
        cur = cur.mode_product(&projector, z)?;
    }
    Ok(cur)
}
