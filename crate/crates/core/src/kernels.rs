//! Gaussian correlation functions, kernel-matrix assembly and jittered
//! Cholesky factorization.

use nalgebra::{Cholesky, DMatrix, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// First nonzero jitter tried, relative to the mean diagonal.
pub const JITTER_START: f64 = 1e-10;
/// Largest jitter tried, relative to the mean diagonal.
pub const JITTER_CAP: f64 = 1e-4;

/// Optimizer bounds for a fitted nugget, on the logit scale.
pub const NUGGET_BOUNDS: (f64, f64) = (-13.815_509_557_963_773, 2.944_438_979_166_439_4);
/// Multistart box for a fitted nugget, on the logit scale.
pub const NUGGET_STARTS: (f64, f64) = (-6.906_754_778_648_554, 0.0);

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Gaussian,
}

/// How a length parameter enters the squared distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthForm {
    /// `exp(-Σ_h ((x_h - x'_h) / θ_h)^2)`, used over simulator inputs.
    Squared,
    /// `exp(-Σ_h (x_h - x'_h)^2 / θ_h)`, used over output locations.
    Unsquared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSpec {
    pub family: KernelFamily,
    pub form: LengthForm,
    /// One length per coordinate, or a single length shared by all.
    pub lengths: Vec<f64>,
    pub scale: Option<f64>,
    /// Weight `δ` of the white-noise part: off-diagonal correlations are
    /// multiplied by `1 - δ`, the diagonal stays at one.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub nugget: f64,
    /// Whether the nugget is a fitted hyperparameter (on the logit scale).
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub fit_nugget: bool,
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

impl CorrelationSpec {
    pub fn gaussian(lengths: Vec<f64>) -> Result<Self> {
        Self::with_form(LengthForm::Squared, lengths)
    }

    pub fn gaussian_unsquared(lengths: Vec<f64>) -> Result<Self> {
        Self::with_form(LengthForm::Unsquared, lengths)
    }

    pub fn with_form(form: LengthForm, lengths: Vec<f64>) -> Result<Self> {
        let spec = Self {
            family: KernelFamily::Gaussian,
            form,
            lengths,
            scale: None,
            nugget: 0.0,
            fit_nugget: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_scale(mut self, scale: f64) -> Result<Self> {
        self.scale = Some(scale);
        self.validate()?;
        Ok(self)
    }

    pub fn with_nugget(mut self, nugget: f64) -> Result<Self> {
        self.nugget = nugget;
        self.validate()?;
        Ok(self)
    }

    /// Starts the nugget at `initial` and marks it for estimation.
    pub fn with_fitted_nugget(mut self, initial: f64) -> Result<Self> {
        self.fit_nugget = true;
        self.with_nugget(initial)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.nugget) {
            return Err(Error::InvalidCorrelation(format!(
                "nugget {} must lie in [0, 1)",
                self.nugget
            )));
        }
        if self.lengths.is_empty() {
            return Err(Error::InvalidCorrelation("no correlation lengths".into()));
        }
        if let Some(bad) = self.lengths.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidCorrelation(format!(
                "correlation length {bad} must be positive and finite"
            )));
        }
        if let Some(s) = self.scale {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidCorrelation(format!(
                    "scale {s} must be positive"
                )));
            }
        }
        Ok(())
    }

    pub fn log_lengths(&self) -> Vec<f64> {
        self.lengths.iter().map(|l| l.ln()).collect()
    }

    pub fn with_log_lengths(&self, log_lengths: &[f64]) -> Result<Self> {
        let mut out = self.clone();
        out.lengths = log_lengths.iter().map(|l| l.exp()).collect();
        out.validate()?;
        Ok(out)
    }

    /// Number of fitted hyperparameters.
    pub fn param_count(&self) -> usize {
        self.lengths.len() + usize::from(self.fit_nugget)
    }

    /// Fitted hyperparameters: log lengths, then the logit nugget if fitted.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.log_lengths();
        if self.fit_nugget {
            p.push(logit(self.nugget));
        }
        p
    }

    pub fn with_params(&self, params: &[f64]) -> Result<Self> {
        if params.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                context: "correlation hyperparameters".into(),
                expected: self.param_count(),
                got: params.len(),
            });
        }
        let k = self.lengths.len();
        let mut out = self.with_log_lengths(&params[..k])?;
        if self.fit_nugget {
            out.nugget = logistic(params[k]);
            out.validate()?;
        }
        Ok(out)
    }

    /// Optimizer bounds and multistart box for every fitted hyperparameter.
    pub fn param_boxes(
        &self,
        length_bounds: (f64, f64),
        length_starts: (f64, f64),
    ) -> (Vec<(f64, f64)>, Vec<(f64, f64)>) {
        let mut bounds = vec![length_bounds; self.lengths.len()];
        let mut starts = vec![length_starts; self.lengths.len()];
        if self.fit_nugget {
            bounds.push(NUGGET_BOUNDS);
            starts.push(NUGGET_STARTS);
        }
        (bounds, starts)
    }

    fn length(&self, h: usize) -> f64 {
        if self.lengths.len() == 1 {
            self.lengths[0]
        } else {
            self.lengths[h]
        }
    }

    fn check_dim(&self, p: usize) -> Result<()> {
        if self.lengths.len() == 1 || self.lengths.len() == p {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                context: "correlation lengths".into(),
                expected: p,
                got: self.lengths.len(),
            })
        }
    }

    /// Contribution of coordinate `h` to the exponent, before negation.
    fn term(&self, h: usize, diff: f64) -> f64 {
        let l = self.length(h);
        match self.form {
            LengthForm::Squared => (diff / l) * (diff / l),
            LengthForm::Unsquared => diff * diff / l,
        }
    }

    /// Derivative of `-term` with respect to `log θ_h` (i.e. `d exponent / d log θ`).
    fn term_log_derivative(&self, h: usize, diff: f64) -> f64 {
        match self.form {
            LengthForm::Squared => 2.0 * self.term(h, diff),
            LengthForm::Unsquared => self.term(h, diff),
        }
    }

    fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        let s: f64 = x
            .iter()
            .zip(y)
            .enumerate()
            .map(|(h, (a, b))| self.term(h, a - b))
            .sum();
        (-s).exp() * self.scale.unwrap_or(1.0)
    }
}

/// Gaussian correlation between two points.
pub fn gaussian_corr(x: &[f64], xp: &[f64], spec: &CorrelationSpec) -> Result<f64> {
    spec.validate()?;
    if x.len() != xp.len() {
        return Err(Error::DimensionMismatch {
            context: "correlation arguments".into(),
            expected: x.len(),
            got: xp.len(),
        });
    }
    spec.check_dim(x.len())?;
    Ok(spec.eval_unchecked(x, xp))
}

/// A symmetric kernel matrix with its (possibly jittered) Cholesky factor.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    pub values: DMatrix<f64>,
    pub cholesky: Cholesky<f64, Dyn>,
    pub jitter_used: f64,
}

impl KernelMatrix {
    pub fn factorize(values: DMatrix<f64>) -> Result<Self> {
        let (cholesky, jitter_used) = jittered_cholesky(&values)?;
        Ok(Self {
            values,
            cholesky,
            jitter_used,
        })
    }

    pub fn size(&self) -> usize {
        self.values.nrows()
    }

    /// `values + jitter_used * I`, the matrix the factor actually represents.
    pub fn jittered(&self) -> DMatrix<f64> {
        let n = self.size();
        &self.values + DMatrix::identity(n, n) * self.jitter_used
    }
}

fn rows(points: &DMatrix<f64>) -> Vec<Vec<f64>> {
    points
        .row_iter()
        .map(|r| r.iter().copied().collect())
        .collect()
}

/// Kernel matrix over the rows of `points`, factorized with the jitter ladder.
pub fn build_kernel_matrix(points: &DMatrix<f64>, spec: &CorrelationSpec) -> Result<KernelMatrix> {
    KernelMatrix::factorize(kernel_values(points, spec)?)
}

/// Unfactorized kernel matrix over the rows of `points`.
pub fn kernel_values(points: &DMatrix<f64>, spec: &CorrelationSpec) -> Result<DMatrix<f64>> {
    spec.validate()?;
    if points.nrows() == 0 {
        return Err(Error::InvalidDesign("kernel matrix needs at least one point".into()));
    }
    spec.check_dim(points.ncols())?;
    let pts = rows(points);
    let n = pts.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = spec.scale.unwrap_or(1.0);
        for j in 0..i {
            let v = spec.eval_unchecked(&pts[i], &pts[j]) * (1.0 - spec.nugget);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// Cross-correlation matrix `L_{jk} = κ(points_j, new_points_k)`.
pub fn build_cross(
    points: &DMatrix<f64>,
    new_points: &DMatrix<f64>,
    spec: &CorrelationSpec,
) -> Result<DMatrix<f64>> {
    spec.validate()?;
    if points.ncols() != new_points.ncols() {
        return Err(Error::DimensionMismatch {
            context: "cross kernel".into(),
            expected: points.ncols(),
            got: new_points.ncols(),
        });
    }
    spec.check_dim(points.ncols())?;
    let a = rows(points);
    let b = rows(new_points);
    Ok(DMatrix::from_fn(a.len(), b.len(), |j, k| {
        spec.eval_unchecked(&a[j], &b[k]) * (1.0 - spec.nugget)
    }))
}

/// Correlation vector between one point and every row of `points`.
pub fn cross_vector(points: &DMatrix<f64>, x: &[f64], spec: &CorrelationSpec) -> Vec<f64> {
    points
        .row_iter()
        .map(|r| {
            let p: Vec<f64> = r.iter().copied().collect();
            spec.eval_unchecked(&p, x) * (1.0 - spec.nugget)
        })
        .collect()
}

/// Derivatives of the kernel matrix with respect to each log length.
pub fn kernel_log_gradients(
    points: &DMatrix<f64>,
    spec: &CorrelationSpec,
) -> Result<Vec<DMatrix<f64>>> {
    let k = kernel_values(points, spec)?;
    let pts = rows(points);
    let n = pts.len();
    let p = points.ncols();
    let grads = if spec.lengths.len() == 1 {
        let mut d = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..i {
                let s: f64 = (0..p)
                    .map(|h| spec.term_log_derivative(h, pts[i][h] - pts[j][h]))
                    .sum();
                d[(i, j)] = k[(i, j)] * s;
                d[(j, i)] = d[(i, j)];
            }
        }
        vec![d]
    } else {
        (0..p)
            .map(|h| {
                let mut d = DMatrix::zeros(n, n);
                for i in 0..n {
                    for j in 0..i {
                        let s = spec.term_log_derivative(h, pts[i][h] - pts[j][h]);
                        d[(i, j)] = k[(i, j)] * s;
                        d[(j, i)] = d[(i, j)];
                    }
                }
                d
            })
            .collect()
    };
    Ok(grads)
}

/// Derivatives of the kernel matrix with respect to every fitted
/// hyperparameter, in the order of [`CorrelationSpec::params`].
pub fn kernel_param_gradients(
    points: &DMatrix<f64>,
    spec: &CorrelationSpec,
) -> Result<Vec<DMatrix<f64>>> {
    let mut grads = kernel_log_gradients(points, spec)?;
    if spec.fit_nugget {
        // d/dη of (1 - δ) C with δ = logistic(η) is -δ (1 - δ) C = -δ K off the diagonal
        let mut d = kernel_values(points, spec)? * -spec.nugget;
        d.fill_diagonal(0.0);
        grads.push(d);
    }
    Ok(grads)
}

/// Cholesky with the jitter ladder `0, 1e-10, 1e-9, ...` up to `1e-4`, all
/// relative to the mean diagonal.
pub fn jittered_cholesky(values: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let n = values.nrows();
    if let Some(c) = Cholesky::new(values.clone()) {
        return Ok((c, 0.0));
    }
    let mean_diag = values.diagonal().mean().abs().max(f64::MIN_POSITIVE);
    let mut rel = JITTER_START;
    while rel <= JITTER_CAP * (1.0 + 1e-9) {
        let jitter = rel * mean_diag;
        let jittered = values + DMatrix::identity(n, n) * jitter;
        if let Some(c) = Cholesky::new(jittered) {
            return Ok((c, jitter));
        }
        rel *= 10.0;
    }
    let min_eigenvalue = SymmetricEigen::new(values.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    Err(Error::Factorization {
        jitter: JITTER_CAP * mean_diag,
        min_eigenvalue,
    })
}
