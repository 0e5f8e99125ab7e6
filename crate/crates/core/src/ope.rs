//! Outer Product Emulator.
//!
//! Mean `(G_0 ⊗ G_1 ⊗ ... ⊗ G_m) β` with separable regressors over inputs
//! and output locations, covariance `σ² K ⊗ W_1 ⊗ ... ⊗ W_m` with Gaussian
//! kernels on every factor, and the conjugate prior
//! `σ⁻² ~ Gamma(a, b)`, `β | σ² ~ N(0, σ²/λ I)`.
//!
//! Correlation lengths maximize the marginal likelihood with `β` and `σ²`
//! integrated out; `σ²` is then plugged in at its posterior mode.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::design::Bound;
use crate::error::{dim_check, Error, Result};
use crate::gp::{self, FnMean, PosteriorState, TvGpPrior};
use crate::kernels::{self, CorrelationSpec, KernelMatrix};
use crate::kron::{kron_all, KroneckerCholesky, KroneckerMatrix};
use crate::optim::{multistart, MultistartOptions, MultistartResult};
use crate::persist::{check_version, FlatMatrix, FlatTensor, FORMAT_VERSION};
use crate::predictive::PredictiveDistribution;
use crate::regress::Basis;
use crate::tensor::{OutputTensor, VEC_ORDER_TAG};

/// Recorded in fit metadata.
pub const LIKELIHOOD_FORM: &str = "marginal: beta and sigma2 integrated under the NIG prior";

/// One output dimension: its locations, regressors and correlation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputDim {
    pub name: String,
    /// One location per row (already scaled).
    pub locations: Vec<Vec<f64>>,
    /// Coordinates the regressors are evaluated at, when they differ from
    /// the correlation coordinates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regressor_locations: Option<Vec<Vec<f64>>>,
    pub basis: Basis,
    pub corr: CorrelationSpec,
}

impl OutputDim {
    pub fn new(name: &str, locations: &[f64], basis: Basis, corr: CorrelationSpec) -> Self {
        Self {
            name: name.to_string(),
            locations: locations.iter().map(|&l| vec![l]).collect(),
            regressor_locations: None,
            basis,
            corr,
        }
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn location_matrix(&self) -> Result<DMatrix<f64>> {
        points_matrix(&self.locations, &format!("locations of {}", self.name))
    }

    pub fn with_regressor_locations(mut self, coords: &[f64]) -> Self {
        self.regressor_locations = Some(coords.iter().map(|&c| vec![c]).collect());
        self
    }

    /// `G_z`, one row per location.
    pub fn regressor_matrix(&self) -> Result<DMatrix<f64>> {
        match &self.regressor_locations {
            Some(r) => {
                dim_check(&format!("regressor locations of {}", self.name), self.len(), r.len())?;
                Ok(self.basis.design_matrix(&points_matrix(r, &self.name)?))
            }
            None => Ok(self.basis.design_matrix(&self.location_matrix()?)),
        }
    }
}

pub(crate) fn points_matrix(points: &[Vec<f64>], context: &str) -> Result<DMatrix<f64>> {
    let d = points.first().map_or(0, |p| p.len());
    if points.is_empty() || d == 0 {
        return Err(Error::InvalidShape {
            dims: vec![points.len(), d],
            reason: format!("{context}: need at least one point of positive dimension"),
        });
    }
    for p in points {
        dim_check(context, d, p.len())?;
    }
    Ok(DMatrix::from_fn(points.len(), d, |i, h| points[i][h]))
}

/// Normal-inverse-gamma prior: `σ⁻² ~ Gamma(shape, rate)` and
/// `β | σ² ~ N(0, σ²/precision · I)`. `precision = 0` is the flat limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NigPrior {
    pub shape: f64,
    pub rate: f64,
    pub precision: f64,
}

impl Default for NigPrior {
    fn default() -> Self {
        Self {
            shape: 1.0,
            rate: 1.0,
            precision: 1.0,
        }
    }
}

impl NigPrior {
    pub fn flat() -> Self {
        Self {
            precision: 0.0,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.shape > 0.0 && self.rate > 0.0 && self.precision >= 0.0) {
            return Err(Error::Config(format!("invalid NIG prior {self:?}")));
        }
        Ok(())
    }
}

/// Hyperparameter search settings shared by both emulators.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitOptions {
    pub multistart: MultistartOptions,
    /// Box for multistart initial points, in log length.
    pub start_box: (f64, f64),
    /// Optimizer box, in log length.
    pub bounds: (f64, f64),
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            multistart: MultistartOptions::default(),
            start_box: (0.05f64.ln(), 10f64.ln()),
            bounds: (1e-3f64.ln(), 1e2f64.ln()),
        }
    }
}

impl FitOptions {
    pub(crate) fn boxes(&self, dim: usize) -> (Vec<(f64, f64)>, Vec<(f64, f64)>) {
        (vec![self.bounds; dim], vec![self.start_box; dim])
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OpeSpec {
    pub input_basis: Basis,
    pub input_corr: CorrelationSpec,
    pub outputs: Vec<OutputDim>,
    pub prior: NigPrior,
    pub fit: FitOptions,
}

impl OpeSpec {
    /// Number of fitted hyperparameters per factor, input factor first.
    pub fn parameter_counts(&self) -> Vec<usize> {
        std::iter::once(self.input_corr.param_count())
            .chain(self.outputs.iter().map(|o| o.corr.param_count()))
            .collect()
    }

    /// All fitted hyperparameters: per factor, log lengths then the logit
    /// nugget when it is fitted.
    pub fn log_theta(&self) -> Vec<f64> {
        let mut t = self.input_corr.params();
        for o in &self.outputs {
            t.extend(o.corr.params());
        }
        t
    }

    fn factors(&self) -> impl Iterator<Item = &CorrelationSpec> {
        std::iter::once(&self.input_corr).chain(self.outputs.iter().map(|o| &o.corr))
    }

    /// Optimizer bounds and multistart box over [`OpeSpec::log_theta`].
    pub fn search_boxes(&self) -> (Vec<(f64, f64)>, Vec<(f64, f64)>) {
        let (mut bounds, mut starts) = (Vec::new(), Vec::new());
        for c in self.factors() {
            let (b, s) = c.param_boxes(self.fit.bounds, self.fit.start_box);
            bounds.extend(b);
            starts.extend(s);
        }
        (bounds, starts)
    }

    /// Correlation specs of all factors at `log_theta`.
    pub fn factor_specs(&self, log_theta: &[f64]) -> Result<Vec<CorrelationSpec>> {
        let counts = self.parameter_counts();
        dim_check("log length count", counts.iter().sum(), log_theta.len())?;
        let mut out = Vec::with_capacity(counts.len());
        let mut at = 0;
        for (base, &c) in self.factors().zip(&counts) {
            out.push(base.with_params(&log_theta[at..at + c])?);
            at += c;
        }
        Ok(out)
    }

    pub fn output_dims(&self) -> Vec<usize> {
        self.outputs.iter().map(|o| o.len()).collect()
    }
}

/// Regressor matrices `(G_0, G_1, ..., G_m)`: `G_0` is `n × v_0` over the
/// design, `G_z` is `r_z × v_z` over the locations of dimension `z`.
pub fn ope_design_matrix(spec: &OpeSpec, inputs: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
    let mut out = vec![spec.input_basis.design_matrix(inputs)];
    for o in &spec.outputs {
        out.push(o.regressor_matrix()?);
    }
    if out.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
        return Err(Error::Numerical("non-finite regressor value".into()));
    }
    Ok(out)
}

/// Everything the likelihood, its gradient and prediction need at fixed θ.
#[derive(Debug, Clone)]
struct Core {
    specs: Vec<CorrelationSpec>,
    kernels: Vec<KernelMatrix>,
    chol: KroneckerCholesky,
    /// `A_z⁻¹ G_z` per factor.
    kinv_g: Vec<DMatrix<f64>>,
    /// `G_zᵀ A_z⁻¹ G_z` per factor.
    info: Vec<DMatrix<f64>>,
    /// Posterior precision (per unit σ²) of β.
    a_chol: Cholesky<f64, Dyn>,
    beta: OutputTensor,
    residuals: OutputTensor,
    /// `R⁻¹ (y - H m)` as a tensor.
    alpha: OutputTensor,
    quad: f64,
}

struct Problem<'a> {
    spec: &'a OpeSpec,
    outputs: &'a OutputTensor,
    points: Vec<DMatrix<f64>>,
    regs: Vec<DMatrix<f64>>,
}

impl<'a> Problem<'a> {
    fn new(spec: &'a OpeSpec, inputs: &'a DMatrix<f64>, outputs: &'a OutputTensor) -> Result<Self> {
        spec.prior.validate()?;
        let mut expected = vec![inputs.nrows()];
        expected.extend(spec.output_dims());
        if outputs.dims() != expected.as_slice() {
            return Err(Error::InvalidShape {
                dims: outputs.dims().to_vec(),
                reason: format!("training stack must have shape {expected:?}"),
            });
        }
        if outputs.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("training outputs contain non-finite values".into()));
        }
        let mut points = vec![inputs.clone()];
        for o in &spec.outputs {
            points.push(o.location_matrix()?);
        }
        let regs = ope_design_matrix(spec, inputs)?;
        let q: usize = regs.iter().map(|g| g.ncols()).product();
        if q > outputs.len() {
            log::warn!("regression dimension {q} exceeds data size {}", outputs.len());
        }
        Ok(Self {
            spec,

            outputs,
            points,
            regs,
        })
    }

    fn q(&self) -> usize {
        self.regs.iter().map(|g| g.ncols()).product()
    }

    fn core(&self, log_theta: &[f64]) -> Result<Core> {
        let specs = self.spec.factor_specs(log_theta)?;
        let kernels = self
            .points
            .iter()
            .zip(&specs)
            .map(|(p, s)| kernels::build_kernel_matrix(p, s))
            .collect::<Result<Vec<_>>>()?;
        self.core_with(specs, kernels)
    }

    fn core_with(&self, specs: Vec<CorrelationSpec>, kernels: Vec<KernelMatrix>) -> Result<Core> {
        let chol =
            KroneckerCholesky::from_factors(kernels.iter().map(|k| k.cholesky.clone()).collect());
        let kinv_g: Vec<DMatrix<f64>> = self
            .regs
            .iter()
            .enumerate()
            .map(|(z, g)| chol.factor(z).solve(g))
            .collect();
        let info: Vec<DMatrix<f64>> = self
            .regs
            .iter()
            .zip(&kinv_g)
            .map(|(g, kg)| g.transpose() * kg)
            .collect();
        let lambda = self.spec.prior.precision;
        let q = self.q();
        let mut a = kron_all(&info.iter().collect::<Vec<_>>());
        for i in 0..q {
            a[(i, i)] += lambda;
        }
        let a_chol = Cholesky::new(a).ok_or_else(|| {
            Error::RankDeficient("regression information ⊗ GᵀA⁻¹G is singular".into())
        })?;
        // Hᵀ R⁻¹ y = y ×_z (A_z⁻¹ G_z)ᵀ over all modes
        let mut hty = self.outputs.clone();
        for (z, kg) in kinv_g.iter().enumerate() {
            hty = hty.mode_product(&kg.transpose(), z)?;
        }
        let m = a_chol.solve(&DVector::from_column_slice(hty.data()));
        let beta = OutputTensor::new(hty.dims().to_vec(), m.as_slice().to_vec())?;
        let mut fitted = beta.clone();
        for (z, g) in self.regs.iter().enumerate() {
            fitted = fitted.mode_product(g, z)?;
        }
        let residuals = OutputTensor::new(
            self.outputs.dims().to_vec(),
            self.outputs
                .data()
                .iter()
                .zip(fitted.data())
                .map(|(y, f)| y - f)
                .collect(),
        )?;
        let alpha = chol.solve_tensor(&residuals);
        let quad = residuals.dot(&alpha) + lambda * m.norm_squared();
        Ok(Core {
            specs,
            kernels,
            chol,
            kinv_g,
            info,
            a_chol,
            beta,
            residuals,
            alpha,
            quad,
        })
    }

    fn posterior_shape_rate(&self, core: &Core) -> (f64, f64) {
        let n_total = self.outputs.len() as f64;
        (
            self.spec.prior.shape + n_total / 2.0,
            self.spec.prior.rate + core.quad / 2.0,
        )
    }

    fn log_likelihood(&self, core: &Core) -> f64 {
        let prior = &self.spec.prior;
        let n_total = self.outputs.len() as f64;
        let q = self.q() as f64;
        let (a_post, b_post) = self.posterior_shape_rate(core);
        -0.5 * n_total * (2.0 * std::f64::consts::PI).ln()
            - 0.5 * core.chol.ln_determinant()
            - 0.5 * core.a_chol.ln_determinant()
            + 0.5 * q * prior.precision.ln()
            + prior.shape * prior.rate.ln()
            - libm::lgamma(prior.shape)
            + libm::lgamma(a_post)
            - a_post * b_post.ln()
    }

    /// Gradient of the log likelihood with respect to every log length.
    fn gradient(&self, core: &Core) -> Result<Vec<f64>> {
        let n_total = self.outputs.len() as f64;
        let (a_post, b_post) = self.posterior_shape_rate(core);
        let kappa = a_post / b_post;
        let jittered: Vec<DMatrix<f64>> = core.kernels.iter().map(|k| k.jittered()).collect();
        let mut grad = Vec::new();
        for z in 0..core.kernels.len() {
            let mut others = core.alpha.clone();
            for (w, aw) in jittered.iter().enumerate() {
                if w != z {
                    others = others.mode_product(aw, w)?;
                }
            }
            let r_z = core.kernels[z].size() as f64;
            for d in kernels::kernel_param_gradients(&self.points[z], &core.specs[z])? {
                let t1 = n_total / r_z * core.chol.factor(z).solve(&d).trace();
                let mz = core.kinv_g[z].transpose() * &d * &core.kinv_g[z];
                let mats: Vec<&DMatrix<f64>> = core
                    .info
                    .iter()
                    .enumerate()
                    .map(|(w, i)| if w == z { &mz } else { i })
                    .collect();
                let t2 = core.a_chol.solve(&kron_all(&mats)).trace();
                let t3 = core.alpha.dot(&others.mode_product(&d, z)?);
                grad.push(-0.5 * (t1 - t2) + 0.5 * kappa * t3);
            }
        }
        Ok(grad)
    }

    fn objective(&self, log_theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let core = self.core(log_theta)?;
        let ll = self.log_likelihood(&core);
        let g = self.gradient(&core)?;
        Ok((-ll, g.into_iter().map(|v| -v).collect()))
    }
}

/// Posterior summaries of `β` at fixed correlation lengths.
#[derive(Debug, Clone)]
pub struct GlsResult {
    /// Posterior mean of `β`, shape `(v_0, v_1, ..., v_m)`.
    pub beta: OutputTensor,
    /// Cholesky factor of the per-unit-σ² posterior precision of `vec β`;
    /// the posterior covariance is `σ² A⁻¹`.
    pub precision: Cholesky<f64, Dyn>,
    pub sigma2: f64,
}

impl GlsResult {
    /// `σ² A⁻¹`.
    pub fn covariance(&self) -> DMatrix<f64> {
        self.precision.inverse() * self.sigma2
    }
}

/// Conjugate posterior of `β` at the correlation lengths in `spec`.
///
/// With `spec.prior.precision = 0` the mean is the Kronecker-factored GLS
/// estimator and singular information is reported as rank deficiency.
pub fn ope_gls(spec: &OpeSpec, inputs: &DMatrix<f64>, outputs: &OutputTensor) -> Result<GlsResult> {
    let problem = Problem::new(spec, inputs, outputs)?;
    let core = problem.core(&spec.log_theta())?;
    let (a_post, b_post) = problem.posterior_shape_rate(&core);
    Ok(GlsResult {
        beta: core.beta,
        precision: core.a_chol,
        sigma2: b_post / (a_post + 1.0),
    })
}

/// Marginal log likelihood and its gradient in log lengths.
pub fn ope_log_likelihood(
    spec: &OpeSpec,
    inputs: &DMatrix<f64>,
    outputs: &OutputTensor,
    log_theta: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let problem = Problem::new(spec, inputs, outputs)?;
    let core = problem.core(log_theta)?;
    Ok((problem.log_likelihood(&core), problem.gradient(&core)?))
}

/// A fitted OPE. Immutable; predictions may run concurrently.
#[derive(Debug, Clone)]
pub struct OpeFit {
    pub spec: OpeSpec,
    pub log_theta: Vec<f64>,
    pub sigma2: f64,
    pub log_likelihood: f64,
    pub posterior_shape: f64,
    pub posterior_rate: f64,
    pub inputs: DMatrix<f64>,
    pub outputs: OutputTensor,
    pub input_bounds: Option<Vec<Bound>>,
    pub trace: Option<MultistartResult>,
    regs: Vec<DMatrix<f64>>,
    core: Core,
    a_inverse: DMatrix<f64>,
}

/// Fits correlation lengths by multistart maximization of the marginal
/// likelihood. `inputs` are scaled to `[-1, 1]`.
pub fn ope_fit(spec: &OpeSpec, inputs: &DMatrix<f64>, outputs: &OutputTensor) -> Result<OpeFit> {
    if inputs.nrows() < 2 {
        return Err(Error::InvalidDesign("OPE fit needs at least two runs".into()));
    }
    let problem = Problem::new(spec, inputs, outputs)?;
    let (bounds, start_box) = spec.search_boxes();
    let trace = multistart(
        |t| problem.objective(t),
        &bounds,
        &start_box,
        &spec.fit.multistart,
    )?;
    let log_theta = trace.best.x.clone();
    OpeFit::assemble(spec, inputs, outputs, &log_theta, Some(trace), None)
}

impl OpeFit {
    /// Builds the fitted state at fixed log lengths.
    pub fn at(
        spec: &OpeSpec,
        inputs: &DMatrix<f64>,
        outputs: &OutputTensor,
        log_theta: &[f64],
    ) -> Result<Self> {
        Self::assemble(spec, inputs, outputs, log_theta, None, None)
    }

    fn assemble(
        spec: &OpeSpec,
        inputs: &DMatrix<f64>,
        outputs: &OutputTensor,
        log_theta: &[f64],
        trace: Option<MultistartResult>,
        input_bounds: Option<Vec<Bound>>,
    ) -> Result<Self> {
        let problem = Problem::new(spec, inputs, outputs)?;
        let core = problem.core(log_theta)?;
        let log_likelihood = if spec.prior.precision > 0.0 {
            problem.log_likelihood(&core)
        } else {
            f64::NAN
        };
        let (posterior_shape, posterior_rate) = problem.posterior_shape_rate(&core);
        let mut spec = spec.clone();
        let specs = &core.specs;
        spec.input_corr = specs[0].clone();
        for (o, s) in spec.outputs.iter_mut().zip(&specs[1..]) {
            o.corr = s.clone();
        }
        let a_inverse = core.a_chol.inverse();
        Ok(Self {
            spec,
            log_theta: log_theta.to_vec(),
            sigma2: posterior_rate / (posterior_shape + 1.0),
            log_likelihood,
            posterior_shape,
            posterior_rate,
            inputs: inputs.clone(),
            outputs: outputs.clone(),
            input_bounds,
            trace,
            regs: problem.regs,
            core,
            a_inverse,
        })
    }

    pub fn with_input_bounds(mut self, bounds: Vec<Bound>) -> Self {
        self.input_bounds = Some(bounds);
        self
    }

    /// Natural-scale correlation lengths, input factor first.
    pub fn theta(&self) -> Vec<Vec<f64>> {
        self.core.specs.iter().map(|s| s.lengths.clone()).collect()
    }

    /// Nugget of every factor, input factor first.
    pub fn nuggets(&self) -> Vec<f64> {
        self.core.specs.iter().map(|s| s.nugget).collect()
    }

    pub fn beta(&self) -> &OutputTensor {
        &self.core.beta
    }

    /// Posterior covariance of `vec β`, `σ̂² A⁻¹`.
    pub fn beta_covariance(&self) -> DMatrix<f64> {
        &self.a_inverse * self.sigma2
    }

    pub fn kernels(&self) -> &[KernelMatrix] {
        &self.core.kernels
    }

    pub fn jitters(&self) -> Vec<f64> {
        self.core.kernels.iter().map(|k| k.jitter_used).collect()
    }

    pub fn regressors(&self) -> &[DMatrix<f64>] {
        &self.regs
    }

    /// Degrees of freedom of the Student-t predictive.
    pub fn dof(&self) -> f64 {
        2.0 * self.posterior_shape
    }

    /// The regression surface `(g_0(x)ᵀ ⊗ G_1 ⊗ ... ⊗ G_m) β` at one input.
    pub fn regression_mean(&self, x: &[f64]) -> Result<OutputTensor> {
        regression_surface(&self.core.beta, &self.spec.input_basis, &self.regs, x)
    }

    /// The residual process as a TvGP posterior with coregionalization
    /// `σ̂² W_1 ⊗ ... ⊗ W_m`. Its predictive mean equals [`ope_predict`]'s;
    /// its covariance omits the regression-uncertainty term.
    pub fn posterior(&self) -> Result<PosteriorState> {
        let beta = self.core.beta.clone();
        let basis = self.spec.input_basis;
        let regs = self.regs.clone();
        let dims = self.spec.output_dims();
        let mean = FnMean::new(dims, move |x: &[f64]| {
            regression_surface(&beta, &basis, &regs, x).expect("regression surface")
        });
        let mut factors: Vec<DMatrix<f64>> =
            self.core.kernels[1..].iter().map(|k| k.jittered()).collect();
        factors[0] *= self.sigma2;
        let prior = TvGpPrior::new(
            Arc::new(mean),
            self.core.specs[0].clone(),
            KroneckerMatrix::new(factors)?,
        )?;
        gp::condition_with_kernel(prior, &self.inputs, &self.outputs, self.core.kernels[0].clone())
    }
}

fn regression_surface(
    beta: &OutputTensor,
    basis: &Basis,
    regs: &[DMatrix<f64>],
    x: &[f64],
) -> Result<OutputTensor> {
    let g0 = basis.eval(x);
    let mut t = beta.mode_product(&DMatrix::from_row_slice(1, g0.len(), &g0), 0)?;
    for (z, g) in regs.iter().enumerate().skip(1) {
        t = t.mode_product(g, z)?;
    }
    let dims = t.dims()[1..].to_vec();
    OutputTensor::new(dims, t.into_data())
}

/// Predictive means and variances at the rows of `xs` (scaled inputs).
///
/// The variance at location `i` is
/// `σ̂² [κ*(x) W_ii + (u ⊗ c_i)ᵀ A⁻¹ (u ⊗ c_i)]` with
/// `u = g_0(x) - G_0ᵀ K⁻¹ κ(x)` and `c_i` row `i` of `G_1 ⊗ ... ⊗ G_m`.
pub fn ope_predict(fit: &OpeFit, xs: &DMatrix<f64>) -> Result<PredictiveDistribution> {
    dim_check("query points", fit.inputs.ncols(), xs.ncols())?;
    let core = &fit.core;
    let cross = kernels::build_cross(&fit.inputs, xs, &core.specs[0])?;
    let weights = core.kernels[0].cholesky.solve(&cross);
    let update = core.residuals.mode_product(&weights.transpose(), 0)?;
    let out_regs: Vec<&DMatrix<f64>> = fit.regs[1..].iter().collect();
    let c = kron_all(&out_regs);
    let w_diag = KroneckerMatrix::new(core.kernels[1..].iter().map(|k| k.values.clone()).collect())?
        .diagonal();
    let v0 = fit.regs[0].ncols();
    let vr = c.ncols();
    let dims = fit.spec.output_dims();
    let g0t_w = fit.regs[0].transpose() * &weights;
    let mut means = Vec::with_capacity(xs.nrows());
    let mut variances = Vec::with_capacity(xs.nrows());
    for k in 0..xs.nrows() {
        let x: Vec<f64> = xs.row(k).iter().copied().collect();
        let mut mean = fit.regression_mean(&x)?;
        for (m, u) in mean.data_mut().iter_mut().zip(update.slab(k).data()) {
            *m += u;
        }
        let kstar = gp::clamp_variance(1.0 - cross.column(k).dot(&weights.column(k)))?;
        let g0 = fit.spec.input_basis.eval(&x);
        let u: Vec<f64> = (0..v0).map(|a| g0[a] - g0t_w[(a, k)]).collect();
        // B = (u ⊗ I)ᵀ A⁻¹ (u ⊗ I)
        let b = DMatrix::from_fn(vr, vr, |i, j| {
            let mut s = 0.0;
            for a in 0..v0 {
                for bb in 0..v0 {
                    s += u[a] * u[bb] * fit.a_inverse[(a * vr + i, bb * vr + j)];
                }
            }
            s
        });
        let cb = &c * &b;
        let var: Vec<f64> = (0..c.nrows())
            .map(|i| {
                let reg = cb.row(i).dot(&c.row(i));
                gp::clamp_variance(fit.sigma2 * (kstar * w_diag[i] + reg))
            })
            .collect::<Result<_>>()?;
        means.push(mean);
        variances.push(OutputTensor::new(dims.clone(), var)?);
    }
    Ok(PredictiveDistribution {
        means,
        variances,
        dof: Some(fit.dof()),
    })
}

/// Versioned JSON form of an [`OpeFit`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OpeFitDocument {
    pub format_version: u32,
    pub emulator: String,
    pub vec_order: String,
    pub likelihood: String,
    pub spec: OpeSpec,
    /// Correlation lengths per factor, input factor first.
    pub theta: Vec<Vec<f64>>,
    pub nugget: Vec<f64>,
    pub log_theta: Vec<f64>,
    pub sigma2: f64,
    pub log_likelihood: f64,
    pub posterior_shape: f64,
    pub posterior_rate: f64,
    pub dof: f64,
    pub beta_mean: FlatTensor,
    /// Lower Cholesky factor of the per-unit-σ² posterior precision of `vec β`.
    pub beta_precision_cholesky: FlatMatrix,
    /// Lower Cholesky factors of `K, W_1, ..., W_m` (jitter included).
    pub kernel_cholesky: Vec<FlatMatrix>,
    pub jitter: Vec<f64>,
    pub inputs: FlatMatrix,
    pub outputs: FlatTensor,
    pub input_bounds: Option<Vec<Bound>>,
    pub optimizer: Option<MultistartResult>,
}

impl OpeFit {
    pub fn to_document(&self) -> OpeFitDocument {
        OpeFitDocument {
            format_version: FORMAT_VERSION,
            emulator: "ope".into(),
            vec_order: VEC_ORDER_TAG.into(),
            likelihood: LIKELIHOOD_FORM.into(),
            spec: self.spec.clone(),
            theta: self.theta(),
            nugget: self.nuggets(),
            log_theta: self.log_theta.clone(),
            sigma2: self.sigma2,
            log_likelihood: self.log_likelihood,
            posterior_shape: self.posterior_shape,
            posterior_rate: self.posterior_rate,
            dof: self.dof(),
            beta_mean: FlatTensor::from(&self.core.beta),
            beta_precision_cholesky: FlatMatrix::from(&self.core.a_chol.l()),
            kernel_cholesky: self
                .core
                .kernels
                .iter()
                .map(|k| FlatMatrix::from(&k.cholesky.l()))
                .collect(),
            jitter: self.jitters(),
            inputs: FlatMatrix::from(&self.inputs),
            outputs: FlatTensor::from(&self.outputs),
            input_bounds: self.input_bounds.clone(),
            optimizer: self.trace.clone(),
        }
    }

    /// Rebuilds the fit by refactorizing at the stored lengths; the result
    /// is bitwise identical to the fit that was saved.
    pub fn from_document(doc: &OpeFitDocument) -> Result<Self> {
        check_version(doc.format_version, "OPE fit")?;
        if doc.vec_order != VEC_ORDER_TAG {
            return Err(Error::Config(format!("unsupported vec order {}", doc.vec_order)));
        }
        let inputs = doc.inputs.to_matrix()?;
        let outputs = doc.outputs.to_tensor()?;
        Self::assemble(
            &doc.spec,
            &inputs,
            &outputs,
            &doc.log_theta,
            doc.optimizer.clone(),
            doc.input_bounds.clone(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kron::KroneckerMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(r: usize) -> Vec<f64> {
        (0..r)
            .map(|i| if r == 1 { 0.0 } else { -1.0 + 2.0 * i as f64 / (r - 1) as f64 })
            .collect()
    }

    fn small_spec(r1: usize, r2: usize, prior: NigPrior) -> OpeSpec {
        OpeSpec {
            input_basis: Basis::Linear,
            input_corr: CorrelationSpec::gaussian(vec![0.7, 1.3]).unwrap(),
            outputs: vec![
                OutputDim::new(
                    "s",
                    &grid(r1),
                    Basis::Linear,
                    CorrelationSpec::gaussian_unsquared(vec![0.4]).unwrap(),
                ),
                OutputDim::new(
                    "t",
                    &grid(r2),
                    Basis::Linear,
                    CorrelationSpec::gaussian_unsquared(vec![0.9]).unwrap(),
                ),
            ],
            prior,
            fit: FitOptions::default(),
        }
    }

    fn random_problem(seed: u64, n: usize, r1: usize, r2: usize) -> (DMatrix<f64>, OutputTensor) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
        let y = OutputTensor::from_fn(vec![n, r1, r2], |_| rng.random_range(-1.0..1.0)).unwrap();
        (x, y)
    }

    #[test]
    fn design_matrix_rows() {
        let mut spec = small_spec(3, 3, NigPrior::default());
        spec.outputs[1].locations = vec![vec![0.0], vec![0.5], vec![1.0]];
        let x = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 1.0]);
        let g = ope_design_matrix(&spec, &x).unwrap();
        assert_eq!(g[0], DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]));
        assert_eq!(
            g[2],
            DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 0.5, 1.0, 1.0])
        );
    }

    #[test]
    fn kronecker_mean_matches_elementwise_evaluation() {
        let spec = small_spec(2, 3, NigPrior::default());
        let (x, _) = random_problem(3, 3, 2, 3);
        let g = ope_design_matrix(&spec, &x).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let beta = OutputTensor::from_fn(vec![3, 2, 2], |_| rng.random_range(-1.0..1.0)).unwrap();
        let mut mean = beta.clone();
        for (z, gz) in g.iter().enumerate() {
            mean = mean.mode_product(gz, z).unwrap();
        }
        let s = grid(2);
        let t = grid(3);
        for j in 0..3 {
            for i1 in 0..2 {
                for i2 in 0..3 {
                    let g0 = [1.0, x[(j, 0)], x[(j, 1)]];
                    let g1 = [1.0, s[i1]];
                    let g2 = [1.0, t[i2]];
                    let mut direct = 0.0;
                    for a in 0..3 {
                        for b in 0..2 {
                            for c in 0..2 {
                                direct += g0[a] * g1[b] * g2[c] * beta.get(&[a, b, c]);
                            }
                        }
                    }
                    assert!((mean.get(&[j, i1, i2]) - direct).abs() < 1e-12);
                }
            }
        }
    }

    fn dense_gls(spec: &OpeSpec, x: &DMatrix<f64>, y: &OutputTensor) -> DVector<f64> {
        let g = ope_design_matrix(spec, x).unwrap();
        let h = kron_all(&g.iter().collect::<Vec<_>>());
        let specs = spec.factor_specs(&spec.log_theta()).unwrap();
        let mut pts = vec![x.clone()];
        for o in &spec.outputs {
            pts.push(o.location_matrix().unwrap());
        }
        let ks: Vec<DMatrix<f64>> = pts
            .iter()
            .zip(&specs)
            .map(|(p, s)| kernels::build_kernel_matrix(p, s).unwrap().jittered())
            .collect();
        let r = kron_all(&ks.iter().collect::<Vec<_>>());
        let rc = Cholesky::new(r).unwrap();
        let rinv_h = rc.solve(&h);
        let info = h.transpose() * &rinv_h;
        let yv = DVector::from_column_slice(y.data());
        Cholesky::new(info).unwrap().solve(&(rinv_h.transpose() * yv))
    }

    #[test]
    fn flat_prior_matches_dense_gls() {
        for seed in 0..10 {
            let spec = small_spec(3, 2, NigPrior::flat());
            let (x, y) = random_problem(seed, 5, 3, 2);
            let gls = ope_gls(&spec, &x, &y).unwrap();
            let dense = dense_gls(&spec, &x, &y);
            for (a, b) in gls.beta.data().iter().zip(dense.iter()) {
                assert!((a - b).abs() <= 1e-8 * b.abs().max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn flat_prior_matches_kron_gls_path() {
        let spec = small_spec(3, 3, NigPrior::flat());
        let (x, y) = random_problem(4, 5, 3, 3);
        let gls = ope_gls(&spec, &x, &y).unwrap();
        let g = ope_design_matrix(&spec, &x).unwrap();
        let specs = spec.factor_specs(&spec.log_theta()).unwrap();
        let mut pts = vec![x.clone()];
        for o in &spec.outputs {
            pts.push(o.location_matrix().unwrap());
        }
        let ks = pts
            .iter()
            .zip(&specs)
            .map(|(p, s)| kernels::build_kernel_matrix(p, s).unwrap().jittered())
            .collect();
        let other = gp::kron_gls(&g, &KroneckerMatrix::new(ks).unwrap(), &y).unwrap();
        for (a, b) in gls.beta.data().iter().zip(other.data()) {
            assert!((a - b).abs() < 1e-8 * b.abs().max(1.0));
        }
    }

    #[test]
    fn noiseless_linear_recovery() {
        let spec = small_spec(3, 3, NigPrior::flat());
        let (x, _) = random_problem(5, 5, 3, 3);
        let g = ope_design_matrix(&spec, &x).unwrap();
        let truth = OutputTensor::from_fn(vec![3, 2, 2], |i| (i[0] + 2 * i[1]) as f64 - i[2] as f64 * 0.5)
            .unwrap();
        let mut y = truth.clone();
        for (z, gz) in g.iter().enumerate() {
            y = y.mode_product(gz, z).unwrap();
        }
        let gls = ope_gls(&spec, &x, &y).unwrap();
        for (a, b) in gls.beta.data().iter().zip(truth.data()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn output_correlation_changes_flat_gls() {
        let spec = small_spec(3, 3, NigPrior::flat());
        let (x, y) = random_problem(6, 5, 3, 3);
        let a = ope_gls(&spec, &x, &y).unwrap();
        let mut other = spec.clone();
        other.outputs[0].corr = CorrelationSpec::gaussian_unsquared(vec![3.0]).unwrap();
        let b = ope_gls(&other, &x, &y).unwrap();
        let diff: f64 = a
            .beta
            .data()
            .iter()
            .zip(b.beta.data())
            .map(|(p, q)| (p - q) * (p - q))
            .sum::<f64>()
            .sqrt();
        assert!(diff > 1e-4, "{diff}");
    }

    #[test]
    fn nig_posterior_mean_tends_to_flat_gls() {
        let (x, y) = random_problem(7, 5, 3, 2);
        let flat = ope_gls(&small_spec(3, 2, NigPrior::flat()), &x, &y).unwrap();
        let mut last = f64::INFINITY;
        for precision in [1e-2, 1e-4, 1e-6] {
            let prior = NigPrior {
                precision,
                ..NigPrior::default()
            };
            let nig = ope_gls(&small_spec(3, 2, prior), &x, &y).unwrap();
            let gap: f64 = nig
                .beta
                .data()
                .iter()
                .zip(flat.beta.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(gap < last);
            last = gap;
        }
        assert!(last < 1e-4);
    }

    #[test]
    fn singular_information_is_rank_deficient_with_flat_prior() {
        let spec = small_spec(1, 2, NigPrior::flat());
        let (x, y) = random_problem(8, 5, 1, 2);
        assert!(matches!(ope_gls(&spec, &x, &y), Err(Error::RankDeficient(_))));
        let proper = small_spec(1, 2, NigPrior::default());
        assert!(ope_gls(&proper, &x, &y).is_ok());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let spec = small_spec(4, 3, NigPrior::default());
        let (x, y) = random_problem(9, 6, 4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..10 {
            let t: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (_, g) = ope_log_likelihood(&spec, &x, &y, &t).unwrap();
            for h in 0..4 {
                let step = 1e-5;
                let mut tp = t.clone();
                tp[h] += step;
                let mut tm = t.clone();
                tm[h] -= step;
                let fp = ope_log_likelihood(&spec, &x, &y, &tp).unwrap().0;
                let fm = ope_log_likelihood(&spec, &x, &y, &tm).unwrap().0;
                let fd = (fp - fm) / (2.0 * step);
                assert!(
                    (fd - g[h]).abs() <= 1e-5 * g[h].abs().max(1.0),
                    "param {h}: {fd} vs {}",
                    g[h]
                );
            }
        }
    }

    #[test]
    fn gradient_with_fitted_nuggets_matches_central_differences() {
        let mut spec = small_spec(4, 3, NigPrior::default());
        for o in &mut spec.outputs {
            o.corr = o.corr.clone().with_fitted_nugget(0.1).unwrap();
        }
        let (x, y) = random_problem(15, 6, 4, 3);
        let t0 = spec.log_theta();
        assert_eq!(t0.len(), 6);
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for _ in 0..5 {
            let t: Vec<f64> = t0.iter().map(|v| v + rng.random_range(-0.5..0.5)).collect();
            let (_, g) = ope_log_likelihood(&spec, &x, &y, &t).unwrap();
            for h in 0..t.len() {
                let step = 1e-5;
                let mut tp = t.clone();
                tp[h] += step;
                let mut tm = t.clone();
                tm[h] -= step;
                let fp = ope_log_likelihood(&spec, &x, &y, &tp).unwrap().0;
                let fm = ope_log_likelihood(&spec, &x, &y, &tm).unwrap().0;
                let fd = (fp - fm) / (2.0 * step);
                assert!(
                    (fd - g[h]).abs() <= 1e-5 * g[h].abs().max(1.0),
                    "param {h}: {fd} vs {}",
                    g[h]
                );
            }
        }
    }

    #[test]
    fn prediction_interpolates_training_runs() {
        let spec = small_spec(3, 4, NigPrior::default());
        let (x, y) = random_problem(11, 6, 3, 4);
        let fit = OpeFit::at(&spec, &x, &y, &spec.log_theta()).unwrap();
        let pred = ope_predict(&fit, &x).unwrap();
        for j in 0..6 {
            for (a, b) in pred.means[j].data().iter().zip(y.slab(j).data()) {
                assert!((a - b).abs() < 1e-4);
            }
            assert!(pred.variances[j].data().iter().all(|v| v.sqrt() < 1e-3));
        }
    }

    #[test]
    fn predictive_mean_agrees_with_tvgp_posterior() {
        let spec = small_spec(3, 2, NigPrior::default());
        let (x, y) = random_problem(12, 5, 3, 2);
        let fit = OpeFit::at(&spec, &x, &y, &spec.log_theta()).unwrap();
        let post = fit.posterior().unwrap();
        let q = DMatrix::from_row_slice(2, 2, &[0.1, -0.3, 0.8, 0.2]);
        let pred = ope_predict(&fit, &q).unwrap();
        for k in 0..2 {
            let m = post.predict_mean(&[q[(k, 0)], q[(k, 1)]]).unwrap();
            for (a, b) in m.data().iter().zip(pred.means[k].data()) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn far_query_reverts_to_regression_surface() {
        let spec = small_spec(2, 2, NigPrior::default());
        let (x, y) = random_problem(13, 5, 2, 2);
        let fit = OpeFit::at(&spec, &x, &y, &[-3.0, -3.0, -1.0, -1.0]).unwrap();
        let q = DMatrix::from_row_slice(1, 2, &[40.0, -40.0]);
        let pred = ope_predict(&fit, &q).unwrap();
        let surface = fit.regression_mean(&[40.0, -40.0]).unwrap();
        for (a, b) in pred.means[0].data().iter().zip(surface.data()) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(pred.variances[0].data().iter().all(|v| *v >= fit.sigma2 * (1.0 - 1e-9)));
    }

    #[test]
    fn document_round_trip_is_exact() {
        let spec = small_spec(3, 2, NigPrior::default());
        let (x, y) = random_problem(14, 5, 3, 2);
        let fit = OpeFit::at(&spec, &x, &y, &[0.1, -0.2, 0.3, 0.0]).unwrap();
        let json = serde_json::to_string(&fit.to_document()).unwrap();
        let doc: OpeFitDocument = serde_json::from_str(&json).unwrap();
        let back = OpeFit::from_document(&doc).unwrap();
        let q = DMatrix::from_row_slice(1, 2, &[0.3, 0.3]);
        let a = ope_predict(&fit, &q).unwrap();
        let b = ope_predict(&back, &q).unwrap();
        assert_eq!(a, b);
    }
}
