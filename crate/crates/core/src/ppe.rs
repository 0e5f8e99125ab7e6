//! Parallel Partial Emulator.
//!
//! One GP per output location, all sharing the input regressors `G_0` and the
//! input correlation `K`; coefficients `β_i` and variances `σ²_i` are per
//! location. With `F` the `n × r` matrix of training outputs, every location
//! is handled by the same factorization of `K`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::Bound;
use crate::error::{dim_check, Error, Result};
use crate::gp;
use crate::kernels::{self, CorrelationSpec, KernelMatrix};
use crate::ope::FitOptions;
use crate::optim::{multistart, MultistartResult};
use crate::persist::{check_version, FlatMatrix, FlatTensor, FORMAT_VERSION};
use crate::predictive::PredictiveDistribution;
use crate::regress::Basis;
use crate::tensor::{OutputTensor, VEC_ORDER_TAG};

/// Which profile likelihood the correlation lengths maximize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PpeLikelihood {
    /// Restricted form, `σ̂²_i` with divisor `n - v_0`.
    Reml,
    /// Plain profile likelihood, divisor `n`.
    Ml,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PpeSpec {
    pub input_basis: Basis,
    pub input_corr: CorrelationSpec,
    pub likelihood: PpeLikelihood,
    pub fit: FitOptions,
}

impl PpeSpec {
    pub fn new(input_basis: Basis, input_corr: CorrelationSpec) -> Self {
        Self {
            input_basis,
            input_corr,
            likelihood: PpeLikelihood::Reml,
            fit: FitOptions::default(),
        }
    }
}

/// Per-location GLS results at fixed θ.
#[derive(Debug, Clone)]
pub struct PpeGls {
    /// Coefficients, `v_0 × r`; column `i` is `β̂_i`.
    pub beta: DMatrix<f64>,
    pub sigma2: Vec<f64>,
    /// Locations whose outputs are identical across runs.
    pub degenerate: Vec<usize>,
}

#[derive(Debug, Clone)]
struct Core {
    spec: CorrelationSpec,
    kernel: KernelMatrix,
    kinv_g: DMatrix<f64>,
    info: Cholesky<f64, Dyn>,
    beta: DMatrix<f64>,
    residuals: DMatrix<f64>,
    /// `K⁻¹ (F - G_0 B)`.
    pf: DMatrix<f64>,
    /// `(f_i - G_0 β̂_i)ᵀ K⁻¹ (f_i - G_0 β̂_i)`.
    quad: Vec<f64>,
}

struct Problem<'a> {
    spec: &'a PpeSpec,
    inputs: &'a DMatrix<f64>,
    g0: DMatrix<f64>,
    f: DMatrix<f64>,
    active: Vec<bool>,
}

/// The training stack `(n, r_1, ..., r_m)` as an `n × r` matrix.
fn as_matrix(outputs: &OutputTensor) -> DMatrix<f64> {
    let n = outputs.dims()[0];
    DMatrix::from_row_slice(n, outputs.len() / n, outputs.data())
}

impl<'a> Problem<'a> {
    fn new(spec: &'a PpeSpec, inputs: &'a DMatrix<f64>, outputs: &OutputTensor) -> Result<Self> {
        dim_check("training runs", inputs.nrows(), outputs.dims()[0])?;
        if outputs.order() < 2 {
            return Err(Error::InvalidShape {
                dims: outputs.dims().to_vec(),
                reason: "training stack needs a run mode and at least one output mode".into(),
            });
        }
        if outputs.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("training outputs contain non-finite values".into()));
        }
        let g0 = spec.input_basis.design_matrix(inputs);
        if g0.ncols() >= inputs.nrows() {
            return Err(Error::InvalidDesign(format!(
                "PPE needs more runs ({}) than regressors ({})",
                inputs.nrows(),
                g0.ncols()
            )));
        }
        let f = as_matrix(outputs);
        let active: Vec<bool> = f
            .column_iter()
            .map(|c| c.iter().any(|v| *v != c[0]))
            .collect();
        let degenerate = active.iter().filter(|a| !**a).count();
        if degenerate > 0 {
            log::warn!("{degenerate} output locations are constant across runs");
        }
        Ok(Self {
            spec,
            inputs,
            g0,
            f,
            active,
        })
    }

    fn n(&self) -> usize {
        self.f.nrows()
    }

    fn divisor(&self) -> f64 {
        match self.spec.likelihood {
            PpeLikelihood::Reml => (self.n() - self.g0.ncols()) as f64,
            PpeLikelihood::Ml => self.n() as f64,
        }
    }

    fn core(&self, log_theta: &[f64]) -> Result<Core> {
        let spec = self.spec.input_corr.with_log_lengths(log_theta)?;
        let kernel = kernels::build_kernel_matrix(self.inputs, &spec)?;
        let kinv_g = kernel.cholesky.solve(&self.g0);
        let info = Cholesky::new(self.g0.transpose() * &kinv_g)
            .ok_or_else(|| Error::RankDeficient("G_0ᵀ K⁻¹ G_0 is singular".into()))?;
        let beta = info.solve(&(kinv_g.transpose() * &self.f));
        let residuals = &self.f - &self.g0 * &beta;
        let pf = kernel.cholesky.solve(&residuals);
        let quad: Vec<f64> = (0..self.f.ncols())
            .into_par_iter()
            .map(|i| {
                if self.active[i] {
                    residuals.column(i).dot(&pf.column(i)).max(0.0)
                } else {
                    0.0
                }
            })
            .collect();
        Ok(Core {
            spec,
            kernel,
            kinv_g,
            info,
            beta,
            residuals,
            pf,
            quad,
        })
    }

    fn sigma2(&self, core: &Core) -> Vec<f64> {
        let d = self.divisor();
        core.quad.iter().map(|q| q / d).collect()
    }

    fn active_count(&self) -> f64 {
        self.active.iter().filter(|a| **a).count() as f64
    }

    fn log_likelihood(&self, core: &Core) -> f64 {
        let d = self.divisor();
        let r = self.active_count();
        let mut ll: f64 = self
            .active
            .iter()
            .zip(&core.quad)
            .filter(|(a, _)| **a)
            .map(|(_, q)| -0.5 * d * ((2.0 * std::f64::consts::PI * q / d).ln() + 1.0))
            .sum();
        ll -= 0.5 * r * core.kernel.cholesky.ln_determinant();
        if self.spec.likelihood == PpeLikelihood::Reml {
            ll -= 0.5 * r * core.info.ln_determinant();
        }
        ll
    }

    fn gradient(&self, core: &Core) -> Result<Vec<f64>> {
        let d = self.divisor();
        let r = self.active_count();
        let reml = self.spec.likelihood == PpeLikelihood::Reml;
        kernels::kernel_log_gradients(self.inputs, &core.spec)?
            .into_iter()
            .map(|dk| {
                let spf = &dk * &core.pf;
                let data: f64 = (0..core.pf.ncols())
                    .filter(|&i| self.active[i] && core.quad[i] > 0.0)
                    .map(|i| core.pf.column(i).dot(&spf.column(i)) / core.quad[i])
                    .sum();
                let mut tr = core.kernel.cholesky.solve(&dk).trace();
                if reml {
                    let m = core.kinv_g.transpose() * &dk * &core.kinv_g;
                    tr -= core.info.solve(&m).trace();
                }
                Ok(0.5 * d * data - 0.5 * r * tr)
            })
            .collect()
    }

    fn objective(&self, log_theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let core = self.core(log_theta)?;
        let ll = self.log_likelihood(&core);
        let g = self.gradient(&core)?;
        Ok((-ll, g.into_iter().map(|v| -v).collect()))
    }
}

/// Per-location GLS at the correlation lengths in `spec`. Only `K` enters:
/// no output covariance is consumed.
pub fn ppe_gls(spec: &PpeSpec, inputs: &DMatrix<f64>, outputs: &OutputTensor) -> Result<PpeGls> {
    let problem = Problem::new(spec, inputs, outputs)?;
    let core = problem.core(&spec.input_corr.log_lengths())?;
    Ok(PpeGls {
        sigma2: problem.sigma2(&core),
        beta: core.beta,
        degenerate: degenerate_locations(&problem.active),
    })
}

fn degenerate_locations(active: &[bool]) -> Vec<usize> {
    active
        .iter()
        .enumerate()
        .filter(|(_, a)| !**a)
        .map(|(i, _)| i)
        .collect()
}

/// Profile log likelihood and its gradient in log lengths.
pub fn ppe_log_likelihood(
    spec: &PpeSpec,
    inputs: &DMatrix<f64>,
    outputs: &OutputTensor,
    log_theta: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let problem = Problem::new(spec, inputs, outputs)?;
    let core = problem.core(log_theta)?;
    Ok((problem.log_likelihood(&core), problem.gradient(&core)?))
}

#[derive(Debug, Clone)]
pub struct PpeFit {
    pub spec: PpeSpec,
    pub log_theta: Vec<f64>,
    pub log_likelihood: f64,
    /// Per-location variances over the output dims.
    pub sigma2: OutputTensor,
    pub degenerate: Vec<usize>,
    pub inputs: DMatrix<f64>,
    pub outputs: OutputTensor,
    pub input_bounds: Option<Vec<Bound>>,
    pub trace: Option<MultistartResult>,
    g0: DMatrix<f64>,
    core: Core,
}

/// Fits the shared correlation lengths by multistart maximization of the
/// profile likelihood. `inputs` are scaled to `[-1, 1]`.
pub fn ppe_fit(spec: &PpeSpec, inputs: &DMatrix<f64>, outputs: &OutputTensor) -> Result<PpeFit> {
    let problem = Problem::new(spec, inputs, outputs)?;
    let dim = spec.input_corr.lengths.len();
    let (bounds, start_box) = spec.fit.boxes(dim);
    let trace = multistart(
        |t| problem.objective(t),
        &bounds,
        &start_box,
        &spec.fit.multistart,
    )?;
    let log_theta = trace.best.x.clone();
    PpeFit::assemble(spec, inputs, outputs, &log_theta, Some(trace), None)
}

impl PpeFit {
    pub fn at(
        spec: &PpeSpec,
        inputs: &DMatrix<f64>,
        outputs: &OutputTensor,
        log_theta: &[f64],
    ) -> Result<Self> {
        Self::assemble(spec, inputs, outputs, log_theta, None, None)
    }

    fn assemble(
        spec: &PpeSpec,
        inputs: &DMatrix<f64>,
        outputs: &OutputTensor,
        log_theta: &[f64],
        trace: Option<MultistartResult>,
        input_bounds: Option<Vec<Bound>>,
    ) -> Result<Self> {
        let problem = Problem::new(spec, inputs, outputs)?;
        let core = problem.core(log_theta)?;
        let log_likelihood = problem.log_likelihood(&core);
        let sigma2 = OutputTensor::new(outputs.dims()[1..].to_vec(), problem.sigma2(&core))?;
        let mut spec = spec.clone();
        spec.input_corr = core.spec.clone();
        Ok(Self {
            spec,
            log_theta: log_theta.to_vec(),
            log_likelihood,
            sigma2,
            degenerate: degenerate_locations(&problem.active),
            inputs: inputs.clone(),
            outputs: outputs.clone(),
            input_bounds,
            trace,
            g0: problem.g0,
            core,
        })
    }

    pub fn with_input_bounds(mut self, bounds: Vec<Bound>) -> Self {
        self.input_bounds = Some(bounds);
        self
    }

    pub fn theta(&self) -> Vec<f64> {
        self.log_theta.iter().map(|t| t.exp()).collect()
    }

    pub fn output_dims(&self) -> Vec<usize> {
        self.outputs.dims()[1..].to_vec()
    }

    /// Coefficient tensor of shape `(r_1, ..., r_m, v_0)`.
    pub fn coefficients(&self) -> OutputTensor {
        let mut dims = self.output_dims();
        dims.push(self.g0.ncols());
        // column-major storage of the v_0 × r matrix is already r-major
        OutputTensor::new(dims, self.core.beta.as_slice().to_vec())
            .expect("coefficient dims")
    }

    pub fn kernel(&self) -> &KernelMatrix {
        &self.core.kernel
    }
}

/// Predictive means and per-location variances at the rows of `xs`.
///
/// Location `i` has mean `g_0(x)ᵀ β̂_i + κ(x)ᵀ K⁻¹ (f_i - G_0 β̂_i)` and
/// variance `σ̂²_i [κ*(x) + uᵀ (G_0ᵀ K⁻¹ G_0)⁻¹ u]`, `u = g_0(x) - G_0ᵀ K⁻¹ κ(x)`.
pub fn ppe_predict(fit: &PpeFit, xs: &DMatrix<f64>) -> Result<PredictiveDistribution> {
    dim_check("query points", fit.inputs.ncols(), xs.ncols())?;
    let core = &fit.core;
    let cross = kernels::build_cross(&fit.inputs, xs, &core.spec)?;
    let weights = core.kernel.cholesky.solve(&cross);
    let dims = fit.output_dims();
    let s2 = fit.sigma2.data();
    let mut means = Vec::with_capacity(xs.nrows());
    let mut variances = Vec::with_capacity(xs.nrows());
    for k in 0..xs.nrows() {
        let x: Vec<f64> = xs.row(k).iter().copied().collect();
        let g = DVector::from_vec(fit.spec.input_basis.eval(&x));
        let w = weights.column(k);
        let mean = core.beta.transpose() * &g + core.residuals.transpose() * w;
        let kstar = gp::clamp_variance(1.0 - cross.column(k).dot(&w))?;
        let u = &g - fit.g0.transpose() * w;
        let inflation = u.dot(&core.info.solve(&u));
        let scale = kstar + inflation;
        means.push(OutputTensor::new(dims.clone(), mean.as_slice().to_vec())?);
        variances.push(OutputTensor::new(
            dims.clone(),
            s2.iter().map(|s| s * scale).collect(),
        )?);
    }
    Ok(PredictiveDistribution {
        means,
        variances,
        dof: None,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PpeFitDocument {
    pub format_version: u32,
    pub emulator: String,
    pub vec_order: String,
    pub spec: PpeSpec,
    pub theta: Vec<f64>,
    pub log_theta: Vec<f64>,
    pub log_likelihood: f64,
    /// Shape `(r_1, ..., r_m, v_0)`.
    pub coefficients: FlatTensor,
    pub sigma2: FlatTensor,
    pub degenerate_locations: Vec<usize>,
    pub kernel_cholesky: FlatMatrix,
    pub jitter: f64,
    pub inputs: FlatMatrix,
    pub outputs: FlatTensor,
    pub input_bounds: Option<Vec<Bound>>,
    pub optimizer: Option<MultistartResult>,
}

impl PpeFit {
    pub fn to_document(&self) -> PpeFitDocument {
        PpeFitDocument {
            format_version: FORMAT_VERSION,
            emulator: "ppe".into(),
            vec_order: VEC_ORDER_TAG.into(),
            spec: self.spec.clone(),
            theta: self.theta(),
            log_theta: self.log_theta.clone(),
            log_likelihood: self.log_likelihood,
            coefficients: FlatTensor::from(&self.coefficients()),
            sigma2: FlatTensor::from(&self.sigma2),
            degenerate_locations: self.degenerate.clone(),
            kernel_cholesky: FlatMatrix::from(&self.core.kernel.cholesky.l()),
            jitter: self.core.kernel.jitter_used,
            inputs: FlatMatrix::from(&self.inputs),
            outputs: FlatTensor::from(&self.outputs),
            input_bounds: self.input_bounds.clone(),
            optimizer: self.trace.clone(),
        }
    }

    /// Rebuilds the fit by refactorizing at the stored lengths.
    pub fn from_document(doc: &PpeFitDocument) -> Result<Self> {
        check_version(doc.format_version, "PPE fit")?;
        if doc.vec_order != VEC_ORDER_TAG {
            return Err(Error::Config(format!("unsupported vec order {}", doc.vec_order)));
        }
        Self::assemble(
            &doc.spec,
            &doc.inputs.to_matrix()?,
            &doc.outputs.to_tensor()?,
            &doc.log_theta,
            doc.optimizer.clone(),
            doc.input_bounds.clone(),
        )
    }
}
