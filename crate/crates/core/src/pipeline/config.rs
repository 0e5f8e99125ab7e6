//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{LbfgsbOptions, MultistartOptions};
use crate::ope::{FitOptions, NigPrior};
use crate::ppe::PpeLikelihood;
use crate::regress::Basis;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub output_dir: PathBuf,
    pub simulator: SimulatorConfig,
    pub design: DesignConfig,
    #[serde(default)]
    pub ope: OpeConfig,
    #[serde(default)]
    pub ppe: PpeConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SimulatorConfig {
    Env,
    Seir {
        /// Network CSV; the bundled network when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        network: Option<PathBuf>,
        #[serde(default = "default_days")]
        days: usize,
        #[serde(default = "default_initial_infected")]
        initial_infected: f64,
    },
}

fn default_days() -> usize {
    150
}

fn default_initial_infected() -> f64 {
    100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    pub train_n: usize,
    pub train_seed: u64,
    #[serde(default = "default_diag_n")]
    pub diag_n: usize,
    pub diag_seed: u64,
    /// Coordinate-exchange sweeps of the MaxPro search.
    #[serde(default = "default_sweeps")]
    pub sweeps: usize,
}

fn default_diag_n() -> usize {
    150
}

fn default_sweeps() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpeConfig {
    pub input_basis: Basis,
    pub output_basis: Basis,
    /// Estimate the nugget of every output-location correlation.
    pub fit_output_nugget: bool,
    /// Starting value of a fitted nugget, or the fixed value otherwise.
    pub output_nugget: f64,
    pub prior: NigPrior,
}

impl Default for OpeConfig {
    fn default() -> Self {
        Self {
            input_basis: Basis::Linear,
            output_basis: Basis::Linear,
            fit_output_nugget: true,
            output_nugget: 0.1,
            prior: NigPrior::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PpeConfig {
    pub input_basis: Basis,
    pub likelihood: PpeLikelihood,
}

impl Default for PpeConfig {
    fn default() -> Self {
        Self {
            input_basis: Basis::Linear,
            likelihood: PpeLikelihood::Reml,
        }
    }
}

/// Multistart settings; boxes are on the natural length scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub starts: usize,
    pub seed: u64,
    pub start_box: [f64; 2],
    pub bounds: [f64; 2],
    pub max_iter: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            starts: 8,
            seed: 0,
            start_box: [0.05, 10.0],
            bounds: [1e-3, 1e2],
            max_iter: 200,
        }
    }
}

impl OptimizerConfig {
    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            multistart: MultistartOptions {
                starts: self.starts,
                seed: self.seed,
                local: LbfgsbOptions {
                    max_iter: self.max_iter,
                    ..LbfgsbOptions::default()
                },
            },
            start_box: (self.start_box[0].ln(), self.start_box[1].ln()),
            bounds: (self.bounds[0].ln(), self.bounds[1].ln()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsConfig {
    /// Size of the random subsample of (run, location) points.
    pub sample: usize,
    pub seed: u64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            sample: 10_000,
            seed: 3,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.name.trim().is_empty() {
            return bad("name must not be empty".into());
        }
        if self.design.train_n < 2 {
            return bad(format!("train_n = {} (need at least 2)", self.design.train_n));
        }
        if self.design.diag_n < 1 {
            return bad("diag_n must be positive".into());
        }
        let o = &self.optimizer;
        if o.starts == 0 || o.max_iter == 0 {
            return bad("optimizer needs at least one start and one iteration".into());
        }
        for (what, [lo, hi]) in [("start_box", o.start_box), ("bounds", o.bounds)] {
            if !(lo > 0.0 && lo < hi && hi.is_finite()) {
                return bad(format!("optimizer {what} [{lo}, {hi}] must satisfy 0 < lo < hi"));
            }
        }
        if o.start_box[0] < o.bounds[0] || o.start_box[1] > o.bounds[1] {
            return bad("optimizer start_box must lie inside bounds".into());
        }
        if !(0.0..1.0).contains(&self.ope.output_nugget)
            || (self.ope.fit_output_nugget && self.ope.output_nugget == 0.0)
        {
            return bad(format!(
                "output_nugget {} must lie in [0, 1), and be positive when fitted",
                self.ope.output_nugget
            ));
        }
        let p = &self.ope.prior;
        if !(p.shape > 0.0 && p.rate > 0.0 && p.precision >= 0.0) {
            return bad(format!("invalid NIG prior {p:?}"));
        }
        if self.diagnostics.sample == 0 {
            return bad("diagnostics.sample must be positive".into());
        }
        if let SimulatorConfig::Seir {
            network,
            days,
            initial_infected,
        } = &self.simulator
        {
            if let Some(path) = network {
                if !path.is_file() {
                    return bad(format!("network file {} does not exist", path.display()));
                }
            }
            if *days < 2 || !(*initial_infected > 0.0) {
                return bad("SEIR needs at least two days and some initial infections".into());
            }
        }
        Ok(())
    }
}
