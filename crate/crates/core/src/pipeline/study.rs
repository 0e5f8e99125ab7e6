//! Simulator choice, designs and emulator specs for a configured study.

use rayon::prelude::*;

use crate::design::{maxpro_design, scale_value, Bound, Design};
use crate::error::{Error, Result};
use crate::kernels::CorrelationSpec;
use crate::ope::{OpeSpec, OutputDim};
use crate::ppe::PpeSpec;
use crate::simulators::{
    env_raw, log_shift_transform, parse_network, rank_spatial_coordinate, seir_simulate,
    EnvConfig, SeirPatchConfig,
};
use crate::tensor::OutputTensor;

use super::config::{ExperimentConfig, SimulatorConfig};

#[derive(Debug, Clone)]
pub enum Simulator {
    Env(EnvConfig),
    Seir(SeirPatchConfig),
}

/// Raw and transformed outputs of a design, each stacked `(n, r_1, r_2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulated {
    pub raw: OutputTensor,
    pub transformed: OutputTensor,
}

impl Simulated {
    pub fn runs(&self) -> usize {
        self.raw.dims()[0]
    }

    /// Transformed outputs of every run, one tensor each.
    pub fn truths(&self) -> Vec<OutputTensor> {
        (0..self.runs()).map(|j| self.transformed.slab(j)).collect()
    }
}

impl Simulator {
    pub fn from_config(cfg: &SimulatorConfig) -> Result<Self> {
        match cfg {
            SimulatorConfig::Env => Ok(Self::Env(EnvConfig::default())),
            SimulatorConfig::Seir {
                network,
                days,
                initial_infected,
            } => {
                let mut seir = SeirPatchConfig::default();
                if let Some(path) = network {
                    let text = std::fs::read_to_string(path)?;
                    let (populations, commuters, seed_patch) = parse_network(&text)?;
                    seir.populations = populations;
                    seir.commuters = commuters;
                    seir.seed_patch = seed_patch;
                }
                seir.days = *days;
                seir.initial_infected = *initial_infected;
                seir.validate()?;
                Ok(Self::Seir(seir))
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Env(_) => "env",
            Self::Seir(_) => "seir",
        }
    }

    pub fn bounds(&self) -> &[Bound] {
        match self {
            Self::Env(c) => &c.bounds,
            Self::Seir(c) => &c.bounds,
        }
    }

    pub fn input_names(&self) -> Vec<String> {
        match self {
            Self::Env(_) => (1..=4).map(|i| format!("x{i}")).collect(),
            Self::Seir(_) => ["beta", "alpha", "gamma"].map(String::from).to_vec(),
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        match self {
            Self::Env(c) => c.dims(),
            Self::Seir(c) => c.dims(),
        }
    }

    /// Physical location coordinates `(s, t)`: channel position and time for
    /// the spill, 1-based patch number and day for the epidemic.
    pub fn coordinates(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            Self::Env(c) => (c.space.clone(), c.time.clone()),
            Self::Seir(c) => (
                (1..=c.patches()).map(|a| a as f64).collect(),
                (1..=c.days).map(|d| d as f64).collect(),
            ),
        }
    }

    /// Raw and transformed output of one run.
    pub fn run(&self, x: &[f64]) -> Result<(OutputTensor, OutputTensor)> {
        let raw = match self {
            Self::Env(c) => env_raw(x, c)?,
            Self::Seir(c) => seir_simulate(x, c)?,
        };
        let transformed = log_shift_transform(&raw)?;
        Ok((raw, transformed))
    }

    /// Runs every design point in parallel; results keep design order.
    pub fn run_design(&self, design: &Design) -> Result<Simulated> {
        let runs = (0..design.n())
            .into_par_iter()
            .map(|j| self.run(&design.raw_row(j)))
            .collect::<Result<Vec<_>>>()?;
        let (raw, transformed): (Vec<_>, Vec<_>) = runs.into_iter().unzip();
        Ok(Simulated {
            raw: OutputTensor::stack(&raw)?,
            transformed: OutputTensor::stack(&transformed)?,
        })
    }
}

/// Training and diagnostic MaxPro designs.
pub fn make_designs(cfg: &ExperimentConfig, sim: &Simulator) -> Result<(Design, Design)> {
    let p = sim.bounds().len();
    let d = &cfg.design;
    let train = maxpro_design(d.train_n, p, d.train_seed, d.sweeps)?.into_design(sim.bounds())?;
    let diag = maxpro_design(d.diag_n, p, d.diag_seed, d.sweeps)?.into_design(sim.bounds())?;
    Ok((train, diag))
}

/// Maps values affinely onto `[-1, 1]` using their own range.
pub fn scale_to_unit(values: &[f64]) -> Result<Vec<f64>> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(Error::Config(format!(
            "cannot scale {} values with range [{lo}, {hi}]",
            values.len()
        )));
    }
    let b = Bound::new(lo, hi);
    Ok(values.iter().map(|v| scale_value(*v, b)).collect())
}

fn input_corr(p: usize) -> Result<CorrelationSpec> {
    CorrelationSpec::gaussian(vec![1.0; p])
}

fn output_corr(cfg: &ExperimentConfig) -> Result<CorrelationSpec> {
    let c = CorrelationSpec::gaussian_unsquared(vec![1.0])?;
    if cfg.ope.fit_output_nugget {
        c.with_fitted_nugget(cfg.ope.output_nugget)
    } else {
        c.with_nugget(cfg.ope.output_nugget)
    }
}

/// OPE spec for the study. For the epidemic the spatial correlation uses the
/// peak-order rank of each patch in `train_outputs` while the spatial
/// regressors use the scaled patch size.
pub fn ope_spec(
    cfg: &ExperimentConfig,
    sim: &Simulator,
    train_outputs: &OutputTensor,
) -> Result<OpeSpec> {
    let (s, t) = sim.coordinates();
    let basis = cfg.ope.output_basis;
    let corr = output_corr(cfg)?;
    let space = match sim {
        Simulator::Env(_) => OutputDim::new("s", &scale_to_unit(&s)?, basis, corr.clone()),
        Simulator::Seir(c) => {
            let rank: Vec<f64> = rank_spatial_coordinate(train_outputs)?
                .into_iter()
                .map(|r| r as f64)
                .collect();
            OutputDim::new("patch_rank", &scale_to_unit(&rank)?, basis, corr.clone())
                .with_regressor_locations(&scale_to_unit(&c.populations)?)
        }
    };
    let time = OutputDim::new("t", &scale_to_unit(&t)?, basis, corr);
    Ok(OpeSpec {
        input_basis: cfg.ope.input_basis,
        input_corr: input_corr(sim.bounds().len())?,
        outputs: vec![space, time],
        prior: cfg.ope.prior,
        fit: cfg.optimizer.fit_options(),
    })
}

pub fn ppe_spec(cfg: &ExperimentConfig, sim: &Simulator) -> Result<PpeSpec> {
    let mut spec = PpeSpec::new(cfg.ppe.input_basis, input_corr(sim.bounds().len())?);
    spec.likelihood = cfg.ppe.likelihood;
    spec.fit = cfg.optimizer.fit_options();
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seir_config() -> SimulatorConfig {
        SimulatorConfig::Seir {
            network: None,
            days: 150,
            initial_infected: 100.0,
        }
    }

    #[test]
    fn scaling_hits_both_ends() {
        assert_eq!(scale_to_unit(&[2.0, 3.0, 4.0]).unwrap(), vec![-1.0, 0.0, 1.0]);
        assert!(scale_to_unit(&[1.0, 1.0]).is_err());
    }

    #[test]
    fn env_run_matches_transform_of_raw() {
        let sim = Simulator::from_config(&SimulatorConfig::Env).unwrap();
        let (raw, f) = sim.run(&[10.0, 1.5, 30.15, 0.07]).unwrap();
        assert_eq!(raw.dims(), &[15, 100]);
        for (y, v) in raw.data().iter().zip(f.data()) {
            assert_eq!(*v, y.ln_1p());
        }
    }

    #[test]
    fn design_runs_keep_order() {
        let sim = Simulator::from_config(&seir_config()).unwrap();
        let design = maxpro_design(4, 3, 5, 20).unwrap().into_design(sim.bounds()).unwrap();
        let all = sim.run_design(&design).unwrap();
        assert_eq!(all.raw.dims(), &[4, 15, 150]);
        for j in 0..4 {
            let (raw, _) = sim.run(&design.raw_row(j)).unwrap();
            assert_eq!(all.raw.slab(j), raw);
        }
    }
}
