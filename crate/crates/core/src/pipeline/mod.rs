//! End-to-end experiments: design, simulate, fit both emulators, predict,
//! diagnose, and write every artifact with a hashed manifest.

pub mod config;
pub mod io;
pub mod report;
pub mod study;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::design::{Bound, Design};
use crate::error::{Error, Result};
use crate::ope::{ope_fit, ope_predict, OpeFit, OpeFitDocument};
use crate::persist::FORMAT_VERSION;
use crate::ppe::{ppe_fit, ppe_predict, PpeFit, PpeFitDocument};
use crate::predictive::PredictiveDistribution;

pub use config::{
    DesignConfig, DiagnosticsConfig, ExperimentConfig, OpeConfig, OptimizerConfig, PpeConfig,
    SimulatorConfig,
};
pub use report::{compare, Comparison, FitSummary, Manifest, MetricSet, Report};
pub use study::{make_designs, ope_spec, ppe_spec, Simulated, Simulator};

/// Files written by [`run_pipeline`], in stage order.
pub const ARTIFACTS: [&str; 8] = [
    "design.csv",
    "sims.csv",
    "ope_fit.json",
    "ppe_fit.json",
    "predictions.csv",
    "report.json",
    "points.csv",
    "manifest.json",
];

pub const TRAIN_SET: &str = "train";
pub const DIAGNOSTIC_SET: &str = "diagnostic";

/// Fits the OPE to the training set; inputs are scaled with the simulator
/// bounds, which are stored in the fit.
pub fn fit_ope(cfg: &ExperimentConfig, sim: &Simulator, train: &Design, sims: &Simulated) -> Result<OpeFit> {
    let spec = ope_spec(cfg, sim, &sims.transformed)?;
    Ok(ope_fit(&spec, &train.scaled, &sims.transformed)?.with_input_bounds(sim.bounds().to_vec()))
}

pub fn fit_ppe(cfg: &ExperimentConfig, sim: &Simulator, train: &Design, sims: &Simulated) -> Result<PpeFit> {
    let spec = ppe_spec(cfg, sim)?;
    Ok(ppe_fit(&spec, &train.scaled, &sims.transformed)?.with_input_bounds(sim.bounds().to_vec()))
}

pub fn summarize_ope(fit: &OpeFit) -> FitSummary {
    FitSummary {
        theta: fit.theta(),
        nugget: fit.nuggets(),
        log_likelihood: fit.log_likelihood,
        sigma2: fit.sigma2,
        jitter: fit.jitters(),
    }
}

pub fn summarize_ppe(fit: &PpeFit) -> FitSummary {
    let s = fit.sigma2.data();
    FitSummary {
        theta: vec![fit.theta()],
        nugget: Vec::new(),
        log_likelihood: fit.log_likelihood,
        sigma2: s.iter().sum::<f64>() / s.len() as f64,
        jitter: vec![fit.kernel().jitter_used],
    }
}

/// Either fitted emulator, as loaded from its JSON document.
#[derive(Debug, Clone)]
pub enum EmulatorFit {
    Ope(Box<OpeFit>),
    Ppe(Box<PpeFit>),
}

impl EmulatorFit {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Ope(_) => "ope",
            Self::Ppe(_) => "ppe",
        }
    }

    pub fn to_json(&self) -> String {
        match self {
            Self::Ope(f) => to_json(&f.to_document()),
            Self::Ppe(f) => to_json(&f.to_document()),
        }
    }

    /// Reads either document, dispatching on its `emulator` field.
    pub fn from_json(text: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(text)?;
        match v.get("emulator").and_then(|e| e.as_str()) {
            Some("ope") => Ok(Self::Ope(Box::new(OpeFit::from_document(
                &serde_json::from_value::<OpeFitDocument>(v)?,
            )?))),
            Some("ppe") => Ok(Self::Ppe(Box::new(PpeFit::from_document(
                &serde_json::from_value::<PpeFitDocument>(v)?,
            )?))),
            other => Err(Error::Config(format!("unknown emulator {other:?} in fit document"))),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn input_bounds(&self) -> Option<&[Bound]> {
        match self {
            Self::Ope(f) => f.input_bounds.as_deref(),
            Self::Ppe(f) => f.input_bounds.as_deref(),
        }
    }

    /// Predicts at `design.scaled`.
    pub fn predict(&self, design: &Design) -> Result<PredictiveDistribution> {
        match self {
            Self::Ope(f) => ope_predict(f, &design.scaled),
            Self::Ppe(f) => ppe_predict(f, &design.scaled),
        }
    }

    pub fn summary(&self) -> FitSummary {
        match self {
            Self::Ope(f) => summarize_ope(f),
            Self::Ppe(f) => summarize_ppe(f),
        }
    }
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("artifact serializes")
}

/// What a run would do, computed without touching the file system.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Plan {
    pub name: String,
    pub simulator: String,
    pub output_dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub train_n: usize,
    pub diag_n: usize,
    pub inputs: Vec<String>,
    pub output_dims: Vec<usize>,
    pub seeds: BTreeMap<String, u64>,
}

fn seeds(cfg: &ExperimentConfig) -> BTreeMap<String, u64> {
    BTreeMap::from([
        ("train_design".to_string(), cfg.design.train_seed),
        ("diagnostic_design".to_string(), cfg.design.diag_seed),
        ("optimizer".to_string(), cfg.optimizer.seed),
        ("diagnostic_sample".to_string(), cfg.diagnostics.seed),
    ])
}

/// Validates the configuration and reports the planned artifacts.
pub fn dry_run(cfg: &ExperimentConfig) -> Result<Plan> {
    cfg.validate()?;
    let sim = Simulator::from_config(&cfg.simulator)?;
    Ok(Plan {
        name: cfg.name.clone(),
        simulator: sim.name().into(),
        output_dir: cfg.output_dir.clone(),
        files: ARTIFACTS.iter().map(|f| cfg.output_dir.join(f)).collect(),
        train_n: cfg.design.train_n,
        diag_n: cfg.design.diag_n,
        inputs: sim.input_names(),
        output_dims: sim.dims(),
        seeds: seeds(cfg),
    })
}

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub dir: PathBuf,
    pub report: Report,
    pub manifest: Manifest,
    pub ope: OpeFit,
    pub ppe: PpeFit,
    pub diagnostic_design: Design,
    pub diagnostic: Simulated,
    pub predictions: BTreeMap<String, PredictiveDistribution>,
}

struct Runner {
    dir: PathBuf,
    stages: Vec<report::StageRecord>,
    files: Vec<String>,
}

impl Runner {
    fn stage<T>(&mut self, name: &str, f: impl FnOnce(&Path) -> Result<T>) -> Result<T> {
        let clock = Instant::now();
        let out = f(&self.dir);
        self.stages.push(report::StageRecord {
            stage: name.to_string(),
            seconds: clock.elapsed().as_secs_f64(),
            status: if out.is_ok() { "ok" } else { "failed" }.to_string(),
        });
        log::info!("stage {name}: {:.2}s", clock.elapsed().as_secs_f64());
        out.map_err(|e| Error::Stage {
            stage: name.to_string(),
            source: Box::new(e),
        })
    }

    fn write(&mut self, name: &str, text: &str) -> Result<()> {
        std::fs::write(self.dir.join(name), text)?;
        self.wrote(name);
        Ok(())
    }

    fn wrote(&mut self, name: &str) {
        self.files.push(name.to_string());
    }

    fn manifest(&self, cfg: &ExperimentConfig, error: Option<String>) -> Result<Manifest> {
        let files = self
            .files
            .iter()
            .map(|name| {
                let path = self.dir.join(name);
                Ok(report::FileRecord {
                    name: name.clone(),
                    bytes: std::fs::metadata(&path)?.len(),
                    sha256: report::sha256_file(&path)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            name: cfg.name.clone(),
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            seeds: seeds(cfg),
            config: cfg.to_toml(),
            stages: self.stages.clone(),
            files,
            error,
        };
        std::fs::write(self.dir.join("manifest.json"), to_json(&manifest))?;
        Ok(manifest)
    }
}

/// Runs the whole experiment into `cfg.output_dir`.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<PipelineOutcome> {
    run_pipeline_in(cfg, &cfg.output_dir)
}

/// Runs the whole experiment into `dir`. On failure the artifacts finished so
/// far stay on disk and the manifest records the failing stage.
pub fn run_pipeline_in(cfg: &ExperimentConfig, dir: &Path) -> Result<PipelineOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(dir)?;
    let mut runner = Runner {
        dir: dir.to_path_buf(),
        stages: Vec::new(),
        files: Vec::new(),
    };
    match stages(cfg, &mut runner) {
        Ok(p) => Ok(PipelineOutcome {
            dir: runner.dir.clone(),
            manifest: runner.manifest(cfg, None)?,
            report: p.report,
            ope: p.ope,
            ppe: p.ppe,
            diagnostic_design: p.diagnostic_design,
            diagnostic: p.diagnostic,
            predictions: p.predictions,
        }),
        Err(e) => {
            runner.manifest(cfg, Some(e.to_string()))?;
            Err(e)
        }
    }
}

struct Products {
    report: Report,
    ope: OpeFit,
    ppe: PpeFit,
    diagnostic_design: Design,
    diagnostic: Simulated,
    predictions: BTreeMap<String, PredictiveDistribution>,
}

fn stages(cfg: &ExperimentConfig, runner: &mut Runner) -> Result<Products> {
    let sim = runner.stage("config", |_| Simulator::from_config(&cfg.simulator))?;
    let (train, diag) = runner.stage("design", |dir| {
        let (train, diag) = make_designs(cfg, &sim)?;
        io::write_design_csv(
            &dir.join("design.csv"),
            &[(TRAIN_SET, &train), (DIAGNOSTIC_SET, &diag)],
        )?;
        Ok((train, diag))
    })?;
    runner.wrote("design.csv");

    let (train_sims, diag_sims) = runner.stage("simulate", |dir| {
        let a = sim.run_design(&train)?;
        let b = sim.run_design(&diag)?;
        io::write_sims_csv(
            &dir.join("sims.csv"),
            &[(TRAIN_SET, &a), (DIAGNOSTIC_SET, &b)],
            &sim.coordinates(),
        )?;
        Ok((a, b))
    })?;
    runner.wrote("sims.csv");

    let ope = runner.stage("fit_ope", |_| fit_ope(cfg, &sim, &train, &train_sims))?;
    runner.write("ope_fit.json", &to_json(&ope.to_document()))?;
    let ppe = runner.stage("fit_ppe", |_| fit_ppe(cfg, &sim, &train, &train_sims))?;
    runner.write("ppe_fit.json", &to_json(&ppe.to_document()))?;

    let (ope_pred, ppe_pred) = runner.stage("predict", |dir| {
        let a = ope_predict(&ope, &diag.scaled)?;
        let b = ppe_predict(&ppe, &diag.scaled)?;
        io::write_predictions_csv(&dir.join("predictions.csv"), &[("ope", &a), ("ppe", &b)])?;
        Ok((a, b))
    })?;
    runner.wrote("predictions.csv");

    let truths = diag_sims.truths();
    let report = runner.stage("diagnose", |dir| {
        let (report, details) = Report::build(
            &cfg.name,
            sim.name(),
            Some(cfg.design.train_n),
            &truths,
            &[
                ("ope", &ope_pred, Some(summarize_ope(&ope))),
                ("ppe", &ppe_pred, Some(summarize_ppe(&ppe))),
            ],
            cfg.diagnostics.sample,
            cfg.diagnostics.seed,
        )?;
        std::fs::write(dir.join("report.json"), report.to_json())?;
        let points: Vec<(&str, &[crate::diagnostics::PointRecord])> =
            details.iter().map(|(e, d)| (e.as_str(), d.points.as_slice())).collect();
        io::write_points_csv(&dir.join("points.csv"), &points)?;
        Ok(report)
    })?;
    runner.wrote("report.json");
    runner.wrote("points.csv");

    Ok(Products {
        report,
        ope,
        ppe,
        diagnostic_design: diag,
        diagnostic: diag_sims,
        predictions: BTreeMap::from([("ope".to_string(), ope_pred), ("ppe".to_string(), ppe_pred)]),
    })
}
