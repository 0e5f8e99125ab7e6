use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use tvgp::design::{maxpro_design, Bound, DEFAULT_SWEEPS};
use tvgp::pipeline::io::{
    read_design_csv, read_predictions_csv, read_sims_csv, take_set, write_design_csv,
    write_points_csv, write_predictions_csv, write_sims_csv,
};
use tvgp::pipeline::{
    compare, dry_run, fit_ope, fit_ppe, run_pipeline_in, to_json, EmulatorFit, ExperimentConfig,
    MetricSet, Report, Simulator, SimulatorConfig, DIAGNOSTIC_SET, TRAIN_SET,
};
use tvgp::{Error, Result};

#[derive(Parser)]
#[command(name = "tvgp", version, about = "Tensor-variate GP emulators for gridded simulator output")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SimKind {
    Env,
    Seir,
}

#[derive(Clone, Copy, ValueEnum)]
enum EmulatorKind {
    Ope,
    Ppe,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricChoice {
    Full,
    Sample,
}

#[derive(Subcommand)]
enum Command {
    /// MaxPro design in a box.
    Design {
        #[arg(long)]
        n: usize,
        /// Number of inputs; taken from --box when omitted.
        #[arg(long)]
        p: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON list of [lo, hi] pairs; [-1, 1] for every input when omitted.
        #[arg(long = "box")]
        bounds: Option<String>,
        #[arg(long, default_value_t = DEFAULT_SWEEPS)]
        sweeps: usize,
        /// Value of the `set` column.
        #[arg(long, default_value = TRAIN_SET)]
        set: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Runs a simulator at every design point of every set.
    Simulate {
        simulator: SimKind,
        #[arg(long)]
        design: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Network CSV for the SEIR model.
        #[arg(long)]
        network: Option<PathBuf>,
    },
    /// Fits one emulator to the training set.
    Fit {
        #[arg(long)]
        emulator: EmulatorKind,
        /// Experiment config supplying the simulator and emulator settings.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        design: PathBuf,
        #[arg(long)]
        sims: PathBuf,
        #[arg(long, default_value = TRAIN_SET)]
        set: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predicts with one or more fitted emulators.
    Predict {
        #[arg(long = "fit", required = true)]
        fits: Vec<PathBuf>,
        #[arg(long)]
        design: PathBuf,
        #[arg(long, default_value = DIAGNOSTIC_SET)]
        set: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Scores predictions against simulator output.
    Diagnose {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        sims: PathBuf,
        #[arg(long, default_value = DIAGNOSTIC_SET)]
        set: String,
        #[arg(long, default_value = "diagnose")]
        name: String,
        #[arg(long, default_value_t = 10_000)]
        sample: usize,
        #[arg(long, default_value_t = 3)]
        seed: u64,
        /// Directory receiving report.json and points.csv.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Full pipeline from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Validate and print the plan without writing anything.
        #[arg(long)]
        dry_run: bool,
        /// Overrides the config's output directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Side-by-side metrics of two reports.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        csv: bool,
        #[arg(long, value_enum, default_value = "full")]
        metrics: MetricChoice,
    },
}

fn parse_box(text: &str) -> Result<Vec<Bound>> {
    let pairs: Vec<[f64; 2]> = serde_json::from_str(text)
        .map_err(|e| Error::Config(format!("--box must be a JSON list of [lo, hi] pairs: {e}")))?;
    pairs
        .into_iter()
        .map(|[lo, hi]| {
            if lo < hi {
                Ok(Bound::new(lo, hi))
            } else {
                Err(Error::Config(format!("box side [{lo}, {hi}] is empty")))
            }
        })
        .collect()
}

fn simulator(kind: SimKind, network: Option<PathBuf>) -> Result<Simulator> {
    let cfg = match kind {
        SimKind::Env => SimulatorConfig::Env,
        SimKind::Seir => SimulatorConfig::Seir {
            network,
            days: 150,
            initial_infected: 100.0,
        },
    };
    Simulator::from_config(&cfg)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(std::fs::write(path, text)?)
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Design {
            n,
            p,
            seed,
            bounds,
            sweeps,
            set,
            out,
        } => {
            let bounds = match (bounds, p) {
                (Some(b), _) => parse_box(&b)?,
                (None, Some(p)) => vec![Bound::new(-1.0, 1.0); p],
                (None, None) => return Err(Error::Config("design needs --p or --box".into())),
            };
            if p.is_some_and(|p| p != bounds.len()) {
                return Err(Error::Config(format!("--p {p:?} disagrees with a {}-input box", bounds.len())));
            }
            let design = maxpro_design(n, bounds.len(), seed, sweeps)?.into_design(&bounds)?;
            write_design_csv(&out, &[(set.as_str(), &design)])?;
            println!("wrote {n} x {} design to {}", bounds.len(), out.display());
        }
        Command::Simulate {
            simulator: kind,
            design,
            out,
            network,
        } => {
            let sim = simulator(kind, network)?;
            let sets = read_design_csv(&design, sim.bounds())?;
            let runs = sets
                .iter()
                .map(|(name, d)| Ok((name.as_str(), sim.run_design(d)?)))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<_> = runs.iter().map(|(name, s)| (*name, s)).collect();
            write_sims_csv(&out, &refs, &sim.coordinates())?;
            println!("simulated {} set(s) with {} into {}", runs.len(), sim.name(), out.display());
        }
        Command::Fit {
            emulator,
            config,
            design,
            sims,
            set,
            out,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let sim = Simulator::from_config(&cfg.simulator)?;
            let train = take_set(read_design_csv(&design, sim.bounds())?, &set, &design)?;
            let outputs = take_set(read_sims_csv(&sims)?, &set, &sims)?;
            let fit = match emulator {
                EmulatorKind::Ope => EmulatorFit::Ope(Box::new(fit_ope(&cfg, &sim, &train, &outputs)?)),
                EmulatorKind::Ppe => EmulatorFit::Ppe(Box::new(fit_ppe(&cfg, &sim, &train, &outputs)?)),
            };
            write_text(&out, &fit.to_json())?;
            let s = fit.summary();
            println!(
                "{} fit: log likelihood {:.4}, sigma2 {:.4e}, theta {:?}",
                fit.name(),
                s.log_likelihood,
                s.sigma2,
                s.theta
            );
        }
        Command::Predict {
            fits,
            design,
            set,
            out,
        } => {
            let fits = fits.iter().map(|f| EmulatorFit::load(f)).collect::<Result<Vec<_>>>()?;
            let bounds = fits[0]
                .input_bounds()
                .ok_or_else(|| Error::Config("fit document has no input bounds".into()))?
                .to_vec();
            if fits.iter().any(|f| f.input_bounds() != Some(bounds.as_slice())) {
                return Err(Error::Config("fits were made with different input bounds".into()));
            }
            let points = take_set(read_design_csv(&design, &bounds)?, &set, &design)?;
            let preds = fits
                .iter()
                .map(|f| Ok((f.name(), f.predict(&points)?)))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<_> = preds.iter().map(|(n, p)| (*n, p)).collect();
            write_predictions_csv(&out, &refs)?;
            println!("wrote predictions for {} run(s) to {}", points.n(), out.display());
        }
        Command::Diagnose {
            predictions,
            sims,
            set,
            name,
            sample,
            seed,
            out_dir,
        } => {
            let preds = read_predictions_csv(&predictions)?;
            let truths = take_set(read_sims_csv(&sims)?, &set, &sims)?.truths();
            let entries: Vec<_> = preds.iter().map(|(e, p)| (e.as_str(), p, None)).collect();
            let (report, details) = Report::build(&name, "unknown", None, &truths, &entries, sample, seed)?;
            std::fs::create_dir_all(&out_dir)?;
            std::fs::write(out_dir.join("report.json"), report.to_json())?;
            let points: Vec<_> = details.iter().map(|(e, d)| (e.as_str(), d.points.as_slice())).collect();
            write_points_csv(&out_dir.join("points.csv"), &points)?;
            print_metrics(&report);
        }
        Command::Run {
            config,
            dry_run: plan_only,
            out_dir,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(dir) = out_dir {
                cfg.output_dir = dir;
            }
            if plan_only {
                println!("{}", to_json(&dry_run(&cfg)?));
                return Ok(());
            }
            let outcome = run_pipeline_in(&cfg, &cfg.output_dir)?;
            for s in &outcome.manifest.stages {
                println!("{:<10} {:>8.2}s", s.stage, s.seconds);
            }
            print_metrics(&outcome.report);
            println!("artifacts in {}", outcome.dir.display());
        }
        Command::Compare { a, b, csv, metrics } => {
            let set = match metrics {
                MetricChoice::Full => MetricSet::Full,
                MetricChoice::Sample => MetricSet::Sample,
            };
            let table = compare(&Report::load(&a)?, &Report::load(&b)?, set)?;
            print!("{}", if csv { table.to_csv() } else { table.to_text() });
        }
    }
    Ok(())
}

fn print_metrics(report: &Report) {
    for (name, e) in &report.emulators {
        let m = &e.full;
        println!(
            "{name}: MASPE {:.4}  RMSPE {:.4}  MGES {:.4}  (points {})",
            m.maspe, m.rmspe, m.mges, m.points
        );
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
