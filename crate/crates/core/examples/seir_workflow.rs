//! Epidemic workflow on the synthetic SEIR patch model: log transform,
//! peak-order spatial coordinate, OPE with patch-size regressors.
//!
//! cargo run --release --example seir_workflow

use tvgp::design::maxpro_design;
use tvgp::diagnostics::diagnose;
use tvgp::kernels::CorrelationSpec;
use tvgp::ope::{ope_fit, ope_predict, FitOptions, NigPrior, OpeSpec, OutputDim};
use tvgp::pipeline::study::scale_to_unit;
use tvgp::pipeline::{Simulated, Simulator, SimulatorConfig};
use tvgp::regress::Basis;
use tvgp::simulators::{rank_spatial_coordinate, SeirPatchConfig};

fn main() -> tvgp::Result<()> {
    let seir = SeirPatchConfig::default();
    let sim = Simulator::from_config(&SimulatorConfig::Seir {
        network: None,
        days: seir.days,
        initial_infected: seir.initial_infected,
    })?;
    let train = maxpro_design(30, 3, 5, 200)?.into_design(sim.bounds())?;
    let test = maxpro_design(20, 3, 6, 200)?.into_design(sim.bounds())?;
    let Simulated { raw, transformed } = sim.run_design(&train)?;
    let peak = raw.data().iter().copied().fold(0.0, f64::max);
    println!("training runs: {:?}, largest daily infected count {peak:.0}", raw.dims());

    let rank = rank_spatial_coordinate(&transformed)?;
    println!("patch order by peak time: {rank:?}");
    let rank: Vec<f64> = rank.iter().map(|&r| r as f64).collect();
    let days: Vec<f64> = (1..=seir.days).map(|d| d as f64).collect();
    let corr = CorrelationSpec::gaussian_unsquared(vec![1.0])?.with_fitted_nugget(0.1)?;
    let spec = OpeSpec {
        input_basis: Basis::Linear,
        input_corr: CorrelationSpec::gaussian(vec![1.0; 3])?,
        outputs: vec![
            OutputDim::new("patch_rank", &scale_to_unit(&rank)?, Basis::Linear, corr.clone())
                .with_regressor_locations(&scale_to_unit(&seir.populations)?),
            OutputDim::new("day", &scale_to_unit(&days)?, Basis::Linear, corr),
        ],
        prior: NigPrior::default(),
        fit: FitOptions::default(),
    };
    let fit = ope_fit(&spec, &train.scaled, &transformed)?;
    println!("theta {:?}, nuggets {:?}", fit.theta(), fit.nuggets());

    let truths = sim.run_design(&test)?.truths();
    let pred = ope_predict(&fit, &test.scaled)?;
    let m = diagnose(&truths, &pred, 5_000, 1)?.full;
    println!("held-out runs: MASPE {:.3}  RMSPE {:.4}  MGES {:.3}", m.maspe, m.rmspe, m.mges);

    let (a, day) = (0, 60);
    println!(
        "run 0, patch {a}, day {}: log(y + 1) truth {:.3}, predicted {:.3} +/- {:.3}",
        day + 1,
        truths[0].get(&[a, day]),
        pred.means[0].get(&[a, day]),
        pred.sd(0, &[a, day])
    );
    Ok(())
}
