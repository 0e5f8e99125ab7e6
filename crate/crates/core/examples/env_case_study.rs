//! Environmental spill study with the library API: designs, both emulators,
//! diagnostics, and predictive spread near the second-release spike.
//!
//! cargo run --release --example env_case_study -- [n_train]

use std::time::Instant;

use tvgp::design::{maxpro_design, Design};
use tvgp::diagnostics::diagnose;
use tvgp::kernels::CorrelationSpec;
use tvgp::ope::{ope_fit, ope_predict, FitOptions, NigPrior, OpeSpec, OutputDim};
use tvgp::pipeline::study::scale_to_unit;
use tvgp::ppe::{ppe_fit, ppe_predict, PpeSpec};
use tvgp::regress::Basis;
use tvgp::simulators::{env_simulate, EnvConfig};
use tvgp::tensor::OutputTensor;

fn run(design: &Design, cfg: &EnvConfig) -> tvgp::Result<OutputTensor> {
    let runs = (0..design.n())
        .map(|i| env_simulate(&design.raw_row(i), cfg))
        .collect::<tvgp::Result<Vec<_>>>()?;
    OutputTensor::stack(&runs)
}

fn location_dim(name: &str, coords: &[f64]) -> tvgp::Result<OutputDim> {
    let corr = CorrelationSpec::gaussian_unsquared(vec![1.0])?.with_fitted_nugget(0.1)?;
    Ok(OutputDim::new(name, &scale_to_unit(coords)?, Basis::Linear, corr))
}

fn main() -> tvgp::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(50);
    let cfg = EnvConfig::default();
    let train = maxpro_design(n, 4, 1, 200)?.into_design(&cfg.bounds)?;
    let diag = maxpro_design(150, 4, 2, 200)?.into_design(&cfg.bounds)?;
    let y = run(&train, &cfg)?;
    let truth = run(&diag, &cfg)?;
    let truths: Vec<OutputTensor> = (0..diag.n()).map(|i| truth.slab(i)).collect();

    let input_corr = CorrelationSpec::gaussian(vec![1.0; 4])?;
    let spec = OpeSpec {
        input_basis: Basis::Linear,
        input_corr: input_corr.clone(),
        outputs: vec![location_dim("s", &cfg.space)?, location_dim("t", &cfg.time)?],
        prior: NigPrior::default(),
        fit: FitOptions::default(),
    };
    let clock = Instant::now();
    let ope = ope_fit(&spec, &train.scaled, &y)?;
    println!(
        "OPE fit in {:.1}s: theta {:?}, nuggets {:?}, sigma2 {:.4}",
        clock.elapsed().as_secs_f64(),
        ope.theta(),
        ope.nuggets(),
        ope.sigma2
    );
    let clock = Instant::now();
    let ppe = ppe_fit(&PpeSpec::new(Basis::Linear, input_corr), &train.scaled, &y)?;
    println!("PPE fit in {:.1}s: theta {:?}", clock.elapsed().as_secs_f64(), ppe.theta());

    let preds = [("OPE", ope_predict(&ope, &diag.scaled)?), ("PPE", ppe_predict(&ppe, &diag.scaled)?)];
    for (name, pred) in &preds {
        let m = diagnose(&truths, pred, 10_000, 3)?.full;
        println!("{name}: MASPE {:.3}  RMSPE {:.4}  MGES {:.3}", m.maspe, m.rmspe, m.mges);
    }

    // predictive SD where the truth is near 2, split by whether the second
    // release has happened
    let mut acc = [[0.0; 4]; 2];
    for (k, f) in truths.iter().enumerate() {
        let release = diag.raw_row(k)[2];
        for (i, v) in f.data().iter().enumerate() {
            if (v - 2.0).abs() <= 0.5 {
                let a = &mut acc[usize::from(cfg.time[i % cfg.time.len()] > release)];
                let (so, sp) = (preds[0].1.variances[k].data()[i].sqrt(), preds[1].1.variances[k].data()[i].sqrt());
                a[0] += 1.0;
                a[1] += so;
                a[2] += sp;
                a[3] += f64::from(u8::from(sp > so));
            }
        }
    }
    for (label, a) in ["before release", "after release"].iter().zip(acc) {
        println!(
            "{label}: {} points, mean SD OPE {:.4} PPE {:.4}, PPE wider on {:.1}%",
            a[0],
            a[1] / a[0],
            a[2] / a[0],
            100.0 * a[3] / a[0]
        );
    }
    Ok(())
}
