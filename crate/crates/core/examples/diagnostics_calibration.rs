//! Scoring predictive distributions: MASPE, RMSPE and MGES on a calibrated,
//! an over-confident and an under-confident emulator, plus the variance floor.
//!
//! cargo run --release --example diagnostics_calibration

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use tvgp::diagnostics::{diagnose, Metrics};
use tvgp::predictive::PredictiveDistribution;
use tvgp::tensor::OutputTensor;

fn main() -> tvgp::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let dims = vec![10, 20];
    let means: Vec<OutputTensor> = (0..50)
        .map(|j| OutputTensor::from_fn(dims.clone(), |i| (j + i[0]) as f64 * 0.1 - i[1] as f64 * 0.05))
        .collect::<tvgp::Result<_>>()?;
    let sd = 0.3;
    let noise = Normal::new(0.0, sd).expect("valid sd");
    let truths: Vec<OutputTensor> = means
        .iter()
        .map(|m| {
            let mut t = m.clone();
            t.data_mut().iter_mut().for_each(|v| *v += noise.sample(&mut rng));
            t
        })
        .collect();

    println!("sqrt(2/pi) = {:.4}", (2.0 / std::f64::consts::PI).sqrt());
    for (label, claimed) in [("calibrated", sd), ("over-confident", sd / 3.0), ("under-confident", sd * 3.0)] {
        let pred = PredictiveDistribution {
            means: means.clone(),
            variances: means.iter().map(|m| m.map(|_| claimed * claimed)).collect(),
            dof: None,
        };
        let r = diagnose(&truths, &pred, 2_000, 7)?;
        println!(
            "{label:>15}: MASPE {:.4}  RMSPE {:.4}  MGES {:7.3}   (sample of {}: MASPE {:.4})",
            r.full.maspe, r.full.rmspe, r.full.mges, r.sample.points, r.sample.maspe
        );
    }

    let m = Metrics::compute(&[1.0, 2.0, 3.0], &[1.0, 2.1, 2.9], &[0.0, 0.01, 0.01])?;
    println!("a zero variance is floored: {} floored point(s), MASPE {:.3}", m.floored, m.maspe);
    Ok(())
}
