//! A tensor-variate GP conditioned on a few runs with a known
//! coregionalization: posterior mean, updated kernel and draws.
//!
//! cargo run --release --example tvgp_posterior

use std::sync::Arc;

use nalgebra::DMatrix;

use tvgp::gp::{condition, TvGpPrior, ZeroMean};
use tvgp::kernels::CorrelationSpec;
use tvgp::kron::KroneckerMatrix;
use tvgp::tensor::OutputTensor;

fn ar1(r: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, r, |i, j| rho.powi((i as i32 - j as i32).abs()))
}

fn main() -> tvgp::Result<()> {
    let dims = vec![3, 6];
    let prior = TvGpPrior::new(
        Arc::new(ZeroMean::new(dims.clone())),
        CorrelationSpec::gaussian(vec![0.6])?,
        KroneckerMatrix::new(vec![ar1(3, 0.5), ar1(6, 0.9)])?,
    )?;
    let inputs = DMatrix::from_column_slice(4, 1, &[-0.9, -0.3, 0.2, 0.8]);
    let outputs = OutputTensor::from_fn(vec![4, 3, 6], |i| {
        let x: f64 = inputs[(i[0], 0)];
        (3.0 * x).sin() * (1.0 + i[1] as f64) + 0.1 * i[2] as f64
    })?;
    let post = condition(prior, &inputs, &outputs)?;

    for x in [-0.3, 0.0, 0.5, 2.0] {
        let mean = post.predict_mean(&[x])?;
        let kstar = post.updated_kernel(&[x], &[x])?;
        println!("x = {x:5.2}: kappa* = {kstar:.4}, mean[1, 0] = {:8.4}", mean.get(&[1, 0]));
    }

    let draws: Vec<OutputTensor> = (0..500).map(|s| post.sample(&[0.0], s)).collect::<tvgp::Result<_>>()?;
    let mean = post.predict_mean(&[0.0])?;
    let var = post.updated_kernel(&[0.0], &[0.0])?;
    let emp = draws.iter().map(|d| (d.get(&[1, 0]) - mean.get(&[1, 0])).powi(2)).sum::<f64>() / draws.len() as f64;
    println!("draw variance at (1, 0): {emp:.4} vs kappa* Sigma = {var:.4}");
    Ok(())
}
