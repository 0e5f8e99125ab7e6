//! Kronecker products applied through mode products: matvec, solve and
//! log-determinant without forming the full matrix, checked against dense.
//!
//! cargo run --release --example kronecker_algebra

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tvgp::kron::{kron_all, KroneckerMatrix};
use tvgp::tensor::{unvec, vec, OutputTensor};

fn spd(r: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(r, r, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(r, r)
}

fn main() -> tvgp::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let dims = [4, 3, 5];
    let factors: Vec<DMatrix<f64>> = dims.iter().map(|&r| spd(r, &mut rng)).collect();
    let k = KroneckerMatrix::new(factors.clone())?;

    // vec order is last index fastest
    let x = OutputTensor::from_fn(dims.to_vec(), |i| (100 * i[0] + 10 * i[1] + i[2]) as f64)?;
    println!("x[1, 2, 3] = {} sits at vec position {}", x.get(&[1, 2, 3]), x.flat_index(&[1, 2, 3]));
    assert_eq!(unvec(&dims, &vec(&x))?, x);

    let v: Vec<f64> = (0..k.size()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let fast = k.matvec(&v)?;
    let dense = kron_all(&factors.iter().collect::<Vec<_>>());
    let slow = &dense * DVector::from_column_slice(&v);
    let err = fast.iter().zip(slow.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("matvec of a {n}x{n} product: max deviation from dense {err:.2e}", n = k.size());

    let back = k.solve(&fast)?;
    let err = back.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("solve(matvec(v)) recovers v to {err:.2e}");

    let logdet = k.cholesky()?.ln_determinant();
    let dense_logdet = dense.cholesky().expect("SPD").determinant().ln();
    println!("log-determinant {logdet:.10} (dense {dense_logdet:.10})");
    Ok(())
}
