//! Predictive diagnostics: MASPE, RMSPE and MGES over (run, location) points.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim_check, Error, Result};
use crate::predictive::PredictiveDistribution;
use crate::tensor::OutputTensor;

/// Variances are floored here before division and logs.
pub const VARIANCE_FLOOR: f64 = 1e-12;

fn check_lengths(truths: &[f64], means: &[f64], variances: Option<&[f64]>) -> Result<()> {
    if truths.is_empty() {
        return Err(Error::InvalidShape {
            dims: vec![0],
            reason: "diagnostics need at least one point".into(),
        });
    }
    dim_check("predictive means", truths.len(), means.len())?;
    if let Some(v) = variances {
        dim_check("predictive variances", truths.len(), v.len())?;
        if let Some(i) = v.iter().position(|x| !(*x > 0.0)) {
            return Err(Error::Numerical(format!(
                "predictive variance at point {i} is {} (must be positive)",
                v[i]
            )));
        }
    }
    Ok(())
}

/// Mean absolute standardized prediction error, `mean |f - μ| / √ν`.
pub fn maspe(truths: &[f64], means: &[f64], variances: &[f64]) -> Result<f64> {
    check_lengths(truths, means, Some(variances))?;
    let s: f64 = truths
        .iter()
        .zip(means)
        .zip(variances)
        .map(|((f, m), v)| (f - m).abs() / v.sqrt())
        .sum();
    Ok(s / truths.len() as f64)
}

/// Root mean squared prediction error.
pub fn rmspe(truths: &[f64], means: &[f64]) -> Result<f64> {
    check_lengths(truths, means, None)?;
    let s: f64 = truths.iter().zip(means).map(|(f, m)| (f - m) * (f - m)).sum();
    Ok((s / truths.len() as f64).sqrt())
}

/// Mean generalized entropy score, `-mean[(f - μ)²/ν + log ν]`; larger is better.
pub fn mges(truths: &[f64], means: &[f64], variances: &[f64]) -> Result<f64> {
    check_lengths(truths, means, Some(variances))?;
    let s: f64 = truths
        .iter()
        .zip(means)
        .zip(variances)
        .map(|((f, m), v)| (f - m) * (f - m) / v + v.ln())
        .sum();
    Ok(-s / truths.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub maspe: f64,
    pub rmspe: f64,
    pub mges: f64,
    /// Total score `mges · points` in thousands, the scale of tabulated scores.
    pub mges_sum_e3: f64,
    pub points: usize,
    /// Points whose variance was raised to [`VARIANCE_FLOOR`].
    pub floored: usize,
}

impl Metrics {
    pub fn compute(truths: &[f64], means: &[f64], variances: &[f64]) -> Result<Self> {
        let floored = variances.iter().filter(|v| **v < VARIANCE_FLOOR).count();
        let v: Vec<f64> = variances.iter().map(|v| v.max(VARIANCE_FLOOR)).collect();
        let g = mges(truths, means, &v)?;
        Ok(Self {
            maspe: maspe(truths, means, &v)?,
            rmspe: rmspe(truths, means)?,
            mges: g,
            mges_sum_e3: g * truths.len() as f64 / 1000.0,
            points: truths.len(),
            floored,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointRecord {
    pub run: usize,
    /// Location index in each output dimension.
    pub location: Vec<usize>,
    pub truth: f64,
    pub mean: f64,
    pub variance: f64,
    pub standardized_error: f64,
}

/// Full-set metrics, metrics on a random subsample, and the subsample's
/// per-point records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub full: Metrics,
    pub sample: Metrics,
    pub sample_seed: u64,
    pub runs: usize,
    pub output_dims: Vec<usize>,
    pub points: Vec<PointRecord>,
}

struct Flat {
    truths: Vec<f64>,
    means: Vec<f64>,
    variances: Vec<f64>,
    per_run: usize,
}

fn flatten(truths: &[OutputTensor], pred: &PredictiveDistribution) -> Result<Flat> {
    dim_check("diagnostic runs", truths.len(), pred.len())?;
    let per_run = truths.first().map_or(0, |t| t.len());
    let mut flat = Flat {
        truths: Vec::with_capacity(per_run * truths.len()),
        means: Vec::with_capacity(per_run * truths.len()),
        variances: Vec::with_capacity(per_run * truths.len()),
        per_run,
    };
    for ((t, m), v) in truths.iter().zip(&pred.means).zip(&pred.variances) {
        if t.dims() != m.dims() || t.dims() != v.dims() {
            return Err(Error::InvalidShape {
                dims: m.dims().to_vec(),
                reason: format!("predictions must match truth dims {:?}", t.dims()),
            });
        }
        flat.truths.extend_from_slice(t.data());
        flat.means.extend_from_slice(m.data());
        flat.variances.extend_from_slice(v.data());
    }
    Ok(flat)
}

fn unravel(mut k: usize, dims: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; dims.len()];
    for z in (0..dims.len()).rev() {
        idx[z] = k % dims[z];
        k /= dims[z];
    }
    idx
}

/// Uniform sample of `count` (run, location) points without replacement,
/// returned in ascending order so metrics do not depend on draw order.
pub fn sample_indices(total: usize, count: usize, seed: u64) -> Result<Vec<usize>> {
    if count > total {
        return Err(Error::InvalidShape {
            dims: vec![total],
            reason: format!("cannot sample {count} points from {total}"),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, total, count).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Metrics over a random subsample of `count` points, with per-point records.
pub fn sample_diag_points(
    truths: &[OutputTensor],
    pred: &PredictiveDistribution,
    count: usize,
    seed: u64,
) -> Result<(Metrics, Vec<PointRecord>)> {
    let flat = flatten(truths, pred)?;
    let idx = sample_indices(flat.truths.len(), count, seed)?;
    let dims = truths[0].dims().to_vec();
    let pick = |v: &[f64]| idx.iter().map(|&k| v[k]).collect::<Vec<f64>>();
    let (t, m, v) = (pick(&flat.truths), pick(&flat.means), pick(&flat.variances));
    let metrics = Metrics::compute(&t, &m, &v)?;
    let records = idx
        .iter()
        .map(|&k| {
            let var = flat.variances[k].max(VARIANCE_FLOOR);
            PointRecord {
                run: k / flat.per_run,
                location: unravel(k % flat.per_run, &dims),
                truth: flat.truths[k],
                mean: flat.means[k],
                variance: flat.variances[k],
                standardized_error: (flat.truths[k] - flat.means[k]) / var.sqrt(),
            }
        })
        .collect();
    Ok((metrics, records))
}

/// Diagnostics over every point, plus a `count`-point subsample (capped at
/// the number of available points).
pub fn diagnose(
    truths: &[OutputTensor],
    pred: &PredictiveDistribution,
    count: usize,
    seed: u64,
) -> Result<DiagnosticReport> {
    let flat = flatten(truths, pred)?;
    let full = Metrics::compute(&flat.truths, &flat.means, &flat.variances)?;
    let count = count.min(flat.truths.len());
    let (sample, points) = sample_diag_points(truths, pred, count, seed)?;
    Ok(DiagnosticReport {
        full,
        sample,
        sample_seed: seed,
        runs: truths.len(),
        output_dims: truths[0].dims().to_vec(),
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn hand_values() {
        assert_eq!(maspe(&[3.0], &[1.0], &[4.0]).unwrap(), 1.0);
        assert!((rmspe(&[3.0, 4.0], &[0.0, 0.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
        assert!((mges(&[1.0], &[1.0], &[std::f64::consts::E]).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_predictions() {
        let f = [0.3, -1.0, 2.0];
        assert_eq!(maspe(&f, &f, &[1.0; 3]).unwrap(), 0.0);
        assert_eq!(rmspe(&f, &f).unwrap(), 0.0);
        assert_eq!(mges(&f, &f, &[1.0; 3]).unwrap(), 0.0);
    }

    #[test]
    fn nonpositive_variance_names_the_point() {
        let err = maspe(&[1.0, 2.0], &[1.0, 2.0], &[1.0, 0.0]).unwrap_err();
        assert!(err.to_string().contains("point 1"));
        assert!(mges(&[1.0], &[1.0], &[-1.0]).is_err());
    }

    #[test]
    fn standard_normal_maspe() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f: Vec<f64> = (0..100_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let m = vec![0.0; f.len()];
        let v = vec![1.0; f.len()];
        let target = (2.0 / std::f64::consts::PI).sqrt();
        assert!((maspe(&f, &m, &v).unwrap() - target).abs() < 0.01);
    }

    #[test]
    fn calibrated_variances_score_better_than_inflated() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 10_000;
        let m: Vec<f64> = (0..n).map(|i| (i as f64 * 0.01).sin()).collect();
        let v: Vec<f64> = (0..n).map(|i| 0.1 + (i % 7) as f64 * 0.05).collect();
        let f: Vec<f64> = m
            .iter()
            .zip(&v)
            .map(|(mu, var)| {
                let z: f64 = StandardNormal.sample(&mut rng);
                mu + var.sqrt() * z
            })
            .collect();
        let inflated: Vec<f64> = v.iter().map(|x| x * 100.0).collect();
        assert!(mges(&f, &m, &v).unwrap() > mges(&f, &m, &inflated).unwrap());
    }

    #[test]
    fn mges_decomposes() {
        let f = [0.2f64, 1.5, -0.7, 3.0];
        let m = [0.0f64, 1.0, -1.0, 2.5];
        let v = [0.5f64, 2.0, 0.1, 1.5];
        let sq: f64 = f.iter().zip(&m).zip(&v).map(|((a, b), c)| (a - b).powi(2) / c).sum::<f64>() / 4.0;
        let lg: f64 = v.iter().map(|x| x.ln()).sum::<f64>() / 4.0;
        assert!((mges(&f, &m, &v).unwrap() - (-sq - lg)).abs() < 1e-12);
    }

    fn toy(seed: u64) -> (Vec<OutputTensor>, PredictiveDistribution) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
        let truths: Vec<OutputTensor> = (0..5)
            .map(|_| OutputTensor::from_fn(vec![3, 4], |_| draw()).unwrap())
            .collect();
        let means = (0..5)
            .map(|_| OutputTensor::from_fn(vec![3, 4], |_| draw()).unwrap())
            .collect();
        let variances = (0..5)
            .map(|_| OutputTensor::from_fn(vec![3, 4], |_| draw().abs() + 0.1).unwrap())
            .collect();
        (
            truths,
            PredictiveDistribution {
                means,
                variances,
                dof: None,
            },
        )
    }

    #[test]
    fn full_sample_is_seed_independent() {
        let (t, p) = toy(3);
        let a = sample_diag_points(&t, &p, 60, 1).unwrap().0;
        let b = sample_diag_points(&t, &p, 60, 99).unwrap().0;
        assert_eq!(a, b);
        let report = diagnose(&t, &p, 60, 5).unwrap();
        assert_eq!(report.full, report.sample);
    }

    #[test]
    fn sampling_is_deterministic_and_bounded() {
        let (t, p) = toy(4);
        let a = sample_diag_points(&t, &p, 20, 7).unwrap();
        assert_eq!(a, sample_diag_points(&t, &p, 20, 7).unwrap());
        assert!(sample_diag_points(&t, &p, 61, 7).is_err());
        let r = &a.1[3];
        assert_eq!(r.truth, t[r.run].get(&r.location));
    }

    #[test]
    fn zero_variances_are_floored_and_counted() {
        let m = Metrics::compute(&[1.0, 2.0], &[1.0, 2.0], &[0.0, 1.0]).unwrap();
        assert_eq!(m.floored, 1);
        assert!(m.mges.is_finite());
    }

    proptest! {
        #[test]
        fn metrics_are_order_invariant(
            pts in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0, 0.01f64..4.0), 2..40),
            seed in 0u64..1000,
        ) {
            let mut shuffled = pts.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let split = |p: &[(f64, f64, f64)]| {
                (p.iter().map(|x| x.0).collect::<Vec<_>>(),
                 p.iter().map(|x| x.1).collect::<Vec<_>>(),
                 p.iter().map(|x| x.2).collect::<Vec<_>>())
            };
            let (f1, m1, v1) = split(&pts);
            let (f2, m2, v2) = split(&shuffled);
            let a = Metrics::compute(&f1, &m1, &v1).unwrap();
            let b = Metrics::compute(&f2, &m2, &v2).unwrap();
            prop_assert!((a.maspe - b.maspe).abs() < 1e-12);
            prop_assert!((a.rmspe - b.rmspe).abs() < 1e-12);
            prop_assert!((a.mges - b.mges).abs() < 1e-10);
        }
    }
}
