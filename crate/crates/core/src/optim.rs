//! Bound-constrained limited-memory BFGS with multistart.
//!
//! Projected-gradient variant: the quasi-Newton direction is computed on the
//! free variables, steps are projected back onto the box and accepted by an
//! Armijo backtracking search along the projected path.

use std::collections::VecDeque;

use rand::SeedableRng;
use rayon::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::design::latin_hypercube;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LbfgsbOptions {
    pub memory: usize,
    pub max_iter: usize,
    /// Convergence threshold on the infinity norm of the projected gradient.
    pub pgtol: f64,
    /// Convergence threshold on the relative decrease of the objective.
    pub ftol: f64,
    pub max_backtracks: usize,
}

impl Default for LbfgsbOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iter: 200,
            pgtol: 1e-5,
            ftol: 1e-10,
            max_backtracks: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    ProjectedGradient,
    RelativeDecrease,
    LineSearchStalled,
    MaxIterations,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
}

impl OptimResult {
    pub fn converged(&self) -> bool {
        self.termination != Termination::MaxIterations
    }
}

fn project(x: &mut [f64], bounds: &[(f64, f64)]) {
    for (v, &(lo, hi)) in x.iter_mut().zip(bounds) {
        *v = v.clamp(lo, hi);
    }
}

fn projected_gradient(x: &[f64], g: &[f64], bounds: &[(f64, f64)]) -> Vec<f64> {
    x.iter()
        .zip(g)
        .zip(bounds)
        .map(|((&xi, &gi), &(lo, hi))| {
            if (xi <= lo && gi > 0.0) || (xi >= hi && gi < 0.0) {
                0.0
            } else {
                gi
            }
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `objective` (returning value and gradient) over the box.
///
/// Objective errors and non-finite values encountered during the line search
/// are treated as `+inf`; at the starting point they are reported.
pub fn minimize<F>(
    mut objective: F,
    x0: &[f64],
    bounds: &[(f64, f64)],
    opts: &LbfgsbOptions,
) -> Result<OptimResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let n = x0.len();
    if bounds.len() != n {
        return Err(Error::DimensionMismatch {
            context: "optimizer bounds".into(),
            expected: n,
            got: bounds.len(),
        });
    }
    let mut x = x0.to_vec();
    project(&mut x, bounds);
    let (mut f, mut g) = match objective(&x) {
        Ok((f, g)) if f.is_finite() && g.iter().all(|v| v.is_finite()) => (f, g),
        _ => return Err(Error::NonFiniteStart { theta: x }),
    };
    let mut evaluations = 1;
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        let pg = projected_gradient(&x, &g, bounds);
        if pg.iter().fold(0.0f64, |m, v| m.max(v.abs())) < opts.pgtol {
            termination = Termination::ProjectedGradient;
            break;
        }
        iterations += 1;

        let free: Vec<bool> = pg.iter().zip(&g).map(|(p, gi)| *p != 0.0 || *gi == 0.0).collect();
        let mut q = pg.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            for qi in q.iter_mut() {
                *qi *= gamma;
            }
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        let mut d: Vec<f64> = q
            .iter()
            .zip(&free)
            .map(|(qi, &fr)| if fr { -qi } else { 0.0 })
            .collect();
        if dot(&d, &pg) >= 0.0 {
            history.clear();
            d = pg.iter().map(|v| -v).collect();
        }

        let mut step = if history.is_empty() {
            let dmax = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            (1.0 / dmax).min(1.0)
        } else {
            1.0
        };
        let mut accepted = None;
        for _ in 0..opts.max_backtracks {
            let mut trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
            project(&mut trial, bounds);
            let moved: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
            if moved.iter().all(|m| *m == 0.0) {
                break;
            }
            evaluations += 1;
            if let Ok((ft, gt)) = objective(&trial) {
                if ft.is_finite()
                    && gt.iter().all(|v| v.is_finite())
                    && ft <= f + 1e-4 * dot(&g, &moved)
                {
                    accepted = Some((trial, ft, gt, moved));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((x_new, f_new, g_new, s)) = accepted else {
            termination = Termination::LineSearchStalled;
            break;
        };
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 * dot(&y, &y) {
            if history.len() == opts.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        let decrease = f - f_new;
        x = x_new;
        g = g_new;
        let scale = f.abs().max(f_new.abs()).max(1.0);
        f = f_new;
        if decrease <= opts.ftol * scale {
            termination = Termination::RelativeDecrease;
            break;
        }
    }
    Ok(OptimResult {
        x,
        f,
        grad: g,
        iterations,
        evaluations,
        termination,
    })
}

/// One multistart run: where it began and where it ended.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StartTrace {
    pub initial_x: Vec<f64>,
    pub initial_f: f64,
    pub final_x: Vec<f64>,
    pub final_f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultistartResult {
    pub best: OptimResult,
    pub best_start: usize,
    pub starts: Vec<StartTrace>,
}

/// Multistart settings: starts are a seeded Latin hypercube in `start_box`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultistartOptions {
    pub starts: usize,
    pub seed: u64,
    pub local: LbfgsbOptions,
}

impl Default for MultistartOptions {
    fn default() -> Self {
        Self {
            starts: 8,
            seed: 0,
            local: LbfgsbOptions::default(),
        }
    }
}

pub fn start_points(start_box: &[(f64, f64)], count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lhs = latin_hypercube(count, start_box.len(), &mut rng);
    (0..count)
        .map(|i| {
            start_box
                .iter()
                .enumerate()
                .map(|(h, &(lo, hi))| lo + (lhs[(i, h)] + 1.0) * 0.5 * (hi - lo))
                .collect()
        })
        .collect()
}

/// Minimizes from several starting points and keeps the best terminal point.
///
/// Starts run in parallel; the result does not depend on scheduling since
/// ties are broken by start index.
pub fn multistart<F>(
    objective: F,
    bounds: &[(f64, f64)],
    start_box: &[(f64, f64)],
    opts: &MultistartOptions,
) -> Result<MultistartResult>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)> + Sync,
{
    let starts = start_points(start_box, opts.starts.max(1), opts.seed);
    let runs: Vec<Result<(StartTrace, OptimResult)>> = starts
        .into_par_iter()
        .map(|x0| {
            let initial_f = match objective(&x0) {
                Ok((f, _)) if f.is_finite() => f,
                _ => return Err(Error::NonFiniteStart { theta: x0 }),
            };
            let res = minimize(&objective, &x0, bounds, &opts.local)?;
            Ok((
                StartTrace {
                    initial_x: x0,
                    initial_f,
                    final_x: res.x.clone(),
                    final_f: res.f,
                    iterations: res.iterations,
                    evaluations: res.evaluations,
                    termination: res.termination,
                },
                res,
            ))
        })
        .collect();
    let mut best: Option<(usize, OptimResult)> = None;
    let mut traces = Vec::with_capacity(runs.len());
    for (i, run) in runs.into_iter().enumerate() {
        let (trace, res) = run?;
        traces.push(trace);
        if best.as_ref().map_or(true, |(_, b)| res.f < b.f) {
            best = Some((i, res));
        }
    }
    let (best_start, best) = best.expect("at least one start");
    if traces.iter().all(|t| t.termination == Termination::MaxIterations) {
        return Err(Error::NonConvergence { best: best.f });
    }
    Ok(MultistartResult {
        best,
        best_start,
        starts: traces,
    })
}
