//! Synthetic SEIR patch model with daily commuting.
//!
//! Residents are tracked by home patch. Each day has a work half-step, in
//! which commuters mix with the population present at their work patch, and
//! a home half-step, in which everyone mixes at home. Transitions use
//! probabilities `1 - exp(-rate · dt)` with `dt = 1/2`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::design::Bound;
use crate::error::{dim_check, Error, Result};
use crate::tensor::OutputTensor;

const NETWORK_CSV: &str = include_str!("../../data/seir_network.csv");

/// Fraction of each patch that commutes in the bundled network.
pub const COMMUTING_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct SeirPatchConfig {
    pub populations: Vec<f64>,
    /// `commuters[(a, b)]` people living in `a` work in `b`.
    pub commuters: DMatrix<f64>,
    pub seed_patch: usize,
    pub initial_infected: f64,
    pub days: usize,
    pub bounds: Vec<Bound>,
}

impl Default for SeirPatchConfig {
    fn default() -> Self {
        let (populations, commuters, seed_patch) =
            parse_network(NETWORK_CSV).expect("bundled network is valid");
        Self {
            populations,
            commuters,
            seed_patch,
            initial_infected: 100.0,
            days: 150,
            bounds: default_bounds(),
        }
    }
}

pub fn default_bounds() -> Vec<Bound> {
    vec![
        Bound::new(1.0, 2.0),
        Bound::new(0.25, 1.0),
        Bound::new(0.25, 1.0),
    ]
}

impl SeirPatchConfig {
    pub fn patches(&self) -> usize {
        self.populations.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        vec![self.patches(), self.days]
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.patches();
        dim_check("commuter rows", p, self.commuters.nrows())?;
        dim_check("commuter columns", p, self.commuters.ncols())?;
        if self.seed_patch >= p {
            return Err(Error::Config(format!("seed patch {} out of range", self.seed_patch)));
        }
        for a in 0..p {
            if !(self.populations[a] > 0.0) {
                return Err(Error::Config(format!("patch {a} has no population")));
            }
            let out: f64 = (0..p).filter(|&b| b != a).map(|b| self.commuters[(a, b)]).sum();
            if self.commuters.row(a).iter().any(|c| *c < 0.0) || out > self.populations[a] {
                return Err(Error::Config(format!("invalid commuter flows from patch {a}")));
            }
        }
        if self.initial_infected > self.populations[self.seed_patch] {
            return Err(Error::Config("more initial infections than people".into()));
        }
        Ok(())
    }
}

/// Seeded random network: patch sizes, and commuter flows decaying with
/// distance along a hidden chain of patches, scaled so `COMMUTING_FRACTION`
/// of every patch commutes. The epidemic is seeded at one end of the chain.
pub fn generate_network(patches: usize, seed: u64) -> (Vec<f64>, DMatrix<f64>, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let populations: Vec<f64> = (0..patches)
        .map(|_| (rng.random_range(20_000.0f64..200_000.0)).round())
        .collect();
    let mut order: Vec<usize> = (0..patches).collect();
    for i in (1..patches).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let mut position = vec![0usize; patches];
    for (k, &a) in order.iter().enumerate() {
        position[a] = k;
    }
    let mut commuters = DMatrix::zeros(patches, patches);
    for a in 0..patches {
        let weights: Vec<f64> = (0..patches)
            .map(|b| {
                if a == b {
                    0.0
                } else {
                    let d = position[a].abs_diff(position[b]) as f64;
                    (-d / 0.7).exp() * rng.random_range(0.5..1.5)
                }
            })
            .collect();
        let total: f64 = weights.iter().sum();
        for b in 0..patches {
            commuters[(a, b)] = COMMUTING_FRACTION * populations[a] * weights[b] / total;
        }
    }
    (populations, commuters, order[0])
}

/// CSV with header `patch,population,seed,to_0,...`; one row per home patch.
pub fn network_csv(populations: &[f64], commuters: &DMatrix<f64>, seed_patch: usize) -> String {
    let p = populations.len();
    let mut out = String::from("patch,population,seed");
    for b in 0..p {
        out.push_str(&format!(",to_{b}"));
    }
    out.push('\n');
    for a in 0..p {
        out.push_str(&format!("{a},{:e},{}", populations[a], u8::from(a == seed_patch)));
        for b in 0..p {
            out.push_str(&format!(",{:e}", commuters[(a, b)]));
        }
        out.push('\n');
    }
    out
}

pub fn parse_network(text: &str) -> Result<(Vec<f64>, DMatrix<f64>, usize)> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let vals = rec
            .iter()
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Config(format!("network csv: {e}")))?;
        rows.push(vals);
    }
    let p = rows.len();
    let mut populations = Vec::with_capacity(p);
    let mut commuters = DMatrix::zeros(p, p);
    let mut seed = None;
    for (a, r) in rows.iter().enumerate() {
        dim_check("network csv columns", p + 3, r.len())?;
        populations.push(r[1]);
        if r[2] != 0.0 {
            seed = Some(a);
        }
        for b in 0..p {
            commuters[(a, b)] = r[3 + b];
        }
    }
    let seed = seed.ok_or_else(|| Error::Config("network csv marks no seed patch".into()))?;
    Ok((populations, commuters, seed))
}

#[derive(Debug, Clone)]
struct State {
    s: Vec<f64>,
    e: Vec<f64>,
    i: Vec<f64>,
    r: Vec<f64>,
}

/// Daily infected counts per patch, shape `(patches, days)`, for rates
/// `x = (β, α, γ)`.
pub fn seir_simulate(x: &[f64], cfg: &SeirPatchConfig) -> Result<OutputTensor> {
    Ok(seir_trajectory(x, cfg)?.infected)
}

/// Full compartment trajectories, each of shape `(patches, days)`.
#[derive(Debug, Clone)]
pub struct SeirTrajectory {
    pub susceptible: OutputTensor,
    pub exposed: OutputTensor,
    pub infected: OutputTensor,
    pub recovered: OutputTensor,
}

pub fn seir_trajectory(x: &[f64], cfg: &SeirPatchConfig) -> Result<SeirTrajectory> {
    dim_check("SEIR input", 3, x.len())?;
    cfg.validate()?;
    for (v, b) in x.iter().zip(&cfg.bounds) {
        if *v < b.lo || *v > b.hi {
            log::warn!("rate {v} outside [{}, {}]", b.lo, b.hi);
        }
    }
    let (beta, alpha, gamma) = (x[0], x[1], x[2]);
    let p = cfg.patches();
    let pop = &cfg.populations;
    // share of home patch a present at b during work
    let mix = DMatrix::from_fn(p, p, |a, b| {
        if a == b {
            1.0 - (0..p).filter(|&c| c != a).map(|c| cfg.commuters[(a, c)]).sum::<f64>() / pop[a]
        } else {
            cfg.commuters[(a, b)] / pop[a]
        }
    });
    let mut st = State {
        s: pop.clone(),
        e: vec![0.0; p],
        i: vec![0.0; p],
        r: vec![0.0; p],
    };
    st.s[cfg.seed_patch] -= cfg.initial_infected;
    st.i[cfg.seed_patch] = cfg.initial_infected;
    let dt = 0.5;
    let p_ei = 1.0 - (-alpha * dt).exp();
    let p_ir = 1.0 - (-gamma * dt).exp();
    let dims = cfg.dims();
    let mut traj = [
        vec![0.0; p * cfg.days],
        vec![0.0; p * cfg.days],
        vec![0.0; p * cfg.days],
        vec![0.0; p * cfg.days],
    ];
    for day in 0..cfg.days {
        for phase in 0..2 {
            let infection: Vec<f64> = if phase == 0 {
                let present: Vec<f64> =
                    (0..p).map(|b| (0..p).map(|a| mix[(a, b)] * pop[a]).sum()).collect();
                let inf: Vec<f64> =
                    (0..p).map(|b| (0..p).map(|a| mix[(a, b)] * st.i[a]).sum()).collect();
                let p_inf: Vec<f64> = (0..p)
                    .map(|b| {
                        if present[b] > 0.0 {
                            1.0 - (-beta * inf[b] / present[b] * dt).exp()
                        } else {
                            0.0
                        }
                    })
                    .collect();
                (0..p)
                    .map(|a| st.s[a] * (0..p).map(|b| mix[(a, b)] * p_inf[b]).sum::<f64>())
                    .collect()
            } else {
                (0..p)
                    .map(|a| st.s[a] * (1.0 - (-beta * st.i[a] / pop[a] * dt).exp()))
                    .collect()
            };
            for a in 0..p {
                let se = infection[a];
                let ei = st.e[a] * p_ei;
                let ir = st.i[a] * p_ir;
                st.s[a] -= se;
                st.e[a] += se - ei;
                st.i[a] += ei - ir;
                st.r[a] += ir;
                if st.s[a] < 0.0 || st.e[a] < 0.0 || st.i[a] < 0.0 {
                    return Err(Error::Numerical(format!(
                        "negative compartment in patch {a} on day {day}; reduce the step"
                    )));
                }
            }
        }
        for a in 0..p {
            let k = a * cfg.days + day;
            traj[0][k] = st.s[a];
            traj[1][k] = st.e[a];
            traj[2][k] = st.i[a];
            traj[3][k] = st.r[a];
        }
    }
    let [s, e, i, r] = traj;
    Ok(SeirTrajectory {
        susceptible: OutputTensor::new(dims.clone(), s)?,
        exposed: OutputTensor::new(dims.clone(), e)?,
        infected: OutputTensor::new(dims.clone(), i)?,
        recovered: OutputTensor::new(dims, r)?,
    })
}

/// Ranks patches (1-based) by the time their output peaks, from a training
/// stack of shape `(n, patches, times)`.
///
/// Peaks take the earliest maximizing time. Two patches tied in one run are
/// compatible with either order; a strict reversal between runs is an error.
pub fn rank_spatial_coordinate(outputs: &OutputTensor) -> Result<Vec<usize>> {
    if outputs.order() != 3 {
        return Err(Error::InvalidShape {
            dims: outputs.dims().to_vec(),
            reason: "expected a (runs, patches, times) stack".into(),
        });
    }
    let (n, p, t) = (outputs.dims()[0], outputs.dims()[1], outputs.dims()[2]);
    let peaks: Vec<Vec<usize>> = (0..n)
        .map(|j| {
            (0..p)
                .map(|a| {
                    let mut best = 0;
                    for k in 1..t {
                        if outputs.get(&[j, a, k]) > outputs.get(&[j, a, best]) {
                            best = k;
                        }
                    }
                    best
                })
                .collect()
        })
        .collect();
    for a in 0..p {
        for b in a + 1..p {
            let before = peaks.iter().position(|pk| pk[a] < pk[b]);
            let after = peaks.iter().position(|pk| pk[a] > pk[b]);
            if let (Some(r1), Some(r2)) = (before, after) {
                return Err(Error::InconsistentOrdering {
                    a,
                    b,
                    run: r1.max(r2),
                });
            }
            if peaks.iter().any(|pk| pk[a] == pk[b]) {
                log::warn!("patches {a} and {b} peak together in some run");
            }
        }
    }
    let mut order: Vec<usize> = (0..p).collect();
    let totals: Vec<usize> = (0..p).map(|a| peaks.iter().map(|pk| pk[a]).sum()).collect();
    order.sort_by_key(|&a| (totals[a], a));
    let mut rank = vec![0; p];
    for (k, &a) in order.iter().enumerate() {
        rank[a] = k + 1;
    }
    Ok(rank)
}
