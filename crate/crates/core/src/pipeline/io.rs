//! CSV artifacts. Every file has a header row and floats carry 17
//! significant digits so values survive a round trip exactly.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;

use crate::design::{Bound, Design};
use crate::diagnostics::PointRecord;
use crate::error::{Error, Result};
use crate::predictive::PredictiveDistribution;
use crate::tensor::OutputTensor;

use super::study::Simulated;

/// `v` with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad number {s:?} in column {what}")))
}

fn parse_usize(s: &str, what: &str) -> Result<usize> {
    s.trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad index {s:?} in column {what}")))
}

struct Table {
    headers: Vec<String>,
    rows: Vec<csv::StringRecord>,
}

impl Table {
    fn read(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let headers = rdr.headers()?.iter().map(String::from).collect();
        let rows = rdr.records().collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Self { headers, rows })
    }

    fn column(&self, name: &str, path: &Path) -> Result<usize> {
        self.headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::Config(format!("{}: missing column {name}", path.display()))
        })
    }
}

/// Groups `(set, run, ...)` rows by set in order of first appearance.
fn group_sets<T>(items: Vec<(String, T)>) -> Vec<(String, Vec<T>)> {
    let mut out: Vec<(String, Vec<T>)> = Vec::new();
    for (set, item) in items {
        match out.iter_mut().find(|(s, _)| *s == set) {
            Some((_, v)) => v.push(item),
            None => out.push((set, vec![item])),
        }
    }
    out
}

/// Writes designs as `set, run_id, x1..xp, xs1..xsp` (raw then scaled).
pub fn write_design_csv(path: &Path, sets: &[(&str, &Design)]) -> Result<()> {
    let p = sets.first().map_or(0, |(_, d)| d.p());
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["set".to_string(), "run_id".to_string()];
    header.extend((1..=p).map(|h| format!("x{h}")));
    header.extend((1..=p).map(|h| format!("xs{h}")));
    w.write_record(&header)?;
    for (set, design) in sets {
        if design.p() != p {
            return Err(Error::DimensionMismatch {
                context: "design columns".into(),
                expected: p,
                got: design.p(),
            });
        }
        for j in 0..design.n() {
            let mut rec = vec![set.to_string(), j.to_string()];
            rec.extend(design.raw.row(j).iter().map(|v| fmt_f64(*v)));
            rec.extend(design.scaled.row(j).iter().map(|v| fmt_f64(*v)));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads designs written by [`write_design_csv`], rescaling the raw columns
/// with `bounds`.
pub fn read_design_csv(path: &Path, bounds: &[Bound]) -> Result<Vec<(String, Design)>> {
    let t = Table::read(path)?;
    let p = bounds.len();
    if t.headers.len() != 2 + 2 * p {
        return Err(Error::Config(format!(
            "{}: expected {} columns for {p} inputs, found {}",
            path.display(),
            2 + 2 * p,
            t.headers.len()
        )));
    }
    let (set_col, run_col) = (t.column("set", path)?, t.column("run_id", path)?);
    let mut items = Vec::with_capacity(t.rows.len());
    for r in &t.rows {
        let run = parse_usize(&r[run_col], "run_id")?;
        let x = (0..p)
            .map(|h| parse_f64(&r[2 + h], &t.headers[2 + h]))
            .collect::<Result<Vec<_>>>()?;
        items.push((r[set_col].to_string(), (run, x)));
    }
    group_sets(items)
        .into_iter()
        .map(|(set, rows)| {
            for (k, (run, _)) in rows.iter().enumerate() {
                if *run != k {
                    return Err(Error::Config(format!(
                        "{}: set {set} has run_id {run} at position {k}",
                        path.display()
                    )));
                }
            }
            let raw = DMatrix::from_fn(rows.len(), p, |j, h| rows[j].1[h]);
            Ok((set, Design::from_raw(raw, bounds.to_vec())?))
        })
        .collect()
}

/// Writes simulator output as `set, run_id, i1, i2, s, t, y, f`.
pub fn write_sims_csv(
    path: &Path,
    sets: &[(&str, &Simulated)],
    coords: &(Vec<f64>, Vec<f64>),
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["set", "run_id", "i1", "i2", "s", "t", "y", "f"])?;
    for (set, sims) in sets {
        let dims = sims.raw.dims();
        if dims.len() != 3 || dims[1] != coords.0.len() || dims[2] != coords.1.len() {
            return Err(Error::InvalidShape {
                dims: dims.to_vec(),
                reason: "simulation CSV needs (runs, space, time) stacks matching the grid".into(),
            });
        }
        for j in 0..dims[0] {
            for a in 0..dims[1] {
                for b in 0..dims[2] {
                    let idx = [j, a, b];
                    w.write_record(&[
                        set.to_string(),
                        j.to_string(),
                        a.to_string(),
                        b.to_string(),
                        fmt_f64(coords.0[a]),
                        fmt_f64(coords.1[b]),
                        fmt_f64(sims.raw.get(&idx)),
                        fmt_f64(sims.transformed.get(&idx)),
                    ])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn assemble_stack(rows: &[(Vec<usize>, Vec<f64>)], width: usize) -> Result<Vec<OutputTensor>> {
    let order = rows.first().map_or(0, |r| r.0.len());
    let mut dims = vec![0; order];
    for (idx, _) in rows {
        if idx.len() != order {
            return Err(Error::Config("rows with differing index counts".into()));
        }
        for (d, i) in dims.iter_mut().zip(idx) {
            *d = (*d).max(i + 1);
        }
    }
    let total: usize = dims.iter().product();
    if rows.len() != total {
        return Err(Error::Config(format!(
            "{} rows do not fill a grid of shape {dims:?}",
            rows.len()
        )));
    }
    let mut out = vec![vec![f64::NAN; total]; width];
    let mut seen = vec![false; total];
    for (idx, vals) in rows {
        let k = idx.iter().zip(&dims).fold(0, |acc, (i, d)| acc * d + i);
        if std::mem::replace(&mut seen[k], true) {
            return Err(Error::Config(format!("duplicate row for index {idx:?}")));
        }
        for (c, v) in vals.iter().enumerate() {
            out[c][k] = *v;
        }
    }
    out.into_iter().map(|data| OutputTensor::new(dims.clone(), data)).collect()
}

/// Reads simulator output written by [`write_sims_csv`], one stack per set.
pub fn read_sims_csv(path: &Path) -> Result<Vec<(String, Simulated)>> {
    let t = Table::read(path)?;
    let cols = ["set", "run_id", "i1", "i2", "y", "f"]
        .iter()
        .map(|c| t.column(c, path))
        .collect::<Result<Vec<_>>>()?;
    let mut items = Vec::with_capacity(t.rows.len());
    for r in &t.rows {
        let idx = vec![
            parse_usize(&r[cols[1]], "run_id")?,
            parse_usize(&r[cols[2]], "i1")?,
            parse_usize(&r[cols[3]], "i2")?,
        ];
        let vals = vec![parse_f64(&r[cols[4]], "y")?, parse_f64(&r[cols[5]], "f")?];
        items.push((r[cols[0]].to_string(), (idx, vals)));
    }
    group_sets(items)
        .into_iter()
        .map(|(set, rows)| {
            let mut stacks = assemble_stack(&rows, 2)?;
            let transformed = stacks.pop().expect("two columns");
            let raw = stacks.pop().expect("two columns");
            Ok((set, Simulated { raw, transformed }))
        })
        .collect()
}

/// Picks one named set out of a grouped file.
pub fn take_set<T>(sets: Vec<(String, T)>, name: &str, path: &Path) -> Result<T> {
    sets.into_iter()
        .find(|(s, _)| s == name)
        .map(|(_, v)| v)
        .ok_or_else(|| Error::Config(format!("{}: no rows for set {name}", path.display())))
}

fn index_header(order: usize) -> Vec<String> {
    (1..=order).map(|z| format!("i{z}")).collect()
}

fn unravel(mut k: usize, dims: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; dims.len()];
    for z in (0..dims.len()).rev() {
        idx[z] = k % dims[z];
        k /= dims[z];
    }
    idx
}

/// Writes predictive means and variances as
/// `emulator, run_id, i1, ..., im, mean, variance`.
pub fn write_predictions_csv(path: &Path, preds: &[(&str, &PredictiveDistribution)]) -> Result<()> {
    let order = preds
        .iter()
        .find_map(|(_, p)| p.means.first().map(|m| m.order()))
        .unwrap_or(2);
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["emulator".to_string(), "run_id".to_string()];
    header.extend(index_header(order));
    header.extend(["mean".to_string(), "variance".to_string()]);
    w.write_record(&header)?;
    for (name, pred) in preds {
        for (j, (m, v)) in pred.means.iter().zip(&pred.variances).enumerate() {
            if m.order() != order {
                return Err(Error::InvalidShape {
                    dims: m.dims().to_vec(),
                    reason: format!("expected order-{order} predictions"),
                });
            }
            for k in 0..m.len() {
                let mut rec = vec![name.to_string(), j.to_string()];
                rec.extend(unravel(k, m.dims()).iter().map(|i| i.to_string()));
                rec.push(fmt_f64(m.data()[k]));
                rec.push(fmt_f64(v.data()[k]));
                w.write_record(&rec)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads predictions written by [`write_predictions_csv`], keyed by emulator.
pub fn read_predictions_csv(path: &Path) -> Result<BTreeMap<String, PredictiveDistribution>> {
    let t = Table::read(path)?;
    let em = t.column("emulator", path)?;
    let run = t.column("run_id", path)?;
    let (mean, var) = (t.column("mean", path)?, t.column("variance", path)?);
    let idx_cols: Vec<usize> = t
        .headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with('i') && h[1..].parse::<usize>().is_ok())
        .map(|(c, _)| c)
        .collect();
    let mut items = Vec::with_capacity(t.rows.len());
    for r in &t.rows {
        let mut idx = vec![parse_usize(&r[run], "run_id")?];
        for &c in &idx_cols {
            idx.push(parse_usize(&r[c], &t.headers[c])?);
        }
        let vals = vec![parse_f64(&r[mean], "mean")?, parse_f64(&r[var], "variance")?];
        items.push((r[em].to_string(), (idx, vals)));
    }
    let mut out = BTreeMap::new();
    for (name, rows) in group_sets(items) {
        let mut stacks = assemble_stack(&rows, 2)?;
        let variances = stacks.pop().expect("two columns");
        let means = stacks.pop().expect("two columns");
        let n = means.dims()[0];
        out.insert(
            name,
            PredictiveDistribution {
                means: (0..n).map(|j| means.slab(j)).collect(),
                variances: (0..n).map(|j| variances.slab(j)).collect(),
                dof: None,
            },
        );
    }
    Ok(out)
}

/// Writes per-point diagnostic records as
/// `emulator, run_id, i1, ..., im, truth, mean, variance, standardized_error`.
pub fn write_points_csv(path: &Path, points: &[(&str, &[PointRecord])]) -> Result<()> {
    let order = points
        .iter()
        .find_map(|(_, p)| p.first().map(|r| r.location.len()))
        .unwrap_or(2);
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["emulator".to_string(), "run_id".to_string()];
    header.extend(index_header(order));
    header.extend(
        ["truth", "mean", "variance", "standardized_error"]
            .iter()
            .map(|s| s.to_string()),
    );
    w.write_record(&header)?;
    for (name, recs) in points {
        for p in recs.iter() {
            let mut rec = vec![name.to_string(), p.run.to_string()];
            rec.extend(p.location.iter().map(|i| i.to_string()));
            rec.extend([p.truth, p.mean, p.variance, p.standardized_error].map(fmt_f64));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}
