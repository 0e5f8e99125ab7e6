//! Diagnostic reports, report comparison and run manifests.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diagnostics::{diagnose, DiagnosticReport, Metrics};
use crate::error::{Error, Result};
use crate::persist::{check_version, FORMAT_VERSION};
use crate::predictive::PredictiveDistribution;
use crate::tensor::OutputTensor;

/// Fitted hyperparameters echoed into a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    /// Correlation lengths per factor, input factor first.
    pub theta: Vec<Vec<f64>>,
    /// Nugget per factor (OPE only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub nugget: Vec<f64>,
    pub log_likelihood: f64,
    /// Plug-in variance (OPE) or mean of the per-location variances (PPE).
    pub sigma2: f64,
    pub jitter: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmulatorReport {
    pub full: Metrics,
    pub sample: Metrics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub format_version: u32,
    pub name: String,
    pub simulator: String,
    /// Training runs, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_n: Option<usize>,
    pub diag_n: usize,
    pub output_dims: Vec<usize>,
    /// Hash of the diagnostic outputs; reports are comparable only when equal.
    pub diagnostic_fingerprint: String,
    pub sample_size: usize,
    pub sample_seed: u64,
    pub emulators: BTreeMap<String, EmulatorReport>,
}

/// SHA-256 over the shape and bit patterns of the diagnostic outputs.
pub fn fingerprint(truths: &[OutputTensor]) -> String {
    let mut h = Sha256::new();
    h.update((truths.len() as u64).to_le_bytes());
    for t in truths {
        for d in t.dims() {
            h.update((*d as u64).to_le_bytes());
        }
        for v in t.data() {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

impl Report {
    /// Diagnoses every emulator against the same truths and subsample.
    pub fn build(
        name: &str,
        simulator: &str,
        train_n: Option<usize>,
        truths: &[OutputTensor],
        preds: &[(&str, &PredictiveDistribution, Option<FitSummary>)],
        sample_size: usize,
        sample_seed: u64,
    ) -> Result<(Self, Vec<(String, DiagnosticReport)>)> {
        let first = truths
            .first()
            .ok_or_else(|| Error::Config("no diagnostic runs".into()))?;
        let mut emulators = BTreeMap::new();
        let mut details = Vec::new();
        for (em, pred, fit) in preds {
            let d = diagnose(truths, pred, sample_size, sample_seed)?;
            emulators.insert(
                em.to_string(),
                EmulatorReport {
                    full: d.full.clone(),
                    sample: d.sample.clone(),
                    fit: fit.clone(),
                },
            );
            details.push((em.to_string(), d));
        }
        let sample_size = details.first().map_or(sample_size, |(_, d)| d.sample.points);
        Ok((
            Self {
                format_version: FORMAT_VERSION,
                name: name.to_string(),
                simulator: simulator.to_string(),
                train_n,
                diag_n: truths.len(),
                output_dims: first.dims().to_vec(),
                diagnostic_fingerprint: fingerprint(truths),
                sample_size,
                sample_seed,
                emulators,
            },
            details,
        ))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Parses a report, naming whatever field is missing or malformed.
    pub fn from_json(text: &str, label: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(text)
            .map_err(|e| Error::Compare(format!("report {label}: {e}")))?;
        check_version(r.format_version, &format!("report {label}"))?;
        Ok(r)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?, &path.display().to_string())
    }

    /// Column label in comparison tables.
    pub fn label(&self) -> String {
        match self.train_n {
            Some(n) => format!("n={n}"),
            None => self.name.clone(),
        }
    }
}

/// Which metric set a comparison reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricSet {
    Full,
    Sample,
}

pub const METRICS: [&str; 4] = ["MASPE", "RMSPE", "MGES", "MGES_sum_e3"];

fn metric(m: &Metrics, name: &str) -> f64 {
    match name {
        "MASPE" => m.maspe,
        "RMSPE" => m.rmspe,
        "MGES" => m.mges,
        "MGES_sum_e3" => m.mges_sum_e3,
        _ => unreachable!("unknown metric {name}"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub emulator: String,
    pub metric: String,
    pub a: f64,
    pub b: f64,
    /// `b - a`.
    pub delta: f64,
}

/// Emulator × design size × metric grid of two reports on one diagnostic set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub labels: [String; 2],
    pub set: MetricSet,
    pub rows: Vec<ComparisonRow>,
}

pub fn compare(a: &Report, b: &Report, set: MetricSet) -> Result<Comparison> {
    if a.diagnostic_fingerprint != b.diagnostic_fingerprint {
        return Err(Error::Compare(format!(
            "diagnostic sets differ ({} vs {})",
            a.diagnostic_fingerprint, b.diagnostic_fingerprint
        )));
    }
    if set == MetricSet::Sample && (a.sample_seed, a.sample_size) != (b.sample_seed, b.sample_size) {
        return Err(Error::Compare("reports use different diagnostic subsamples".into()));
    }
    let mut rows = Vec::new();
    for (em, ra) in &a.emulators {
        let rb = b.emulators.get(em).ok_or_else(|| {
            Error::Compare(format!("emulator {em} missing from report {}", b.name))
        })?;
        let (ma, mb) = match set {
            MetricSet::Full => (&ra.full, &rb.full),
            MetricSet::Sample => (&ra.sample, &rb.sample),
        };
        for name in METRICS {
            let (x, y) = (metric(ma, name), metric(mb, name));
            rows.push(ComparisonRow {
                emulator: em.clone(),
                metric: name.to_string(),
                a: x,
                b: y,
                delta: y - x,
            });
        }
    }
    if let Some(em) = b.emulators.keys().find(|k| !a.emulators.contains_key(*k)) {
        return Err(Error::Compare(format!("emulator {em} missing from report {}", a.name)));
    }
    Ok(Comparison {
        labels: [a.label(), b.label()],
        set,
        rows,
    })
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("emulator,metric,report,value\n");
        for r in &self.rows {
            for (label, v) in [(&self.labels[0], r.a), (&self.labels[1], r.b)] {
                let _ = writeln!(out, "{},{},{},{:.16e}", r.emulator, r.metric, label, v);
            }
            let _ = writeln!(out, "{},{},delta,{:.16e}", r.emulator, r.metric, r.delta);
        }
        out
    }

    /// Metrics as rows and `emulator label` as columns, then the deltas.
    pub fn to_text(&self) -> String {
        let emulators: Vec<&str> = {
            let mut e: Vec<&str> = self.rows.iter().map(|r| r.emulator.as_str()).collect();
            e.dedup();
            e
        };
        let mut header = vec![format!("{:<12}", "metric")];
        for em in &emulators {
            for l in &self.labels {
                header.push(format!("{:>14}", format!("{} {l}", em.to_uppercase())));
            }
            header.push(format!("{:>14}", format!("{} delta", em.to_uppercase())));
        }
        let mut out = header.concat();
        out.push('\n');
        for name in METRICS {
            let _ = write!(out, "{name:<12}");
            for em in &emulators {
                let r = self
                    .rows
                    .iter()
                    .find(|r| r.emulator == *em && r.metric == name)
                    .expect("grid is complete");
                let _ = write!(out, "{:>14.4}{:>14.4}{:>14.4}", r.a, r.b, r.delta);
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub seconds: f64,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub name: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub name: String,
    pub crate_version: String,
    pub seeds: BTreeMap<String, u64>,
    /// The configuration as TOML.
    pub config: String,
    pub stages: Vec<StageRecord>,
    pub files: Vec<FileRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_report(name: &str, n: usize, shift: f64) -> Report {
        let truths: Vec<OutputTensor> = (0..3)
            .map(|j| OutputTensor::from_fn(vec![2, 2], |i| (j + i[0] + 2 * i[1]) as f64).unwrap())
            .collect();
        let pred = PredictiveDistribution {
            means: truths.iter().map(|t| t.map(|v| v + shift)).collect(),
            variances: truths.iter().map(|t| t.map(|_| 0.25)).collect(),
            dof: None,
        };
        Report::build(name, "toy", Some(n), &truths, &[("ope", &pred, None), ("ppe", &pred, None)], 5, 1)
            .unwrap()
            .0
    }

    #[test]
    fn identical_reports_have_zero_deltas() {
        let r = toy_report("a", 20, 0.1);
        let c = compare(&r, &r, MetricSet::Full).unwrap();
        assert_eq!(c.rows.len(), 8);
        assert!(c.rows.iter().all(|row| row.delta == 0.0));
        assert!(c.to_text().contains("OPE n=20"));
        assert_eq!(c.to_csv().lines().count(), 1 + 8 * 3);
    }

    #[test]
    fn deltas_are_b_minus_a() {
        let (a, b) = (toy_report("a", 20, 0.2), toy_report("b", 50, 0.1));
        let c = compare(&a, &b, MetricSet::Sample).unwrap();
        let r = c.rows.iter().find(|r| r.metric == "RMSPE").unwrap();
        assert!((r.a - 0.2).abs() < 1e-12 && (r.b - 0.1).abs() < 1e-12);
        assert!((r.delta + 0.1).abs() < 1e-12);
    }

    #[test]
    fn missing_metric_is_named() {
        let r = toy_report("a", 20, 0.1);
        let mut v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        v["emulators"]["ppe"]["full"].as_object_mut().unwrap().remove("rmspe");
        let err = Report::from_json(&v.to_string(), "b").unwrap_err().to_string();
        assert!(err.contains("rmspe"), "{err}");
    }

    #[test]
    fn different_diagnostic_sets_refuse_comparison() {
        let a = toy_report("a", 20, 0.1);
        let mut b = a.clone();
        b.diagnostic_fingerprint = fingerprint(&[OutputTensor::zeros(vec![1]).unwrap()]);
        assert!(matches!(compare(&a, &b, MetricSet::Full), Err(Error::Compare(_))));
        b = a.clone();
        b.emulators.remove("ppe");
        assert!(compare(&a, &b, MetricSet::Full).is_err());
    }

    #[test]
    fn json_round_trip() {
        let r = toy_report("a", 20, 0.1);
        assert_eq!(Report::from_json(&r.to_json(), "a").unwrap(), r);
    }
}
