//! Experiment runner plumbing: resolved configuration, the flat metric-row
//! schema shared by the CSV and JSON outputs, and fixture comparison.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

/// Fully resolved run configuration; together with the code version this
/// determines every output bit.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ExperimentConfig {
    pub command: String,
    pub q: u32,
    #[serde(rename = "H")]
    pub h: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub n: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub n_max: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub reps: Option<u64>,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub t_grid: Option<Vec<f64>>,
    pub normalizer: String,
    pub threads: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub resolution: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub stride: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub control_hurst: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub contraction_order: Option<u32>,
}

/// One flat metric row; identical in the CSV table and the JSON record.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricRow {
    pub metric: String,
    pub q: u32,
    #[serde(rename = "H")]
    pub h: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub n: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub t: Option<f64>,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub stderr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ref_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ref_provenance: Option<String>,
}

impl MetricRow {
    pub fn new(metric: impl Into<String>, q: u32, h: f64, value: f64) -> Self {
        MetricRow {
            metric: metric.into(),
            q,
            h,
            n: None,
            t: None,
            value,
            stderr: None,
            ref_value: None,
            ref_provenance: None,
        }
    }

    pub fn at_n(mut self, n: u64) -> Self {
        self.n = Some(n);
        self
    }

    pub fn at_t(mut self, t: f64) -> Self {
        self.t = Some(t);
        self
    }

    pub fn with_stderr(mut self, se: f64) -> Self {
        self.stderr = Some(se);
        self
    }

    pub fn with_reference(mut self, value: f64, provenance: &str) -> Self {
        self.ref_value = Some(value);
        self.ref_provenance = Some(provenance.to_string());
        self
    }
}

/// The full run record: config echo, code version, metric rows, wall-clock.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultRecord {
    pub config: ExperimentConfig,
    pub version: String,
    pub results: Vec<MetricRow>,
    /// Wall-clock seconds; the only field that varies between identical runs.
    pub timing: f64,
}

pub const CSV_HEADER: &str = "metric,q,H,n,t,value,stderr,ref_value,ref_provenance";

fn fmt_opt_f64(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Render the rows as the flat CSV table (UTF-8, LF, '.' decimals).
pub fn rows_to_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.metric,
            r.q,
            r.h,
            r.n.map(|n| n.to_string()).unwrap_or_default(),
            fmt_opt_f64(r.t),
            r.value,
            fmt_opt_f64(r.stderr),
            fmt_opt_f64(r.ref_value),
            r.ref_provenance.clone().unwrap_or_default(),
        ));
    }
    out
}

/// Parse the CSV table back into rows (the round-trip counterpart of
/// `rows_to_csv`; `q` and `H` are per-row as in the JSON schema).
pub fn rows_from_csv(text: &str) -> Result<Vec<MetricRow>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>().join(",") != CSV_HEADER {
        bail!("unexpected CSV header: {headers:?}");
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let opt = |i: usize| -> Option<&str> {
            let s = rec.get(i).unwrap_or("");
            if s.is_empty() {
                None
            } else {
                Some(s)
            }
        };
        rows.push(MetricRow {
            metric: rec.get(0).unwrap_or("").to_string(),
            q: rec.get(1).unwrap_or("0").parse()?,
            h: rec.get(2).unwrap_or("0").parse()?,
            n: opt(3).map(|s| s.parse()).transpose()?,
            t: opt(4).map(|s| s.parse()).transpose()?,
            value: rec.get(5).unwrap_or("0").parse()?,
            stderr: opt(6).map(|s| s.parse()).transpose()?,
            ref_value: opt(7).map(|s| s.parse()).transpose()?,
            ref_provenance: opt(8).map(|s| s.to_string()),
        });
    }
    Ok(rows)
}

/// One fixture entry: a metric key with its expected value and tolerance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixtureMetric {
    pub metric: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub n: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub t: Option<f64>,
    pub expected: f64,
    pub tol: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Fixture {
    pub metrics: Vec<FixtureMetric>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FixtureOutcome {
    pub metric: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    pub expected: f64,
    pub tol: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub actual: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct FixtureReport {
    pub pass: bool,
    pub outcomes: Vec<FixtureOutcome>,
}

/// Compare a record against a fixture's per-metric tolerances.
pub fn compare_fixture(record: &ResultRecord, fixture: &Fixture) -> FixtureReport {
    let mut outcomes = Vec::new();
    for fm in &fixture.metrics {
        let actual = record
            .results
            .iter()
            .find(|r| r.metric == fm.metric && r.n == fm.n && r.t == fm.t)
            .map(|r| r.value);
        let pass = actual.is_some_and(|a| (a - fm.expected).abs() <= fm.tol);
        outcomes.push(FixtureOutcome {
            metric: fm.metric.clone(),
            n: fm.n,
            t: fm.t,
            expected: fm.expected,
            tol: fm.tol,
            actual,
            pass,
        });
    }
    FixtureReport {
        pass: outcomes.iter().all(|o| o.pass),
        outcomes,
    }
}

pub fn load_record(path: &Path) -> Result<ResultRecord> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading record {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing record {}", path.display()))
}

pub fn load_fixture(path: &Path) -> Result<Fixture> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading fixture {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing fixture {}", path.display()))
}

/// Seeds file: one decimal u64 per line, blank lines and '#' comments allowed.
pub fn load_seeds(path: &Path) -> Result<Vec<u64>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading seeds {}", path.display()))?;
    let mut seeds = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        seeds.push(line.parse::<u64>().with_context(|| format!("bad seed line {line:?}"))?);
    }
    if seeds.is_empty() {
        bail!("seeds file {} holds no seeds", path.display());
    }
    Ok(seeds)
}
