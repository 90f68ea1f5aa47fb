//! Seeded experiment sweeps and report emission.
//!
//! An [`ExperimentSpec`] fans out to one job per method, SNR point and seed.
//! Jobs run on the rayon pool and are collected in a fixed order, so the
//! CSV and JSON outputs depend only on the spec.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{generate_channel, ChannelSet};
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::link::simulate_link;
use crate::objective::{evaluate, PrecoderStack};
use crate::symplectic::{optimize_cspd, write_trace_csv, TraceRecord};
use crate::wmmse::{wmmse_solve, LONG_ITERS, SHORT_ITERS};

/// How per-subcarrier SNR relates to the configured noise variance.
pub const SNR_CONVENTION: &str = "SNR = P/(N_v*sigma_z2) per subcarrier, P = N_v*p_c";

/// Columns of `report.csv`, in order.
pub const REPORT_COLUMNS: [&str; 12] = [
    "method",
    "snr_db",
    "seed",
    "status",
    "converged",
    "iterations",
    "wsr_bits",
    "delay_energy_ratio",
    "nmse",
    "ber",
    "bits",
    "detail",
];

/// Cell value for metrics that do not exist for a row.
pub const NA: &str = "NA";

/// Metrics aggregated in `summary.json`.
pub const METRICS: [&str; 5] = ["wsr_bits", "delay_energy_ratio", "nmse", "ber", "iterations"];

/// Step multipliers of the fixed-step grid in a step-length study.
pub const FIXED_STEP_GRID: [f64; 4] = [0.25, 0.5, 1.0, 2.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    #[default]
    WsrVsSnr,
    DelayProfile,
    NmseVsSnr,
    BerVsSnr,
    ConvergenceTrace,
    StepLengthStudy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Cspd,
    CspdAlpha0,
    Wmmse40,
    Wmmse150,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Cspd, Method::CspdAlpha0, Method::Wmmse40, Method::Wmmse150];

    pub fn name(self) -> &'static str {
        match self {
            Method::Cspd => "cspd",
            Method::CspdAlpha0 => "cspd_alpha0",
            Method::Wmmse40 => "wmmse40",
            Method::Wmmse150 => "wmmse150",
        }
    }

    fn is_cspd(self) -> bool {
        matches!(self, Method::Cspd | Method::CspdAlpha0)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub system: SystemConfig,
    pub snr_grid: Vec<f64>,
    pub num_seeds: usize,
    /// Seeds are `first_seed, first_seed + 1, …`.
    pub first_seed: u64,
    pub methods: Vec<Method>,
    /// OFDM data symbols per row for the BER measurement; 0 skips the link.
    pub data_symbols: usize,
    /// Write `trace_<method>_<seed>.csv` for CSPD rows.
    pub traces: bool,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::default(),
            system: SystemConfig::default(),
            snr_grid: vec![0.0, 10.0, 20.0],
            num_seeds: 10,
            first_seed: 0,
            methods: Method::ALL.to_vec(),
            data_symbols: 20,
            traces: false,
        }
    }
}

impl ExperimentSpec {
    /// Small end-to-end run: M = 4, K = 2, N_v = 8, one seed at 10 dB.
    pub fn smoke() -> Self {
        Self {
            system: SystemConfig { m_x: 2, m_z: 2, k: 2, n_c: 8, n_v: 8, n_e: 2, taps: 3, ..Default::default() },
            snr_grid: vec![10.0],
            num_seeds: 1,
            data_symbols: 10,
            traces: true,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        if self.snr_grid.is_empty() {
            return Err(Error::param("snr_grid", "must not be empty"));
        }
        if let Some(s) = self.snr_grid.iter().find(|s| !s.is_finite()) {
            return Err(Error::param("snr_grid", format!("non-finite entry {s}")));
        }
        if self.num_seeds == 0 {
            return Err(Error::param("num_seeds", "must be at least 1"));
        }
        if self.methods.is_empty() {
            return Err(Error::param("methods", "must not be empty"));
        }
        Ok(())
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.num_seeds as u64).map(|i| self.first_seed + i).collect()
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// Row labels and the configuration each one runs with.
    fn variants(&self) -> Vec<(String, Method, SystemConfig)> {
        let mut out = Vec::new();
        for &m in &self.methods {
            let mut cfg = self.system.clone();
            if m == Method::CspdAlpha0 {
                cfg.alpha = 0.0;
            }
            if self.kind == ExperimentKind::StepLengthStudy && m.is_cspd() {
                for mult in FIXED_STEP_GRID {
                    let fixed = SystemConfig { h0: cfg.h0 * mult, theta: 0.0, ..cfg.clone() };
                    out.push((format!("{}_fixed_h{mult}", m.name()), m, fixed));
                }
            }
            out.push((m.name().to_string(), m, cfg));
        }
        out
    }
}

/// Read a JSON spec. An empty file gives the default spec.
pub fn parse_config(path: &Path) -> Result<ExperimentSpec> {
    let text = fs::read_to_string(path)?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<ExperimentSpec> {
    let spec: ExperimentSpec = if text.trim().is_empty() {
        ExperimentSpec::default()
    } else {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?
    };
    spec.validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(spec)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Ok,
    Diverged,
    Error,
}

impl RowStatus {
    fn as_str(self) -> &'static str {
        match self {
            RowStatus::Ok => "ok",
            RowStatus::Diverged => "diverged",
            RowStatus::Error => "error",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RowMetrics {
    /// `None` for methods without a convergence test.
    pub converged: Option<bool>,
    pub iterations: usize,
    pub wsr_bits: f64,
    pub delay_energy_ratio: f64,
    pub nmse: Option<f64>,
    pub ber: Option<f64>,
    pub bits: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub method: String,
    pub snr_db: f64,
    pub seed: u64,
    pub status: RowStatus,
    /// Present when `status` is `Ok`.
    pub metrics: Option<RowMetrics>,
    pub detail: String,
    trace: Vec<TraceRecord>,
}

impl ReportRow {
    pub fn metric(&self, name: &str) -> Option<f64> {
        let m = self.metrics.as_ref()?;
        match name {
            "wsr_bits" => Some(m.wsr_bits),
            "delay_energy_ratio" => Some(m.delay_energy_ratio),
            "nmse" => m.nmse,
            "ber" => m.ber,
            "iterations" => Some(m.iterations as f64),
            _ => None,
        }
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    fn cells(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map_or_else(|| NA.to_string(), |x| x.to_string());
        let mut cells = vec![self.method.clone(), self.snr_db.to_string(), self.seed.to_string(), self.status.as_str().into()];
        match &self.metrics {
            Some(m) => cells.extend([
                m.converged.map_or_else(|| NA.to_string(), |c| c.to_string()),
                m.iterations.to_string(),
                m.wsr_bits.to_string(),
                m.delay_energy_ratio.to_string(),
                opt(m.nmse),
                opt(m.ber),
                m.bits.to_string(),
            ]),
            None => cells.extend(std::iter::repeat_n(NA.to_string(), 7)),
        }
        cells.push(self.detail.clone());
        cells
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub method: String,
    pub snr_db: f64,
    pub metric: String,
    pub mean: f64,
    /// Sample standard deviation (n − 1); 0 for a single sample.
    pub std: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metadata {
    pub kind: ExperimentKind,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub version: String,
    pub snr_convention: String,
    pub columns: Vec<String>,
    pub spec: ExperimentSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
    pub aggregates: Vec<Aggregate>,
    pub metadata: Metadata,
}

#[derive(Serialize)]
struct Summary<'a> {
    metadata: &'a Metadata,
    aggregates: &'a [Aggregate],
}

impl ExperimentReport {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(REPORT_COLUMNS)?;
        for row in &self.rows {
            out.write_record(row.cells())?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn summary_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&Summary { metadata: &self.metadata, aggregates: &self.aggregates })?)
    }

    /// Write `report.csv`, `summary.json` and any traces into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let report = dir.join("report.csv");
        self.write_csv(fs::File::create(&report)?)?;
        written.push(report);
        let summary = dir.join("summary.json");
        fs::write(&summary, self.summary_json()? + "\n")?;
        written.push(summary);

        let multi_snr = self.metadata.spec.snr_grid.len() > 1;
        for row in self.rows.iter().filter(|r| !r.trace.is_empty()) {
            let sub = if multi_snr { dir.join(format!("snr_{}dB", row.snr_db)) } else { dir.to_path_buf() };
            fs::create_dir_all(&sub)?;
            let path = sub.join(format!("trace_{}_{}.csv", row.method, row.seed));
            write_trace_csv(&row.trace, fs::File::create(&path)?)?;
            written.push(path);
        }
        Ok(written)
    }
}

fn job_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn run_method(ch: &ChannelSet, cfg: &SystemConfig, method: Method, link_symbols: usize, rng: &mut ChaCha8Rng)
    -> Result<(RowMetrics, PrecoderStack, Vec<TraceRecord>)> {
    let (precoder, converged, iterations, trace) = match method {
        Method::Cspd | Method::CspdAlpha0 => {
            let out = optimize_cspd(ch, cfg, None)?;
            (out.precoder, Some(out.converged), out.iterations, out.trace)
        }
        Method::Wmmse40 | Method::Wmmse150 => {
            let iters = if method == Method::Wmmse40 { SHORT_ITERS } else { LONG_ITERS };
            (wmmse_solve(ch, cfg, iters)?.precoder, None, iters, Vec::new())
        }
    };
    // smoothing is measured with the configured α regardless of method
    let breakdown = evaluate(ch, &precoder, cfg)?;
    let mut metrics = RowMetrics {
        converged,
        iterations,
        wsr_bits: breakdown.wsr_bits(),
        delay_energy_ratio: breakdown.delay_energy_ratio(),
        ..Default::default()
    };
    if link_symbols > 0 {
        let stats = simulate_link(ch, &precoder, cfg, link_symbols, None, rng)?;
        metrics.nmse = Some(stats.mean_nmse());
        metrics.ber = Some(stats.ber());
        metrics.bits = stats.bits;
    }
    Ok((metrics, precoder, trace))
}

/// Run every (method, SNR, seed) job and aggregate.
///
/// Each seed fixes one channel realization shared by all methods and SNR
/// points. A failing job is recorded with its status and the run continues.
pub fn run(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    let variants = spec.variants();
    let seeds = spec.seeds();
    let channels: Vec<Result<ChannelSet>> = seeds
        .par_iter()
        .map(|&seed| generate_channel(&spec.system, &mut job_rng(seed, 0)))
        .collect();

    let (n_snr, n_seeds) = (spec.snr_grid.len(), seeds.len());
    let jobs: Vec<(usize, usize, usize)> = (0..variants.len())
        .flat_map(|v| (0..n_snr).flat_map(move |s| (0..n_seeds).map(move |i| (v, s, i))))
        .collect();
    let keep_traces = spec.traces || spec.kind == ExperimentKind::ConvergenceTrace;

    let rows: Vec<ReportRow> = jobs
        .par_iter()
        .map(|&(v, s, i)| {
            let (label, method, base) = &variants[v];
            let snr_db = spec.snr_grid[s];
            let seed = seeds[i];
            let cfg = base.clone().with_snr_db(snr_db);
            let stream = 1 + (v * spec.snr_grid.len() + s) as u64;
            let outcome = channels[i]
                .as_ref()
                .map_err(|e| Error::InvalidInput(format!("channel generation failed: {e}")))
                .and_then(|ch| run_method(ch, &cfg, *method, spec.data_symbols, &mut job_rng(seed, stream)));
            let mut row = ReportRow {
                method: label.clone(),
                snr_db,
                seed,
                status: RowStatus::Ok,
                metrics: None,
                detail: String::new(),
                trace: Vec::new(),
            };
            match outcome {
                Ok((metrics, _, trace)) => {
                    row.metrics = Some(metrics);
                    if keep_traces {
                        row.trace = trace;
                    }
                }
                Err(Error::Divergence { iteration, trace }) => {
                    row.status = RowStatus::Diverged;
                    row.detail = format!("diverged at iteration {iteration}");
                    if keep_traces {
                        row.trace = trace;
                    }
                }
                Err(e) => {
                    row.status = RowStatus::Error;
                    row.detail = e.to_string();
                }
            }
            row
        })
        .collect();

    let aggregates = aggregate(&rows, &variants.iter().map(|v| v.0.clone()).collect::<Vec<_>>(), &spec.snr_grid);
    let metadata = Metadata {
        kind: spec.kind,
        config_hash: spec.hash(),
        seeds,
        version: env!("CARGO_PKG_VERSION").to_string(),
        snr_convention: SNR_CONVENTION.to_string(),
        columns: REPORT_COLUMNS.iter().map(|c| c.to_string()).collect(),
        spec: spec.clone(),
    };
    Ok(ExperimentReport { rows, aggregates, metadata })
}

/// Run and write outputs into `out_dir`.
pub fn run_to_dir(spec: &ExperimentSpec, out_dir: &Path) -> Result<ExperimentReport> {
    let report = run(spec)?;
    report.write_to(out_dir)?;
    Ok(report)
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Per-(method, SNR, metric) statistics over rows with status `ok`.
/// Groups without any sample are omitted.
pub fn aggregate(rows: &[ReportRow], methods: &[String], snr_grid: &[f64]) -> Vec<Aggregate> {
    let mut out = Vec::new();
    for method in methods {
        for &snr_db in snr_grid {
            let group: Vec<&ReportRow> = rows.iter().filter(|r| &r.method == method && r.snr_db == snr_db).collect();
            for metric in METRICS {
                let values: Vec<f64> = group.iter().filter_map(|r| r.metric(metric)).collect();
                if values.is_empty() {
                    continue;
                }
                let (mean, std) = mean_std(&values);
                out.push(Aggregate {
                    method: method.clone(),
                    snr_db,
                    metric: metric.to_string(),
                    mean,
                    std,
                    count: values.len(),
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_defaults() {
        assert_eq!(parse_config_str("").unwrap(), ExperimentSpec::default());
        assert_eq!(parse_config_str("  \n").unwrap(), ExperimentSpec::default());
        assert_eq!(parse_config_str("{}").unwrap(), ExperimentSpec::default());
    }

    #[test]
    fn theta_out_of_range_rejected() {
        let err = parse_config_str(r#"{"system": {"theta": 3}}"#).unwrap_err().to_string();
        assert!(err.contains("theta") && err.contains("[0,2]"), "{err}");
    }

    #[test]
    fn unknown_keys_named() {
        let err = parse_config_str(r#"{"num_seed": 3}"#).unwrap_err().to_string();
        assert!(err.contains("num_seed"), "{err}");
        let err = parse_config_str(r#"{"system": {"gama": 1.0}}"#).unwrap_err().to_string();
        assert!(err.contains("gama"), "{err}");
    }

    #[test]
    fn structural_checks() {
        assert!(parse_config_str(r#"{"snr_grid": []}"#).unwrap_err().to_string().contains("snr_grid"));
        assert!(parse_config_str(r#"{"num_seeds": 0}"#).unwrap_err().to_string().contains("num_seeds"));
        assert!(parse_config_str(r#"{"methods": ["wmmse7"]}"#).is_err());
    }

    #[test]
    fn round_trip() {
        let spec = ExperimentSpec {
            kind: ExperimentKind::BerVsSnr,
            snr_grid: vec![-3.5, 12.25],
            methods: vec![Method::Wmmse40, Method::Cspd],
            first_seed: 17,
            system: SystemConfig { alpha: 4.0, theta: 0.7, ..Default::default() },
            ..Default::default()
        };
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(parse_config_str(&text).unwrap(), spec);
    }

    #[test]
    fn statistics() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn step_study_adds_fixed_grid() {
        let spec = ExperimentSpec {
            kind: ExperimentKind::StepLengthStudy,
            methods: vec![Method::Cspd, Method::Wmmse40],
            ..Default::default()
        };
        let v = spec.variants();
        assert_eq!(v.len(), 6);
        assert_eq!(v[0].0, "cspd_fixed_h0.25");
        assert!(v[..4].iter().all(|(_, _, c)| c.theta == 0.0));
        assert_eq!(v[2].2.h0, spec.system.h0);
    }
}
