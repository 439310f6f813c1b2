//! Command-line front end: configs in, CSV/JSON/SVG out, plus a manifest
//! per run.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::animals::score_table;
use crate::classifier::{classify, default_grid, Budgets};
use crate::combustion::{
    activation_gap_stats, run, spread_rate_estimate, trimmed_run, Mode, SimulationConfig, Snapshot,
    Termination, Trajectory,
};
use crate::dist::{CountDistribution, DistSpec};
use crate::tadbp::{
    batch_variance, classify_chain, dry_fraction_exact, isolated_fraction_exact, sample_field,
    wet_dry, y_chain_zero_times, ChainProfile, Domain,
};
use crate::walks::{bounds_table, gap_tail_bound, rho_tail_bound};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_EXPLOSION: i32 = 3;

pub const THREADS_ENV: &str = "COMBUSTION_LAB_THREADS";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn internal(e: impl std::fmt::Display) -> CliError {
    CliError::Internal(e.to_string())
}

// ---------------------------------------------------------------- configs

fn d_seed() -> u64 {
    0
}
fn d_two() -> u32 {
    2
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifyConfig {
    pub dist: DistSpec,
    pub dim: u32,
    #[serde(default = "default_grid")]
    pub grid: Vec<f64>,
    #[serde(default)]
    pub budgets: Budgets,
}

fn d_gap_c() -> f64 {
    2.5
}
fn d_gap_x_min() -> i64 {
    50
}
fn d_gap_eps() -> f64 {
    0.01
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub sim: SimulationConfig,
    /// Run the full and trimmed processes side by side (d >= 2).
    #[serde(default)]
    pub trimmed: bool,
    #[serde(default = "d_gap_c")]
    pub gap_c: f64,
    #[serde(default = "d_gap_x_min")]
    pub gap_x_min: i64,
    #[serde(default = "d_gap_eps")]
    pub gap_eps: f64,
}

fn d_len() -> usize {
    100_000
}
fn d_k_max() -> u64 {
    100_000
}
fn d_true() -> bool {
    true
}
fn d_batches() -> usize {
    100
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TadbpConfig {
    pub psi: DistSpec,
    #[serde(default = "d_domain")]
    pub domain: Domain,
    #[serde(default)]
    pub start: i64,
    #[serde(default = "d_len")]
    pub len: usize,
    #[serde(default = "d_seed")]
    pub seed: u64,
    #[serde(default = "d_k_max")]
    pub k_max: u64,
    /// Steps of a standalone Y chain; 0 skips it.
    #[serde(default)]
    pub chain_steps: u64,
    #[serde(default = "d_batches")]
    pub batches: usize,
    #[serde(default = "d_true")]
    pub write_sites: bool,
}

fn d_domain() -> Domain {
    Domain::ZPlus
}

fn d_ns() -> Vec<u64> {
    (2..=8).collect()
}
fn d_trials() -> u64 {
    100_000
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WalksConfig {
    pub eps: f64,
    #[serde(default = "d_ns")]
    pub ns: Vec<u64>,
    #[serde(default = "d_trials")]
    pub trials: u64,
    #[serde(default = "d_seed")]
    pub seed: u64,
}

fn d_a_grid() -> Vec<f64> {
    vec![2.0, 10.0, 100.0, 1e3, 1e4, 1e6]
}
fn d_n_grid() -> Vec<usize> {
    vec![4, 8, 12]
}
fn d_animal_trials() -> u64 {
    5
}
fn d_tol() -> f64 {
    1e-6
}
fn d_eta_cap() -> u64 {
    10_000
}
fn d_beam() -> usize {
    64
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnimalsConfig {
    pub mu: DistSpec,
    #[serde(default = "d_two")]
    pub dim: u32,
    #[serde(default = "d_a_grid")]
    pub a_grid: Vec<f64>,
    #[serde(default = "d_n_grid")]
    pub n_grid: Vec<usize>,
    #[serde(default = "d_animal_trials")]
    pub trials: u64,
    #[serde(default = "d_tol")]
    pub tol: f64,
    #[serde(default = "d_eta_cap")]
    pub eta_cap: u64,
    #[serde(default = "d_beam")]
    pub beam: usize,
    #[serde(default = "d_seed")]
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    pub inputs: Vec<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "op", content = "config", rename_all = "snake_case")]
pub enum Experiment {
    Classify(ClassifyConfig),
    Simulate(SimulateConfig),
    Tadbp(TadbpConfig),
    Walks(WalksConfig),
    Animals(AnimalsConfig),
    Report(ReportConfig),
}

impl Experiment {
    pub fn op(&self) -> &'static str {
        match self {
            Experiment::Classify(_) => "classify",
            Experiment::Simulate(_) => "simulate",
            Experiment::Tadbp(_) => "tadbp",
            Experiment::Walks(_) => "walks",
            Experiment::Animals(_) => "animals",
            Experiment::Report(_) => "report",
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            Experiment::Simulate(c) => Some(c.sim.seed),
            Experiment::Tadbp(c) => Some(c.seed),
            Experiment::Walks(c) => Some(c.seed),
            Experiment::Animals(c) => Some(c.seed),
            Experiment::Classify(_) | Experiment::Report(_) => None,
        }
    }
}

// ---------------------------------------------------------------- results

/// Everything a run produces, before anything touches the disk.
#[derive(Clone, Debug)]
pub struct RunOutput {
    /// `(file name, bytes)` in emission order.
    pub files: Vec<(String, Vec<u8>)>,
    pub summary: Value,
    pub events: Option<u64>,
    pub explosion_suspected: bool,
    /// Files read, for reports.
    pub inputs: Vec<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct FileDigest {
    pub file: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub experiment_id: String,
    pub tool_version: String,
    pub argv: Vec<String>,
    pub op: String,
    pub seed: Option<u64>,
    pub experiment: Experiment,
    pub outputs: Vec<FileDigest>,
    #[serde(default)]
    pub inputs: Vec<FileDigest>,
    pub wall_clock_secs: f64,
    pub events: Option<u64>,
    pub exit_code: i32,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

fn digest(name: &str, bytes: &[u8]) -> FileDigest {
    FileDigest {
        file: name.to_string(),
        sha256: sha256_hex(bytes),
        bytes: bytes.len() as u64,
    }
}

fn experiment_id(exp: &Experiment) -> String {
    let text = serde_json::to_string(exp).unwrap_or_default();
    sha256_hex(text.as_bytes())[..16].to_string()
}

fn to_json(v: &impl Serialize) -> Result<Vec<u8>, CliError> {
    let mut s = serde_json::to_vec_pretty(v).map_err(internal)?;
    s.push(b'\n');
    Ok(s)
}

fn csv_bytes<R: Serialize>(
    header: &[&str],
    rows: impl IntoIterator<Item = R>,
) -> Result<Vec<u8>, CliError> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    w.write_record(header).map_err(internal)?;
    for r in rows {
        w.serialize(r).map_err(internal)?;
    }
    w.into_inner().map_err(internal)
}

// ---------------------------------------------------------------- dispatch

pub fn execute(exp: &Experiment) -> Result<RunOutput, CliError> {
    match exp {
        Experiment::Classify(c) => exec_classify(c),
        Experiment::Simulate(c) => exec_simulate(c),
        Experiment::Tadbp(c) => exec_tadbp(c),
        Experiment::Walks(c) => exec_walks(c),
        Experiment::Animals(c) => exec_animals(c),
        Experiment::Report(c) => exec_report(c),
    }
}

fn plain(out: Vec<(String, Vec<u8>)>, summary: Value) -> RunOutput {
    RunOutput {
        files: out,
        summary,
        events: None,
        explosion_suspected: false,
        inputs: Vec::new(),
    }
}

fn exec_classify(c: &ClassifyConfig) -> Result<RunOutput, CliError> {
    let d = CountDistribution::from_spec_in(c.dist.clone(), Path::new(".")).map_err(config_err)?;
    let report = classify(&d, c.dim, &c.grid, c.budgets).map_err(config_err)?;
    let rows = report.partial_sum_rows();
    let csv = csv_bytes(&["criterion", "base", "truncation", "partial_sum"], rows)?;
    let summary = json!({
        "schema": "combustion-lab/classify/v1",
        "verdict": report.verdict,
        "conflict": report.conflict,
        "triggers": report.triggers,
        "report": report,
    });
    Ok(plain(
        vec![
            ("classify.json".into(), to_json(&summary)?),
            ("partial_sums.csv".into(), csv),
        ],
        summary,
    ))
}

pub fn termination_label(t: &Termination) -> &'static str {
    if t.explosion_suspected() {
        return "ExplosionSuspected";
    }
    match t {
        Termination::Completed => "Completed",
        Termination::EventCapHit => "EventCapHit",
        Termination::SiteCapHit { .. } => "SiteCapHit",
        Termination::ParticleCapHit { .. } => "ParticleCapHit",
    }
}

#[derive(Serialize)]
struct SnapshotRow {
    t: f64,
    visited_count: u64,
    tip: i64,
    leftmost: i64,
    first_coord_tip: i64,
    active_tip: i64,
    particles: u64,
    events: u64,
}

fn snapshot_csv(snaps: &[Snapshot]) -> Result<Vec<u8>, CliError> {
    csv_bytes(
        &[
            "t",
            "visited_count",
            "tip",
            "leftmost",
            "first_coord_tip",
            "active_tip",
            "particles",
            "events",
        ],
        snaps.iter().map(|s| SnapshotRow {
            t: s.t,
            visited_count: s.visited_count,
            tip: s.tip,
            leftmost: s.leftmost,
            first_coord_tip: s.first_coord_tip,
            active_tip: s.active_tip,
            particles: s.particles,
            events: s.events,
        }),
    )
}

fn trajectory_summary(
    label: &str,
    tr: &Trajectory,
    c: &SimulateConfig,
    mu: &CountDistribution,
) -> Value {
    let spread = spread_rate_estimate(tr);
    let gaps = if tr.dimension == 1 {
        match gap_tail_bound(1.0, mu, c.gap_eps) {
            Ok(g) => {
                let s = activation_gap_stats(&tr.gaps, g.c_eps, c.gap_c, c.gap_x_min);
                let tail = |q: f64| {
                    let n = tr.gaps.len().max(1) as f64;
                    let emp = tr.gaps.iter().filter(|g| g.1 >= q).count() as f64 / n;
                    json!({"q": q, "empirical": emp, "bound": g.c_eps.powf(q.sqrt())})
                };
                json!({
                    "c_eps": g.c_eps,
                    "c": c.gap_c,
                    "x_min": c.gap_x_min,
                    "violations": s.violations,
                    "tails": [tail(25.0), tail(100.0)],
                })
            }
            Err(e) => json!({"unavailable": e.to_string()}),
        }
    } else {
        Value::Null
    };
    json!({
        "label": label,
        "mode": tr.mode,
        "termination": termination_label(&tr.termination),
        "termination_detail": tr.termination,
        "end_time": tr.end_time,
        "events": tr.events,
        "visited_count": tr.visited_count,
        "particles": tr.particles,
        "eta_truncations": tr.eta_truncations,
        "axis1_rate": crate::combustion::axis1_rate(tr).0,
        "spread_estimate": spread,
        "gap_check": gaps,
        "snapshots": tr.snapshots,
    })
}

fn exec_simulate(c: &SimulateConfig) -> Result<RunOutput, CliError> {
    let mu = c.sim.validate().map_err(config_err)?;
    let runs: Vec<(String, Trajectory)> = if c.trimmed {
        let p = trimmed_run(&c.sim).map_err(config_err)?;
        vec![("full".into(), p.full), ("trimmed".into(), p.trimmed)]
    } else {
        let label = if c.sim.mode == Mode::Trimmed {
            "trimmed"
        } else {
            "full"
        };
        vec![(label.into(), run(&c.sim).map_err(config_err)?)]
    };
    let mut files = Vec::new();
    let mut trajectories = Vec::new();
    for (label, tr) in &runs {
        trajectories.push(trajectory_summary(label, tr, c, &mu));
        files.push((
            format!("snapshots_{label}.csv"),
            snapshot_csv(&tr.snapshots)?,
        ));
        if tr.dimension == 1 {
            files.push((
                format!("gaps_{label}.csv"),
                csv_bytes(&["x", "gap"], tr.gaps.iter().copied())?,
            ));
        }
        if !tr.visited.is_empty() {
            files.push((
                format!("sites_{label}.csv"),
                csv_bytes(
                    &["site", "sigma", "released"],
                    tr.visited.iter().map(|v| {
                        let s: Vec<String> = v.site.iter().map(|x| x.to_string()).collect();
                        (s.join(" "), v.sigma, v.released)
                    }),
                )?,
            ));
        }
    }
    let explosion = runs.iter().any(|r| r.1.termination.explosion_suspected());
    let events = runs.iter().map(|r| r.1.events).sum();
    let summary = json!({
        "schema": "combustion-lab/simulate/v1",
        "termination": termination_label(&runs[0].1.termination),
        "explosion_suspected": explosion,
        "trajectories": trajectories,
    });
    files.insert(0, ("simulate.json".into(), to_json(&summary)?));
    Ok(RunOutput {
        files,
        summary,
        events: Some(events),
        explosion_suspected: explosion,
        inputs: Vec::new(),
    })
}

fn exec_tadbp(c: &TadbpConfig) -> Result<RunOutput, CliError> {
    let law = CountDistribution::new_allowing_zero(c.psi.clone()).map_err(config_err)?;
    let field = sample_field(&law, c.domain, c.start, c.len, c.seed).map_err(config_err)?;
    let sample = wet_dry(&field);
    let r = |k: u64| law.tail(k);
    let exact = dry_fraction_exact(&r, c.k_max, None).map_err(config_err)?;
    let isolated = isolated_fraction_exact(law.p0(), &r, c.k_max, None).map_err(config_err)?;
    let chain = classify_chain(&r, c.k_max, ChainProfile::default());
    let n_dry = sample.dry_count as f64;
    let n = sample.wet.len() as f64;
    let batch = if c.len >= 2 * c.batches && c.batches >= 2 {
        Some((batch_variance(&sample, c.batches) / n).sqrt())
    } else {
        None
    };
    let zero_visits = (c.chain_steps > 0).then(|| {
        let z = y_chain_zero_times(&law, c.chain_steps, c.seed);
        json!({"steps": c.chain_steps, "zero_visits": z.len(), "frequency": z.len() as f64 / c.chain_steps as f64})
    });
    let lengths = sample.component_lengths();
    let summary = json!({
        "schema": "combustion-lab/tadbp/v1",
        "sites": c.len,
        "dry_count": sample.dry_count,
        "dry_fraction": n_dry / n,
        "dry_fraction_stderr": batch,
        "exact_dry_fraction": exact,
        "exact_isolated_fraction": isolated,
        "chain_class": chain.class,
        "chain_evidence": chain,
        "components": lengths.len(),
        "mean_component_length": if lengths.is_empty() { Value::Null } else {
            json!(lengths.iter().sum::<u64>() as f64 / lengths.len() as f64)
        },
        "edge_error_bound": field.edge_error_bound,
        "y_chain": zero_visits,
    });
    let mut files = vec![("tadbp.json".into(), to_json(&summary)?)];
    if c.write_sites {
        let win = field.window();
        files.push((
            "sites.csv".into(),
            csv_bytes(
                &["x", "psi", "wet", "y"],
                (0..win.len()).map(|i| {
                    (
                        field.start + i as i64,
                        win[i],
                        u8::from(sample.wet[i]),
                        sample.y_chain[i],
                    )
                }),
            )?,
        ));
    }
    Ok(plain(files, summary))
}

fn exec_walks(c: &WalksConfig) -> Result<RunOutput, CliError> {
    let rows = bounds_table(c.eps, &c.ns, c.trials, c.seed).map_err(config_err)?;
    let a = 1.0 / c.eps;
    let rho: Vec<f64> =
        c.ns.iter()
            .map(|&n| rho_tail_bound(n, a))
            .collect::<Result<_, _>>()
            .map_err(config_err)?;
    let csv = csv_bytes(
        &["n", "lower", "upper", "empirical", "stderr", "rho_bound"],
        rows.iter()
            .zip(&rho)
            .map(|(r, b)| (r.n, r.lower, r.upper, r.empirical, r.stderr, *b)),
    )?;
    let inside = rows.iter().all(|r| {
        r.empirical >= r.lower - 3.0 * r.stderr && r.empirical <= r.upper.min(1.0) + 3.0 * r.stderr
    });
    let summary = json!({
        "schema": "combustion-lab/walks/v1",
        "eps": c.eps,
        "trials": c.trials,
        "within_bounds": inside,
        "rows": rows,
    });
    Ok(plain(
        vec![
            ("walks.json".into(), to_json(&summary)?),
            ("bounds.csv".into(), csv),
        ],
        summary,
    ))
}

fn exec_animals(c: &AnimalsConfig) -> Result<RunOutput, CliError> {
    let mu = CountDistribution::new_allowing_zero(c.mu.clone()).map_err(config_err)?;
    let t = score_table(
        &mu, c.dim, &c.a_grid, &c.n_grid, c.trials, c.tol, c.eta_cap, c.beam, c.seed,
    )
    .map_err(config_err)?;
    let csv = csv_bytes(
        &["a", "n", "trial", "score", "normalized", "exact"],
        t.rows
            .iter()
            .map(|r| (r.a, r.n, r.trial, r.score, r.normalized, r.exact)),
    )?;
    let summary = json!({
        "schema": "combustion-lab/animals/v1",
        "cells": t.cells,
        "achieving_a": t.achieving_a,
        "monotone_in_a": t.monotone_in_a,
    });
    Ok(plain(
        vec![
            ("animals.json".into(), to_json(&summary)?),
            ("scores.csv".into(), csv),
        ],
        summary,
    ))
}

// ---------------------------------------------------------------- report

#[derive(Clone, Debug)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    /// Slope of the spread estimate, when the input carried one.
    pub slope: Option<f64>,
    pub verdict: Option<String>,
}

fn load_series(path: &Path) -> Result<Vec<Series>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    let mut stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    if let Some(dir) = path.parent().and_then(Path::file_name) {
        stem = format!("{}/{stem}", dir.to_string_lossy());
    }
    let bad = |why: &str| config_err(format!("{}: {why}", path.display()));
    if path.extension().is_some_and(|e| e == "csv") {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let h = r.headers().map_err(|e| bad(&e.to_string()))?.clone();
        let it = h
            .iter()
            .position(|c| c == "t")
            .ok_or_else(|| bad("no t column"))?;
        let ip = h
            .iter()
            .position(|c| c == "tip")
            .ok_or_else(|| bad("no tip column"))?;
        let mut points = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| bad(&e.to_string()))?;
            let t: f64 = rec[it].parse().map_err(|_| bad("bad t"))?;
            let y: f64 = rec[ip].parse().map_err(|_| bad("bad tip"))?;
            points.push((t, y));
        }
        if points.is_empty() {
            return Err(bad("empty snapshot list"));
        }
        return Ok(vec![Series {
            label: stem,
            points,
            slope: None,
            verdict: None,
        }]);
    }
    let v: Value = serde_json::from_str(&text).map_err(|e| bad(&e.to_string()))?;
    if v.get("schema").and_then(Value::as_str) != Some("combustion-lab/simulate/v1") {
        return Err(bad("not a simulate result"));
    }
    let trs = v["trajectories"]
        .as_array()
        .ok_or_else(|| bad("no trajectories"))?;
    let mut out = Vec::new();
    for tr in trs {
        let snaps: Vec<Snapshot> =
            serde_json::from_value(tr["snapshots"].clone()).map_err(|e| bad(&e.to_string()))?;
        if snaps.is_empty() {
            return Err(bad("empty snapshot list"));
        }
        let label = tr["label"].as_str().unwrap_or("run");
        out.push(Series {
            label: format!("{stem}:{label}"),
            points: snaps.iter().map(|s| (s.t, s.tip as f64)).collect(),
            slope: tr["spread_estimate"]["loglog_slope"].as_f64(),
            verdict: tr["spread_estimate"]["verdict"]
                .as_str()
                .map(str::to_string),
        });
    }
    if out.is_empty() {
        return Err(bad("no trajectories"));
    }
    Ok(out)
}

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Axis {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            let v = if log { v.log10() } else { v };
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if !log {
            lo = lo.min(0.0);
        }
        if hi - lo < 1e-12 {
            hi = lo + 1.0;
        }
        Axis { lo, hi, log }
    }

    fn frac(&self, v: f64) -> f64 {
        let v = if self.log { v.log10() } else { v };
        (v - self.lo) / (self.hi - self.lo)
    }

    fn ticks(&self) -> Vec<(f64, String)> {
        if self.log {
            (self.lo.ceil() as i32..=self.hi.floor() as i32)
                .map(|e| (10f64.powi(e), format!("1e{e}")))
                .collect()
        } else {
            (0..=4)
                .map(|i| {
                    let v = self.lo + (self.hi - self.lo) * i as f64 / 4.0;
                    (v, format!("{v:.0}"))
                })
                .collect()
        }
    }
}

/// Tip against time on one set of axes, series overlaid.
pub fn svg_panel(series: &[Series], log: bool, title: &str) -> String {
    let (w, h, ml, mr, mt, mb) = (640.0, 420.0, 64.0, 16.0, 32.0, 48.0);
    let keep = |p: &&(f64, f64)| !log || (p.0 > 0.0 && p.1 > 0.0);
    let xa = Axis::fit(
        series
            .iter()
            .flat_map(|s| s.points.iter().filter(keep).map(|p| p.0)),
        log,
    );
    let ya = Axis::fit(
        series
            .iter()
            .flat_map(|s| s.points.iter().filter(keep).map(|p| p.1)),
        log,
    );
    let px = |x: f64| ml + xa.frac(x) * (w - ml - mr);
    let py = |y: f64| h - mb - ya.frac(y) * (h - mt - mb);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#,
        w / 2.0,
        xml(title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{ml}" y="{mt}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        w - ml - mr,
        h - mt - mb
    );
    for (v, l) in xa.ticks() {
        let x = px(v);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{l}</text>"#,
            h - mb,
            h - mb + 4.0,
            h - mb + 16.0
        );
    }
    for (v, l) in ya.ticks() {
        let y = py(v);
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{ml}" y2="{y:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{l}</text>"#,
            ml - 4.0,
            ml - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">t</text>"#,
        (w + ml) / 2.0,
        h - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">tip</text>"#,
        h / 2.0,
        h / 2.0
    );
    for (i, se) in series.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = se
            .points
            .iter()
            .filter(keep)
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        let ly = mt + 16.0 + 14.0 * i as f64;
        let note = match (&se.slope, &se.verdict) {
            (Some(k), Some(v)) => format!(" (slope {k:.3}, {v})"),
            (Some(k), None) => format!(" (slope {k:.3})"),
            _ => String::new(),
        };
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{colour}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            ml + 8.0,
            ly - 4.0,
            ml + 26.0,
            ly - 4.0,
            ml + 30.0,
            ly,
            xml(&format!("{}{note}", se.label))
        );
    }
    s.push_str("</svg>\n");
    s
}

fn xml(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

pub fn markdown_table(series: &[Series]) -> String {
    let mut s = String::from("| run | snapshots | final t | final tip | log-log slope | verdict |\n|---|---|---|---|---|---|\n");
    for se in series {
        let (t, y) = se.points.last().copied().unwrap_or((0.0, 0.0));
        let slope = se.slope.map_or("n/a".to_string(), |k| format!("{k:.3}"));
        let verdict = se.verdict.clone().unwrap_or_else(|| "n/a".into());
        let _ = writeln!(
            s,
            "| {} | {} | {t} | {y} | {slope} | {verdict} |",
            se.label.replace('|', "\\|"),
            se.points.len()
        );
    }
    s
}

fn exec_report(c: &ReportConfig) -> Result<RunOutput, CliError> {
    if c.inputs.is_empty() {
        return Err(config_err("report needs at least one input"));
    }
    let mut series = Vec::new();
    for p in &c.inputs {
        series.extend(load_series(p)?);
    }
    let mut files = vec![
        (
            "tip_linear.svg".to_string(),
            svg_panel(&series, false, "tip vs t").into_bytes(),
        ),
        (
            "tip_loglog.svg".to_string(),
            svg_panel(&series, true, "tip vs t (log-log)").into_bytes(),
        ),
        (
            "summary.md".to_string(),
            markdown_table(&series).into_bytes(),
        ),
    ];
    let rows: Vec<Value> = series
        .iter()
        .map(|s| json!({"label": s.label, "snapshots": s.points.len(), "slope": s.slope, "verdict": s.verdict}))
        .collect();
    let summary = json!({"schema": "combustion-lab/report/v1", "series": rows});
    files.push(("report.json".into(), to_json(&summary)?));
    Ok(RunOutput {
        files,
        summary,
        events: None,
        explosion_suspected: false,
        inputs: c.inputs.clone(),
    })
}

// ---------------------------------------------------------------- persistence

fn exit_for(out: &RunOutput) -> i32 {
    if out.explosion_suspected {
        EXIT_EXPLOSION
    } else {
        EXIT_OK
    }
}

/// Run and write outputs plus manifest into `out_dir`.
pub fn run_to_dir(
    exp: &Experiment,
    argv: &[String],
    out_dir: &Path,
) -> Result<(ExperimentManifest, RunOutput), CliError> {
    let started = Instant::now();
    let out = execute(exp)?;
    std::fs::create_dir_all(out_dir).map_err(internal)?;
    let mut outputs = Vec::new();
    for (name, bytes) in &out.files {
        std::fs::write(out_dir.join(name), bytes).map_err(internal)?;
        outputs.push(digest(name, bytes));
    }
    let inputs = out
        .inputs
        .iter()
        .map(|p| {
            let b = std::fs::read(p).map_err(internal)?;
            Ok(digest(&p.to_string_lossy(), &b))
        })
        .collect::<Result<_, CliError>>()?;
    let manifest = ExperimentManifest {
        experiment_id: experiment_id(exp),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        argv: argv.to_vec(),
        op: exp.op().to_string(),
        seed: exp.seed(),
        experiment: exp.clone(),
        outputs,
        inputs,
        wall_clock_secs: started.elapsed().as_secs_f64(),
        events: out.events,
        exit_code: exit_for(&out),
    };
    std::fs::write(out_dir.join(MANIFEST_FILE), to_json(&manifest)?).map_err(internal)?;
    Ok((manifest, out))
}

#[derive(Clone, Debug)]
pub struct Rerun {
    pub original: ExperimentManifest,
    pub fresh: ExperimentManifest,
    /// Files whose digests differ or are missing.
    pub mismatches: Vec<String>,
}

impl Rerun {
    pub fn identical(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Execute the experiment recorded in a manifest again, into `out_dir`, and
/// compare digests.
pub fn rerun_from_manifest(manifest: &Path, out_dir: &Path) -> Result<Rerun, CliError> {
    let text = std::fs::read_to_string(manifest).map_err(config_err)?;
    let original: ExperimentManifest = serde_json::from_str(&text).map_err(config_err)?;
    let argv = vec!["rerun".to_string(), manifest.to_string_lossy().into_owned()];
    let (fresh, _) = run_to_dir(&original.experiment, &argv, out_dir)?;
    let mut mismatches = Vec::new();
    for d in &original.outputs {
        if !fresh.outputs.contains(d) {
            mismatches.push(d.file.clone());
        }
    }
    for d in &fresh.outputs {
        if !original.outputs.iter().any(|o| o.file == d.file) {
            mismatches.push(d.file.clone());
        }
    }
    Ok(Rerun {
        original,
        fresh,
        mismatches,
    })
}

// ---------------------------------------------------------------- argv

#[derive(Parser, Debug)]
#[command(
    name = "combustion-lab",
    version,
    about = "Growth-process simulations and series diagnostics"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Classify the spread rate of a particle-count law.
    Classify(ClassifyArgs),
    /// Simulate the growth process.
    Simulate(SimulateArgs),
    /// Wet/dry labelling of one-sided Boolean percolation.
    Tadbp(TadbpArgs),
    /// Speed-record bounds against Monte Carlo.
    Walks(WalksArgs),
    /// Maximal lattice animals over speed-record weights.
    Animals(AnimalsArgs),
    /// Plots and a summary table from simulate outputs.
    Report(ReportArgs),
    /// Re-run the experiment recorded in a manifest and compare digests.
    Rerun(RerunArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// Output directory; without it the summary goes to stdout and the
    /// manifest to stderr.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Full config for this subcommand as JSON; other flags are ignored.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ClassifyArgs {
    #[command(flatten)]
    common: Common,
    /// Law as JSON, or @file.
    #[arg(long, required_unless_present = "config")]
    dist: Option<String>,
    #[arg(long, required_unless_present = "config")]
    dim: Option<u32>,
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
    #[arg(long)]
    m_max_i: Option<u64>,
    #[arg(long)]
    m_max_ii: Option<u64>,
    #[arg(long)]
    n_max_iii: Option<u64>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, required_unless_present = "config")]
    dist: Option<String>,
    #[arg(long, required_unless_present = "config")]
    dim: Option<u32>,
    #[arg(long, default_value_t = 100.0)]
    horizon: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    event_cap: Option<u64>,
    #[arg(long)]
    site_cap: Option<u64>,
    #[arg(long)]
    eta_cap: Option<u64>,
    #[arg(long)]
    particle_cap: Option<u64>,
    #[arg(long)]
    cadence: Option<f64>,
    /// Also run the trimmed process in the same environment.
    #[arg(long)]
    trimmed: bool,
    #[arg(long)]
    keep_sites: bool,
}

#[derive(Args, Debug)]
struct TadbpArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, required_unless_present = "config")]
    psi: Option<String>,
    /// `z` or `zplus`.
    #[arg(long, default_value = "zplus")]
    domain: String,
    #[arg(long, default_value_t = 0)]
    start: i64,
    #[arg(long, default_value_t = 100_000)]
    len: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100_000)]
    k_max: u64,
    #[arg(long, default_value_t = 0)]
    chain_steps: u64,
    #[arg(long)]
    no_sites: bool,
}

#[derive(Args, Debug)]
struct WalksArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, required_unless_present = "config")]
    eps: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    ns: Option<Vec<u64>>,
    #[arg(long, default_value_t = 100_000)]
    trials: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct AnimalsArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, required_unless_present = "config")]
    dist: Option<String>,
    #[arg(long, default_value_t = 2)]
    dim: u32,
    #[arg(long, value_delimiter = ',')]
    a_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    n_grid: Option<Vec<usize>>,
    #[arg(long, default_value_t = 5)]
    trials: u64,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 10_000)]
    eta_cap: u64,
    #[arg(long, default_value_t = 64)]
    beam: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[command(flatten)]
    common: Common,
    /// simulate.json files or snapshot CSVs.
    inputs: Vec<PathBuf>,
}

#[derive(Args, Debug)]
struct RerunArgs {
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn parse_dist(text: &str) -> Result<DistSpec, CliError> {
    let body = match text.strip_prefix('@') {
        Some(p) => std::fs::read_to_string(p).map_err(|e| config_err(format!("{p}: {e}")))?,
        None => text.to_string(),
    };
    serde_json::from_str(&body).map_err(|e| config_err(format!("bad distribution JSON: {e}")))
}

fn load_config<T: for<'de> Deserialize<'de>>(p: &Path) -> Result<T, CliError> {
    let text =
        std::fs::read_to_string(p).map_err(|e| config_err(format!("{}: {e}", p.display())))?;
    serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", p.display())))
}

fn req<T>(v: Option<T>, name: &str) -> Result<T, CliError> {
    v.ok_or_else(|| config_err(format!("missing --{name}")))
}

fn build(cmd: Cmd) -> Result<(Experiment, Option<PathBuf>), CliError> {
    Ok(match cmd {
        Cmd::Classify(a) => {
            let exp = match &a.common.config {
                Some(p) => load_config(p)?,
                None => {
                    let mut budgets = Budgets::default();
                    if let Some(v) = a.m_max_i {
                        budgets.m_max_i = v;
                    }
                    if let Some(v) = a.m_max_ii {
                        budgets.m_max_ii = v;
                    }
                    if let Some(v) = a.n_max_iii {
                        budgets.n_max_iii = v;
                    }
                    ClassifyConfig {
                        dist: parse_dist(&req(a.dist, "dist")?)?,
                        dim: req(a.dim, "dim")?,
                        grid: a.grid.unwrap_or_else(default_grid),
                        budgets,
                    }
                }
            };
            (Experiment::Classify(exp), a.common.out)
        }
        Cmd::Simulate(a) => {
            let exp = match &a.common.config {
                Some(p) => load_config(p)?,
                None => {
                    let mut sim = SimulationConfig::new(
                        req(a.dim, "dim")?,
                        parse_dist(&req(a.dist, "dist")?)?,
                        a.horizon,
                        a.seed,
                    );
                    if let Some(v) = a.event_cap {
                        sim.event_cap = v;
                    }
                    if let Some(v) = a.site_cap {
                        sim.site_cap = v;
                    }
                    if let Some(v) = a.eta_cap {
                        sim.eta_cap = v;
                    }
                    if let Some(v) = a.particle_cap {
                        sim.particle_cap = v;
                    }
                    if let Some(v) = a.cadence {
                        sim.record_cadence = v;
                    }
                    sim.keep_sites = a.keep_sites;
                    SimulateConfig {
                        sim,
                        trimmed: a.trimmed,
                        gap_c: d_gap_c(),
                        gap_x_min: d_gap_x_min(),
                        gap_eps: d_gap_eps(),
                    }
                }
            };
            (Experiment::Simulate(exp), a.common.out)
        }
        Cmd::Tadbp(a) => {
            let exp = match &a.common.config {
                Some(p) => load_config(p)?,
                None => TadbpConfig {
                    psi: parse_dist(&req(a.psi, "psi")?)?,
                    domain: match a.domain.as_str() {
                        "z" => Domain::Z,
                        "zplus" => Domain::ZPlus,
                        other => return Err(config_err(format!("unknown domain {other}"))),
                    },
                    start: a.start,
                    len: a.len,
                    seed: a.seed,
                    k_max: a.k_max,
                    chain_steps: a.chain_steps,
                    batches: d_batches(),
                    write_sites: !a.no_sites,
                },
            };
            (Experiment::Tadbp(exp), a.common.out)
        }
        Cmd::Walks(a) => {
            let exp = match &a.common.config {
                Some(p) => load_config(p)?,
                None => WalksConfig {
                    eps: req(a.eps, "eps")?,
                    ns: a.ns.unwrap_or_else(d_ns),
                    trials: a.trials,
                    seed: a.seed,
                },
            };
            (Experiment::Walks(exp), a.common.out)
        }
        Cmd::Animals(a) => {
            let exp = match &a.common.config {
                Some(p) => load_config(p)?,
                None => AnimalsConfig {
                    mu: parse_dist(&req(a.dist, "dist")?)?,
                    dim: a.dim,
                    a_grid: a.a_grid.unwrap_or_else(d_a_grid),
                    n_grid: a.n_grid.unwrap_or_else(d_n_grid),
                    trials: a.trials,
                    tol: a.tol,
                    eta_cap: a.eta_cap,
                    beam: a.beam,
                    seed: a.seed,
                },
            };
            (Experiment::Animals(exp), a.common.out)
        }
        Cmd::Report(a) => {
            let exp = match &a.common.config {
                Some(p) => load_config(p)?,
                None => ReportConfig { inputs: a.inputs },
            };
            (Experiment::Report(exp), a.common.out)
        }
        Cmd::Rerun(_) => unreachable!("handled by the caller"),
    })
}

/// Size the global rayon pool from the environment.
pub fn init_threads() {
    if let Some(n) = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
}

/// Parse `argv`, run, and return the process exit code.
pub fn main_with_args(argv: Vec<OsString>) -> i32 {
    let args: Vec<String> = argv
        .iter()
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    init_threads();
    if let Cmd::Rerun(r) = cli.cmd {
        return match rerun_from_manifest(&r.manifest, &r.out) {
            Ok(rr) if rr.identical() => {
                println!("identical: {} files", rr.fresh.outputs.len());
                EXIT_OK
            }
            Ok(rr) => {
                eprintln!("outputs differ: {}", rr.mismatches.join(", "));
                EXIT_INTERNAL
            }
            Err(e) => {
                eprintln!("{e}");
                e.exit_code()
            }
        };
    }
    let (exp, out) = match build(cli.cmd) {
        Ok(x) => x,
        Err(e) => {
            eprintln!("{e}");
            return e.exit_code();
        }
    };
    let result = match &out {
        Some(dir) => run_to_dir(&exp, &args, dir).map(|(m, o)| (Some(m), o)),
        None => execute(&exp).map(|o| (None, o)),
    };
    match result {
        Ok((manifest, o)) => {
            println!(
                "{}",
                serde_json::to_string_pretty(&o.summary).unwrap_or_default()
            );
            if manifest.is_none() {
                let m = json!({
                    "experiment_id": experiment_id(&exp),
                    "op": exp.op(),
                    "argv": args,
                    "experiment": exp,
                    "outputs": o.files.iter().map(|(n, b)| digest(n, b)).collect::<Vec<_>>(),
                });
                eprintln!("{m}");
            }
            if o.explosion_suspected {
                eprintln!("termination: ExplosionSuspected");
            }
            exit_for(&o)
        }
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
