//! Experiment specifications and the batch commands behind the `laa-ec`
//! binary. Every command returns a table whose rows carry the full
//! parameter tuple and seed, in grid order.

use std::path::{Path, PathBuf};

use laa_ec::capacity::theta_of_delay;
use laa_ec::optimizer::{DualUpdate, PowerModel, Problem};
use laa_ec::scenario::{generate_scenario, rate_of_power};
use laa_ec::simulator::{estimate_ec_pooled, run};
use laa_ec::{contention, CwMode, LinkModel, ServiceTrace, SimConfig, SystemParams};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] laa_ec::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Analyze,
    Simulate,
    Sweep,
    OptimizeEc,
    OptimizeEee,
    Validate,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Analyze => "analyze",
            Command::Simulate => "simulate",
            Command::Sweep => "sweep",
            Command::OptimizeEc => "optimize-ec",
            Command::OptimizeEee => "optimize-eee",
            Command::Validate => "validate",
        }
    }
}

/// Lists of values to sweep. Empty lists fall back to the base parameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grid {
    pub theta: Vec<f64>,
    pub n_laa: Vec<u32>,
    pub m_wifi: Vec<u32>,
    pub mode: Vec<CwMode>,
    pub d_max: Vec<f64>,
    pub per: Vec<f64>,
}

fn default_seed() -> u64 {
    1
}
fn default_replications() -> u32 {
    1
}
fn default_duration() -> f64 {
    100.0
}
fn default_tolerance() -> f64 {
    0.1
}
fn default_p_th() -> f64 {
    0.1
}
fn default_load() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub command: Command,
    /// Base parameters, inline. Keys ending in `_dbm` are converted.
    #[serde(default)]
    pub params: Option<serde_json::Value>,
    /// Base parameters from a scenario file, relative to the spec file.
    #[serde(default)]
    pub scenario: Option<PathBuf>,
    #[serde(default)]
    pub grid: Grid,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_replications")]
    pub replications: u32,
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    /// Instantaneous rate of the tagged user. When absent it is derived
    /// from the seeded scenario: user 0 of station 0 at an equal power share.
    #[serde(default)]
    pub rate_bps: Option<f64>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Delay-violation probability for `sweep`.
    #[serde(default = "default_p_th")]
    pub p_th: f64,
    /// Arrival rate for `sweep` as a fraction of the mean service rate.
    #[serde(default = "default_load")]
    pub load: f64,
    /// Write per-run event CSVs and summaries for `simulate`.
    #[serde(default)]
    pub write_traces: bool,
}

impl ExperimentSpec {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        spec.check()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut spec = Self::from_json_str(&text)?;
        if let (Some(rel), Some(dir)) = (spec.scenario.as_ref(), path.parent()) {
            if rel.is_relative() {
                spec.scenario = Some(dir.join(rel));
            }
        }
        Ok(spec)
    }

    fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        if self.replications == 0 {
            return bad("replications must be at least 1");
        }
        if self.params.is_some() && self.scenario.is_some() {
            return bad("give either params or scenario, not both");
        }
        let needs_theta = !matches!(self.command, Command::Sweep);
        if needs_theta && self.grid.theta.is_empty() {
            return bad("grid.theta must be non-empty");
        }
        if self.grid.theta.iter().any(|t| !(*t > 0.0)) {
            return bad("grid.theta values must be positive");
        }
        if self.command == Command::Sweep && self.grid.d_max.is_empty() {
            return bad("grid.d_max must be non-empty for sweep");
        }
        if !(self.duration_s > 0.0) || self.rate_bps.is_some_and(|r| !(r >= 0.0)) || !(self.tolerance > 0.0) {
            return bad("duration_s, tolerance must be positive and rate_bps non-negative");
        }
        Ok(())
    }

    pub fn base_params(&self) -> Result<SystemParams> {
        let p = match (&self.params, &self.scenario) {
            (Some(v), _) => SystemParams::from_json_str(&v.to_string()),
            (None, Some(path)) => SystemParams::load(path),
            (None, None) => Ok(SystemParams::default()),
        };
        let p = p.map_err(|e| CliError::Config(e.to_string()))?;
        p.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(p)
    }

    pub fn rate_for(&self, p: &SystemParams) -> Result<f64> {
        if let Some(r) = self.rate_bps {
            return Ok(r);
        }
        let channels = generate_scenario(p, self.seed)?;
        Ok(rate_of_power(p.p_tot_w / f64::from(p.k_users), channels.tagged_gains()[0], p)?)
    }

    /// Cartesian product of mode, N, M and PER in grid order.
    pub fn points(&self) -> Result<Vec<SystemParams>> {
        let base = self.base_params()?;
        let or = |v: &[u32], d: u32| if v.is_empty() { vec![d] } else { v.to_vec() };
        let modes = if self.grid.mode.is_empty() { vec![base.mode] } else { self.grid.mode.clone() };
        let pers = if self.grid.per.is_empty() { vec![base.per] } else { self.grid.per.clone() };
        let mut out = Vec::new();
        for &mode in &modes {
            for &n in &or(&self.grid.n_laa, base.n_laa) {
                for &m in &or(&self.grid.m_wifi, base.m_wifi) {
                    for &per in &pers {
                        let p = SystemParams {
                            mode,
                            n_laa: n,
                            m_wifi: m,
                            per,
                            ..base.clone()
                        };
                        p.validate().map_err(|e| CliError::Config(e.to_string()))?;
                        out.push(p);
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Self-describing CSV output.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&'static str]) -> Self {
        Self {
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| *h == name)
    }

    /// Values of a numeric column; unparsable cells become NaN.
    pub fn floats(&self, name: &str) -> Vec<f64> {
        let i = self.column(name).expect("column exists");
        self.rows.iter().map(|r| r[i].parse().unwrap_or(f64::NAN)).collect()
    }

    pub fn write<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(&self.header)?;
        for r in &self.rows {
            wtr.write_record(r)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Result of a command; `passed` is set by `validate`.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub table: Table,
    pub passed: Option<bool>,
}

fn f(x: f64) -> String {
    format!("{x}")
}

fn point_cells(p: &SystemParams) -> Vec<String> {
    vec![
        p.n_laa.to_string(),
        p.m_wifi.to_string(),
        p.mode.to_string(),
        f(p.per),
    ]
}

fn with_model<T>(
    model: &std::result::Result<LinkModel, String>,
    g: impl FnOnce(&LinkModel) -> laa_ec::Result<T>,
) -> std::result::Result<T, String> {
    let m = model.as_ref().map_err(Clone::clone)?;
    g(m).map_err(|e| e.to_string())
}

const POINT: [&str; 4] = ["n_laa", "m_wifi", "mode", "per"];

fn header(extra: &[&'static str]) -> Vec<&'static str> {
    let mut h = POINT.to_vec();
    h.extend_from_slice(extra);
    h
}

pub fn run_command(spec: &ExperimentSpec, out_dir: Option<&Path>) -> Result<Report> {
    match spec.command {
        Command::Analyze => cmd_analyze(spec),
        Command::Sweep => cmd_sweep(spec),
        Command::Simulate => cmd_simulate(spec, out_dir),
        Command::OptimizeEc => cmd_optimize_ec(spec),
        Command::OptimizeEee => cmd_optimize_eee(spec),
        Command::Validate => cmd_validate(spec),
    }
}

/// Both effective-capacity solvers and the spectral check per grid point.
pub fn cmd_analyze(spec: &ExperimentSpec) -> Result<Report> {
    let points = spec.points()?;
    let mut table = Table::new(&header(&[
        "rate_bps",
        "theta",
        "c_four_state",
        "c_two_state",
        "rel_diff",
        "spectral_defect",
        "error",
    ]));
    let rows: Vec<Result<Vec<Vec<String>>>> = points
        .par_iter()
        .map(|p| {
            let rate = spec.rate_for(p)?;
            let model = contention::solve(p).and_then(|cp| LinkModel::new(p, &cp, p.per)).map_err(|e| e.to_string());
            Ok(spec.grid
                .theta
                .iter()
                .map(|&theta| {
                    let mut row = point_cells(p);
                    row.extend([f(rate), f(theta)]);
                    let res = with_model(&model, |m| {
                        let four = m.ec_four_state(theta, rate)?;
                        let two = m.ec_two_state(theta, rate)?;
                        let defect = m.spectral_check(&four)?;
                        Ok((four.ec, two.ec, defect))
                    });
                    match res {
                        Ok((c4, c2, d)) => {
                            let rel = if c2 > 0.0 { (c4 - c2).abs() / c2 } else { (c4 - c2).abs() };
                            row.extend([f(c4), f(c2), f(rel), f(d), String::new()]);
                        }
                        Err(e) => row.extend(["".into(), "".into(), "".into(), "".into(), e.to_string()]),
                    }
                    row
                })
                .collect())
        })
        .collect();
    for r in rows {
        table.rows.extend(r?);
    }
    Ok(Report { table, passed: None })
}

/// QoS exponent and capacity meeting each delay bound.
pub fn cmd_sweep(spec: &ExperimentSpec) -> Result<Report> {
    let points = spec.points()?;
    let mut table = Table::new(&header(&[
        "rate_bps",
        "p_th",
        "arrival_bps",
        "d_max_s",
        "theta",
        "feasible",
        "ec",
        "error",
    ]));
    let rows: Vec<Result<Vec<Vec<String>>>> = points
        .par_iter()
        .map(|p| {
            let rate = spec.rate_for(p)?;
            let model = contention::solve(p).and_then(|cp| LinkModel::new(p, &cp, p.per)).map_err(|e| e.to_string());
            Ok(spec.grid
                .d_max
                .iter()
                .map(|&d| {
                    let mut row = point_cells(p);
                    let res = with_model(&model, |m| {
                        let arrival = spec.load * m.mean_service_rate(rate);
                        let dt = theta_of_delay(d, spec.p_th, arrival, m, rate)?;
                        let ec = if dt.theta > 0.0 {
                            m.ec_two_state(dt.theta, rate)?.ec
                        } else {
                            m.mean_service_rate(rate)
                        };
                        Ok((arrival, dt, ec))
                    });
                    row.extend([f(rate), f(spec.p_th)]);
                    match res {
                        Ok((a, dt, ec)) => row.extend([
                            f(a),
                            f(d),
                            f(dt.theta),
                            dt.feasible.to_string(),
                            f(ec),
                            String::new(),
                        ]),
                        Err(e) => row.extend(["".into(), f(d), "".into(), "".into(), "".into(), e.to_string()]),
                    }
                    row
                })
                .collect())
        })
        .collect();
    for r in rows {
        table.rows.extend(r?);
    }
    Ok(Report { table, passed: None })
}

fn replicate(p: &SystemParams, spec: &ExperimentSpec, rate: f64, record: bool) -> Result<Vec<ServiceTrace>> {
    (0..spec.replications)
        .into_par_iter()
        .map(|r| {
            let mut cfg = SimConfig::new(rate, spec.duration_s, spec.seed + u64::from(r));
            cfg.record_events = record;
            Ok(run(p, &cfg)?)
        })
        .collect()
}

/// One row per replication and QoS exponent, with the analytical values
/// alongside the empirical ones.
pub fn cmd_simulate(spec: &ExperimentSpec, out_dir: Option<&Path>) -> Result<Report> {
    let points = spec.points()?;
    let mut table = Table::new(&header(&[
        "rate_bps",
        "duration_s",
        "seed",
        "theta",
        "ec_sim",
        "half_width",
        "ec_analysis",
        "throughput_bps",
        "tx_frequency",
        "v_laa",
        "collision_fraction",
        "p_laa",
    ]));
    let record = spec.write_traces && out_dir.is_some();
    let per_point: Vec<Result<Vec<Vec<String>>>> = points
        .par_iter()
        .enumerate()
        .map(|(pi, p)| {
            let rate = spec.rate_for(p)?;
            let cp = contention::solve(p)?;
            let model = LinkModel::new(p, &cp, p.per)?;
            let traces = replicate(p, spec, rate, record)?;
            let mut rows = Vec::new();
            for (r, t) in traces.iter().enumerate() {
                if let (true, Some(dir)) = (record, out_dir) {
                    let stem = dir.join("traces").join(format!("point{pi}_seed{}", t.config.seed));
                    std::fs::create_dir_all(stem.parent().unwrap())?;
                    t.write_events_csv(std::fs::File::create(stem.with_extension("csv"))?)?;
                    std::fs::write(stem.with_extension("json"), serde_json::to_string_pretty(&t.summary())?)?;
                }
                for &theta in &spec.grid.theta {
                    let est = estimate_ec_pooled(std::slice::from_ref(t), theta);
                    let (ec, hw) = est.map(|e| (f(e.ec), f(e.half_width))).unwrap_or_default();
                    let mut row = point_cells(p);
                    row.extend([
                        f(rate),
                        f(spec.duration_s),
                        (spec.seed + r as u64).to_string(),
                        f(theta),
                        ec,
                        hw,
                        f(model.ec_two_state(theta, rate)?.ec),
                        f(t.throughput()),
                        f(t.tagged.tx_frequency()),
                        f(cp.v_laa),
                        f(t.tagged.collision_fraction()),
                        f(cp.p_laa),
                    ]);
                    rows.push(row);
                }
            }
            Ok(rows)
        })
        .collect();
    for rows in per_point {
        table.rows.extend(rows?);
    }
    Ok(Report { table, passed: None })
}

/// Analysis against pooled simulation; a row passes when the relative
/// error is within the tolerance.
pub fn cmd_validate(spec: &ExperimentSpec) -> Result<Report> {
    let points = spec.points()?;
    let mut table = Table::new(&header(&[
        "rate_bps",
        "duration_s",
        "seed",
        "replications",
        "theta",
        "ec_sim",
        "half_width",
        "ec_analysis",
        "rel_err",
        "tolerance",
        "pass",
    ]));
    let per_point: Vec<Result<Vec<(Vec<String>, bool)>>> = points
        .par_iter()
        .map(|p| {
            let rate = spec.rate_for(p)?;
            let cp = contention::solve(p)?;
            let model = LinkModel::new(p, &cp, p.per)?;
            let traces = replicate(p, spec, rate, false)?;
            spec.grid
                .theta
                .iter()
                .map(|&theta| {
                    let est = estimate_ec_pooled(&traces, theta)?;
                    let ec = model.ec_two_state(theta, rate)?.ec;
                    let rel = (est.ec - ec).abs() / ec;
                    let pass = rel <= spec.tolerance;
                    let mut row = point_cells(p);
                    row.extend([
                        f(rate),
                        f(spec.duration_s),
                        spec.seed.to_string(),
                        spec.replications.to_string(),
                        f(theta),
                        f(est.ec),
                        f(est.half_width),
                        f(ec),
                        f(rel),
                        f(spec.tolerance),
                        pass.to_string(),
                    ]);
                    Ok((row, pass))
                })
                .collect()
        })
        .collect();
    let mut all = true;
    for rows in per_point {
        for (row, pass) in rows? {
            all &= pass;
            table.rows.push(row);
        }
    }
    Ok(Report { table, passed: Some(all) })
}

const ALLOCATION: [&str; 8] = [
    "k_users",
    "bandwidth_hz",
    "p_tot_w",
    "seed",
    "theta",
    "method",
    "total_power_w",
    "converged",
];

fn allocation_rows(
    spec: &ExperimentSpec,
    extra: &[&'static str],
    each: impl Fn(&SystemParams, &Problem, &contention::ContentionPoint) -> Result<Vec<(&'static str, f64, bool, Vec<f64>)>>
        + Sync,
) -> Result<Report> {
    let points = spec.points()?;
    let mut h = header(&ALLOCATION);
    h.extend_from_slice(extra);
    let mut table = Table::new(&h);
    let work: Vec<(usize, f64)> = (0..points.len())
        .flat_map(|i| spec.grid.theta.iter().map(move |&t| (i, t)))
        .collect();
    let rows: Vec<Result<Vec<Vec<String>>>> = work
        .par_iter()
        .map(|&(i, theta)| {
            let p = &points[i];
            let cp = contention::solve(p)?;
            let channels = generate_scenario(p, spec.seed)?;
            let problem = Problem::new(&channels, theta, p, &cp)?;
            let mut rows = Vec::new();
            for (method, power, converged, values) in each(p, &problem, &cp)? {
                let mut row = point_cells(p);
                row.extend([
                    p.k_users.to_string(),
                    f(p.bandwidth_hz),
                    f(p.p_tot_w),
                    spec.seed.to_string(),
                    f(theta),
                    method.to_string(),
                    f(power),
                    converged.to_string(),
                ]);
                row.extend(values.into_iter().map(f));
                rows.push(row);
            }
            Ok(rows)
        })
        .collect();
    for r in rows {
        table.rows.extend(r?);
    }
    Ok(Report { table, passed: None })
}

/// Sum effective capacity of the proposed allocation and both baselines on
/// a seeded scenario.
pub fn cmd_optimize_ec(spec: &ExperimentSpec) -> Result<Report> {
    allocation_rows(spec, &["sum_ec", "duality_gap", "kkt_residual"], |_, problem, _| {
        let opt = problem.maximize_ec(DualUpdate::Bisection)?;
        let wf = problem.water_filling()?;
        let ci = problem.channel_inversion()?;
        Ok(vec![
            ("proposed", opt.total_power(), opt.converged, vec![opt.objective, opt.duality_gap, opt.kkt_residual]),
            ("water_filling", wf.total_power(), true, vec![wf.objective, f64::NAN, f64::NAN]),
            ("channel_inversion", ci.total_power(), true, vec![ci.objective, f64::NAN, f64::NAN]),
        ])
    })
}

/// Effective energy efficiency of the proposed allocation and both
/// baselines.
pub fn cmd_optimize_eee(spec: &ExperimentSpec) -> Result<Report> {
    allocation_rows(spec, &["eee", "sum_ec", "average_power_w", "dinkelbach_iterations"], |p, problem, cp| {
        let energy = PowerModel::new(p, cp)?;
        let opt = problem.maximize_eee(&energy, DualUpdate::Bisection)?;
        let mut out = vec![(
            "proposed",
            opt.total_power(),
            opt.converged,
            vec![
                opt.objective,
                opt.total_capacity(),
                energy.average_power(opt.total_power()),
                opt.omega_history.len() as f64,
            ],
        )];
        for (name, a) in [("water_filling", problem.water_filling()?), ("channel_inversion", problem.channel_inversion()?)] {
            out.push((
                name,
                a.total_power(),
                true,
                vec![
                    problem.eee(&a, &energy),
                    a.total_capacity(),
                    energy.average_power(a.total_power()),
                    f64::NAN,
                ],
            ));
        }
        Ok(out)
    })
}
