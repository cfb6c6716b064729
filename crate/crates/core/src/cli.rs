//! Subcommand orchestration and result emission.
//!
//! Every table is written as CSV (and optionally JSON) into the output
//! directory. CSV files start with `#` metadata lines followed by a header
//! row; floats carry 17 significant digits.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::chain_algebra::solve_poisson;
use crate::config::{Environment, ExperimentConfig, Format};
use crate::homogenize::{homogenize_chain, homogenize_periodic};
use crate::martingale::{empirical_tail_grid, DecompositionSetup};
use crate::mdp::{mdp_scan, negligibility_scan, Functional, ScanResult};
use crate::parallel::{map_replicas, Threads};
use crate::rng;
use crate::sde::{cell_budget_diagnostic, girsanov_log_weight, simulate_euler, simulate_timechange, Scheme};
use crate::stats::Moments;

/// Significance multiplier for the statistical checks of `verify-decomposition`.
pub const VERIFY_Z: f64 = 3.0;
/// Tolerance on the decomposition identity.
pub const IDENTITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Homogenize,
    Simulate,
    VerifyDecomposition,
    TailBounds,
    MdpScan,
    NegligibilityScan,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Homogenize => "homogenize",
            Command::Simulate => "simulate",
            Command::VerifyDecomposition => "verify-decomposition",
            Command::TailBounds => "tail-bounds",
            Command::MdpScan => "mdp-scan",
            Command::NegligibilityScan => "negligibility-scan",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
}

/// Successful run; `checks_passed` is false when a verify mode found a failure.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub checks_passed: bool,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Validation(#[from] crate::Error),
    #[error("{0}")]
    Io(#[from] io::Error),
}

impl CliError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(e) if e.is_validation() => 2,
            _ => 1,
        }
    }
}

/// Exit status: 0 success, 2 validation error, 3 statistical check failure.
pub fn exit_code(result: &Result<Outcome, CliError>) -> i32 {
    match result {
        Ok(o) if o.checks_passed => 0,
        Ok(_) => 3,
        Err(e) => e.exit_code(),
    }
}

/// A result table: column names plus preformatted cells.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Float(f64),
    Int(u64),
    Text(String),
    Bool(bool),
    Empty,
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map(Cell::Float).unwrap_or(Cell::Empty)
    }
}

/// Formats a float with 17 significant digits.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Float(v) => format_float(*v),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Bool(b) => b.to_string(),
            Cell::Empty => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Float(v) if v.is_finite() => Value::from(*v),
            Cell::Float(_) | Cell::Empty => Value::Null,
            Cell::Int(v) => Value::from(*v),
            Cell::Text(s) => Value::from(s.clone()),
            Cell::Bool(b) => Value::from(*b),
        }
    }
}

impl Table {
    pub fn new(columns: Vec<&'static str>) -> Self {
        Self { columns, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// Header row plus data rows, without metadata.
    pub fn csv_body(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(Cell::csv).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn json(&self) -> Value {
        Value::Array(
            self.rows
                .iter()
                .map(|row| {
                    let mut obj = Map::new();
                    for (c, v) in self.columns.iter().zip(row) {
                        obj.insert(c.to_string(), v.json());
                    }
                    Value::Object(obj)
                })
                .collect(),
        )
    }
}

struct Emitter {
    dir: PathBuf,
    formats: Vec<Format>,
    metadata: Vec<String>,
    files: Vec<PathBuf>,
}

impl Emitter {
    fn write(&mut self, stem: &str, table: &Table) -> io::Result<()> {
        fs::create_dir_all(&self.dir)?;
        for format in &self.formats {
            let (path, text) = match format {
                Format::Csv => {
                    let mut text: String = self.metadata.iter().map(|m| format!("# {m}\n")).collect();
                    text.push_str(&table.csv_body());
                    (self.dir.join(format!("{stem}.csv")), text)
                }
                Format::Json => {
                    let doc = serde_json::json!({ "metadata": self.metadata, "rows": table.json() });
                    let mut text = serde_json::to_string_pretty(&doc).map_err(io::Error::other)?;
                    text.push('\n');
                    (self.dir.join(format!("{stem}.json")), text)
                }
            };
            fs::write(&path, text)?;
            self.files.push(path);
        }
        Ok(())
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Loads the configuration, applies overrides and runs `command`.
pub fn run(command: Command, opts: &RunOptions) -> Result<Outcome, CliError> {
    let text = fs::read_to_string(&opts.config)?;
    let mut cfg = ExperimentConfig::from_json(&text)?;
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    let threads = opts.threads.map(Threads::new).unwrap_or_default();
    let dir = opts.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    let mut emitter = Emitter {
        dir,
        formats: cfg.output.formats.clone(),
        metadata: vec![
            format!("tool: mdpsim {}", env!("CARGO_PKG_VERSION")),
            format!("subcommand: {}", command.name()),
            format!("config_sha256: {}", sha256_hex(text.as_bytes())),
            format!("seed: {}", cfg.seed),
        ],
        files: Vec::new(),
    };
    let passed = execute(command, &cfg, threads, &mut emitter)?;
    Ok(Outcome { files: emitter.files, checks_passed: passed })
}

fn execute(command: Command, cfg: &ExperimentConfig, threads: Threads, out: &mut Emitter) -> Result<bool, CliError> {
    match command {
        Command::Homogenize => {
            out.write("homogenize", &homogenize_table(cfg)?)?;
            Ok(true)
        }
        Command::Simulate => {
            out.write("paths", &simulate_table(cfg, threads)?)?;
            Ok(true)
        }
        Command::VerifyDecomposition => {
            let (table, passed) = decomposition_table(cfg, threads)?;
            out.write("decomposition", &table)?;
            Ok(passed)
        }
        Command::TailBounds => {
            let (table, passed) = tail_table(cfg, threads)?;
            out.write("tail_bounds", &table)?;
            Ok(passed)
        }
        Command::MdpScan => {
            let source = cfg.environment()?.source()?;
            let scan_cfg = cfg.scan_config()?;
            warn_cell_budget(cfg, &source)?;
            let estimator = cfg.scan.as_ref().map(|s| s.estimator).unwrap();
            let result = mdp_scan(&source, &scan_cfg, estimator, threads)?;
            out.write("mdp_scan", &scan_table(&result))?;
            Ok(true)
        }
        Command::NegligibilityScan => {
            let source = cfg.environment()?.source()?;
            let scan_cfg = cfg.scan_config()?;
            warn_cell_budget(cfg, &source)?;
            let which = cfg.scan.as_ref().and_then(|s| s.which);
            let list = match which {
                Some(w) => vec![w],
                None => vec![Functional::Drift, Functional::Diffusion],
            };
            for w in list {
                let result = negligibility_scan(&source, &scan_cfg, w, threads)?;
                let stem = match w {
                    Functional::Drift => "negligibility_drift",
                    Functional::Diffusion => "negligibility_diffusion",
                };
                out.write(stem, &scan_table(&result))?;
            }
            Ok(true)
        }
    }
}

fn warn_cell_budget(cfg: &ExperimentConfig, source: &crate::mdp::EnvSource) -> crate::Result<()> {
    let sim = cfg.simulation()?;
    let sigma_max = match cfg.environment()? {
        Environment::Chain(spec) => spec.states().iter().fold(0.0f64, |a, s| a.max(s.abs())),
        Environment::Periodic(p) => p.sigma_table().iter().fold(0.0f64, |a, s| a.max(s.abs())),
    };
    for p in cfg.simulation_params()? {
        if let Some(msg) = cell_budget_diagnostic(&p, sigma_max, source.drift_max(), sim.cell_budget) {
            eprintln!("warning: {msg}");
        }
    }
    Ok(())
}

pub fn homogenize_table(cfg: &ExperimentConfig) -> crate::Result<Table> {
    let mut t = Table::new(vec!["quantity", "index", "value"]);
    match cfg.environment()? {
        Environment::Chain(spec) => {
            let c = homogenize_chain(&spec)?;
            t.push(vec!["b_eff".into(), Cell::Empty, c.b_eff.into()]);
            t.push(vec!["a_eff".into(), Cell::Empty, c.a_eff.into()]);
            let pi = crate::env::stationary_dist(&spec)?;
            for (i, p) in pi.iter().enumerate() {
                t.push(vec!["pi".into(), i.into(), (*p).into()]);
            }
            let observables = cfg.observables(&spec)?;
            for (label, f) in observables {
                let dec = solve_poisson(&spec, &f)?;
                for (i, v) in f.values().iter().enumerate() {
                    t.push(vec![format!("theta_{label}").into(), i.into(), (*v).into()]);
                }
                for (i, v) in dec.h.iter().enumerate() {
                    t.push(vec![format!("h_{label}").into(), i.into(), (*v).into()]);
                }
                t.push(vec![format!("K_{label}").into(), Cell::Empty, dec.jump_bound.into()]);
                for (i, v) in dec.qv_density.iter().enumerate() {
                    t.push(vec![format!("m_{label}").into(), i.into(), (*v).into()]);
                }
            }
        }
        Environment::Periodic(env) => {
            let c = homogenize_periodic(&env)?;
            t.push(vec!["b_eff".into(), Cell::Empty, c.b_eff.into()]);
            t.push(vec!["a_eff".into(), Cell::Empty, c.a_eff.into()]);
            t.push(vec!["quadrature_error".into(), Cell::Empty, c.quadrature_error.into()]);
        }
    }
    Ok(t)
}

pub fn simulate_table(cfg: &ExperimentConfig, threads: Threads) -> crate::Result<Table> {
    let sim = cfg.simulation()?;
    let source = cfg.environment()?.source()?;
    let mut t = Table::new(vec!["epsilon", "path", "scheme", "t", "x", "log_weight"]);
    for (row, params) in cfg.simulation_params()?.into_iter().enumerate() {
        let paths = map_replicas(sim.paths, threads, |i| {
            let seed = rng::replica_seed(cfg.seed, row as u64, i);
            let env_seed = if sim.quenched { rng::replica_seed(cfg.seed, u64::MAX, 0) } else { seed };
            let p = params.with_seed(seed);
            source.with_env(env_seed, |env| -> crate::Result<_> {
                let path = match sim.scheme {
                    Scheme::Euler => simulate_euler(&p, env, sim.with_drift)?,
                    Scheme::Timechange => simulate_timechange(&p, env)?,
                };
                let weight = if path.with_drift { None } else { Some(girsanov_log_weight(&path, &p, env)?) };
                Ok((path, weight))
            })
        });
        for (i, res) in paths.into_iter().enumerate() {
            let (path, weight) = res?;
            let last = path.times.len() - 1;
            for k in (0..path.times.len()).filter(|k| k % sim.record_every == 0 || *k == last) {
                t.push(vec![
                    params.epsilon.into(),
                    i.into(),
                    path.scheme.as_str().into(),
                    path.times[k].into(),
                    path.values[k].into(),
                    if k == last { weight.into() } else { Cell::Empty },
                ]);
            }
        }
    }
    Ok(t)
}

pub fn decomposition_table(cfg: &ExperimentConfig, threads: Threads) -> crate::Result<(Table, bool)> {
    let spec = match cfg.environment()? {
        Environment::Chain(spec) => spec,
        Environment::Periodic(_) => {
            return Err(crate::Error::Config("verify-decomposition needs a chain environment".into()))
        }
    };
    let mblock = cfg.martingale()?;
    let mut t = Table::new(vec![
        "observable",
        "n",
        "horizon",
        "K",
        "max_jump",
        "max_identity_residual",
        "mean_M",
        "stderr_mean_M",
        "var_rate",
        "stderr_var_rate",
        "predicted_var_rate",
        "passed",
    ]);
    let mut all_passed = true;
    for (label, f) in cfg.observables(&spec)? {
        let setup = DecompositionSetup::new(&spec, &f)?;
        let stats = map_replicas(mblock.replicas, threads, |i| {
            let s = setup.sample(mblock.horizon, rng::replica_seed(cfg.seed, 0, i));
            (s.terminal_m(), s.identity_residual(), s.max_jump)
        });
        let mean: Moments = stats.iter().map(|s| s.0).collect();
        let var_rate: Moments = stats.iter().map(|s| s.0 * s.0 / mblock.horizon).collect();
        let residual = stats.iter().map(|s| s.1).fold(0.0, f64::max);
        let max_jump = stats.iter().map(|s| s.2).fold(0.0, f64::max);
        let predicted = setup.poisson.mean_qv_rate(setup.stationary());
        let k = setup.poisson.jump_bound;
        let ok_mean = mean.estimate().z_score(0.0) <= VERIFY_Z || mean.stderr() == 0.0;
        let ok_var = (var_rate.mean() - predicted).abs() <= VERIFY_Z * var_rate.stderr();
        let passed = residual <= IDENTITY_TOL && max_jump <= k + 1e-12 && ok_mean && ok_var;
        all_passed &= passed;
        t.push(vec![
            label.into(),
            mblock.replicas.into(),
            mblock.horizon.into(),
            k.into(),
            max_jump.into(),
            residual.into(),
            mean.mean().into(),
            mean.stderr().into(),
            var_rate.mean().into(),
            var_rate.stderr().into(),
            predicted.into(),
            passed.into(),
        ]);
    }
    Ok((t, all_passed))
}

pub fn tail_table(cfg: &ExperimentConfig, threads: Threads) -> crate::Result<(Table, bool)> {
    let spec = match cfg.environment()? {
        Environment::Chain(spec) => spec,
        Environment::Periodic(_) => return Err(crate::Error::Config("tail-bounds needs a chain environment".into())),
    };
    let mblock = cfg.martingale()?;
    let observables = cfg.observables(&spec)?;
    let with_label = observables.len() > 1;
    let mut columns = vec!["r", "q", "K", "n", "freq", "ucl99", "bound", "violated"];
    if with_label {
        columns.insert(0, "observable");
    }
    let mut t = Table::new(columns);
    let mut ok = true;
    for (label, f) in observables {
        let cells = empirical_tail_grid(&spec, &f, mblock.horizon, &mblock.r, &mblock.q, mblock.replicas, cfg.seed, threads)?;
        for c in cells {
            ok &= !c.violated;
            let mut row: Vec<Cell> =
                vec![c.r.into(), c.q.into(), c.k.into(), c.n.into(), c.freq.into(), c.ucl99.into(), c.bound.into(), c.violated.into()];
            if with_label {
                row.insert(0, label.clone().into());
            }
            t.push(row);
        }
    }
    Ok((t, ok))
}

pub fn scan_table(result: &ScanResult) -> Table {
    let mut t = Table::new(vec![
        "epsilon",
        "kappa",
        "eta",
        "estimator",
        "n",
        "p_hat",
        "stderr",
        "neg_rate",
        "predicted_rate",
        "regime_flag",
    ]);
    for r in &result.rows {
        t.push(vec![
            r.epsilon.into(),
            r.kappa.into(),
            r.eta.into(),
            r.estimator.as_str().into(),
            r.n.into(),
            r.p_hat.into(),
            r.stderr.into(),
            r.neg_rate.into(),
            r.predicted_rate.into(),
            r.regime.as_str().into(),
        ]);
    }
    t
}

/// Strips `#` metadata lines from CSV text.
pub fn csv_body(text: &str) -> String {
    text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect()
}

/// Convenience used by tests and scripts: reads an emitted CSV body.
pub fn read_csv_body(path: &Path) -> io::Result<String> {
    Ok(csv_body(&fs::read_to_string(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_significant_digits() {
        assert_eq!(format_float(0.8), "8.0000000000000004e-1");
        assert_eq!(format_float(1.6), "1.6000000000000001e0");
        assert_eq!(format_float(f64::NAN), "NaN");
        let v = 0.1 + 0.2;
        assert_eq!(format_float(v).parse::<f64>().unwrap(), v);
    }

    #[test]
    fn table_csv_has_header() {
        let mut t = Table::new(vec!["a", "b"]);
        t.push(vec![1.5.into(), Cell::Empty]);
        assert_eq!(t.csv_body(), "a,b\n1.5000000000000000e0,\n");
    }

    #[test]
    fn exit_codes() {
        let ok = Ok(Outcome { files: vec![], checks_passed: true });
        let failed = Ok(Outcome { files: vec![], checks_passed: false });
        let invalid: Result<Outcome, CliError> = Err(CliError::Validation(crate::Error::Config("x".into())));
        let io: Result<Outcome, CliError> = Err(CliError::Io(io::Error::other("x")));
        assert_eq!(exit_code(&ok), 0);
        assert_eq!(exit_code(&failed), 3);
        assert_eq!(exit_code(&invalid), 2);
        assert_eq!(exit_code(&io), 1);
    }
}
