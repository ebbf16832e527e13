//! Configuration files, single runs and sweeps, and CSV output.
//!
//! Config files are flat `key = value` lines with `#` comments. Flag
//! overrides (`--set key=value`) win over the file, which wins over the
//! built-in defaults.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::engine::{run, EngineError};
use crate::metrics::{MeanStd, SimReport, SliceStats};
use crate::sched::Policy;
use crate::traffic::ScenarioParams;

pub const CSV_HEADER: &str =
    "policy,request_rate,seed,class,submitted,served,expired,service_ratio,mean_response_us,mean_broadcast_size";

pub const THREADS_ENV: &str = "RSU_SCHED_THREADS";

/// Where a setting came from, for error messages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Origin {
    Default,
    File { path: String, line: usize },
    Flag,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::Default => f.write_str("default"),
            Origin::File { path, line } => write!(f, "{path}:{line}"),
            Origin::Flag => f.write_str("command line"),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("config error at {origin}: `{key}`: {message}")]
pub struct ConfigError {
    pub key: String,
    pub origin: Origin,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("malformed CSV input: {0}")]
    Csv(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

impl CliError {
    /// 2 for configuration problems, 3 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } => 3,
            _ => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Seeds {
    /// `count` consecutive seeds starting at the scenario seed.
    Count(u64),
    List(Vec<u64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub field: String,
    /// Raw values, validated when the config is resolved.
    pub values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub params: ScenarioParams,
    pub policies: Vec<Policy>,
    pub sweep: Option<Sweep>,
    pub seeds: Seeds,
    pub out: Option<PathBuf>,
    /// 0 runs sequentially.
    pub threads: usize,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            params: ScenarioParams::default(),
            policies: vec![Policy::Mlq(crate::sched::BasePolicy::Ds)],
            sweep: None,
            seeds: Seeds::Count(20),
            out: None,
            threads: 0,
        }
    }
}

/// Numeric scenario fields that can be swept.
pub const NUMERIC_KEYS: &[&str] = &[
    "road_length_m",
    "lanes_per_direction",
    "tx_range_m",
    "data_rate_bps",
    "desired_velocity_kmh",
    "velocity_jitter_fraction",
    "request_rate",
    "requests_per_vehicle_mean",
    "num_classes",
    "catalog_size",
    "item_size_min",
    "item_size_max",
    "zipf_skew",
    "download_fraction",
    "duration_s",
    "seed",
];

fn parse_num<T: std::str::FromStr>(v: &str) -> Result<T, String> {
    v.trim().parse::<T>().map_err(|_| format!("malformed value `{v}`"))
}

fn parse_bool(v: &str) -> Result<bool, String> {
    match v.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(format!("expected a boolean, got `{v}`")),
    }
}

fn parse_list<T: std::str::FromStr>(v: &str) -> Result<Vec<T>, String> {
    v.split(',').map(parse_num).collect()
}

/// Sets one scenario field from its textual value. Returns `Ok(false)` if
/// `key` is not a scenario field.
pub fn set_param(p: &mut ScenarioParams, key: &str, value: &str) -> Result<bool, String> {
    match key {
        "road_length_m" => p.road_length_m = parse_num(value)?,
        "lanes_per_direction" => p.lanes_per_direction = parse_num(value)?,
        "tx_range_m" => p.tx_range_m = parse_num(value)?,
        "data_rate_bps" => p.data_rate_bps = parse_num(value)?,
        "desired_velocity_kmh" => p.desired_velocity_kmh = parse_num(value)?,
        "velocity_jitter_fraction" => p.velocity_jitter_fraction = parse_num(value)?,
        "request_rate" => p.request_rate = parse_num(value)?,
        "requests_per_vehicle_mean" => p.requests_per_vehicle_mean = parse_num(value)?,
        "num_classes" => p.num_classes = parse_num(value)?,
        "p_class" => p.p_class = parse_list(value)?,
        "catalog_size" => p.catalog_size = parse_num(value)?,
        "item_size_min" => p.item_size_min = parse_num(value)?,
        "item_size_max" => p.item_size_max = parse_num(value)?,
        "zipf_skew" => p.zipf_skew = parse_num(value)?,
        "download_fraction" => p.download_fraction = parse_num(value)?,
        "duration_s" => p.duration_s = parse_num(value)?,
        "seed" => p.seed = parse_num(value)?,
        "strict_completion" => p.strict_completion = parse_bool(value)?,
        _ => return Ok(false),
    }
    Ok(true)
}

/// Canonical text of a numeric scenario field, as written to CSV.
pub fn param_text(p: &ScenarioParams, key: &str) -> Option<String> {
    Some(match key {
        "road_length_m" => p.road_length_m.to_string(),
        "lanes_per_direction" => p.lanes_per_direction.to_string(),
        "tx_range_m" => p.tx_range_m.to_string(),
        "data_rate_bps" => p.data_rate_bps.to_string(),
        "desired_velocity_kmh" => p.desired_velocity_kmh.to_string(),
        "velocity_jitter_fraction" => p.velocity_jitter_fraction.to_string(),
        "request_rate" => p.request_rate.to_string(),
        "requests_per_vehicle_mean" => p.requests_per_vehicle_mean.to_string(),
        "num_classes" => p.num_classes.to_string(),
        "catalog_size" => p.catalog_size.to_string(),
        "item_size_min" => p.item_size_min.to_string(),
        "item_size_max" => p.item_size_max.to_string(),
        "zipf_skew" => p.zipf_skew.to_string(),
        "download_fraction" => p.download_fraction.to_string(),
        "duration_s" => p.duration_s.to_string(),
        "seed" => p.seed.to_string(),
        _ => return None,
    })
}

pub fn parse_policies(v: &str) -> Result<Vec<Policy>, String> {
    // `mlq(...)` never contains a comma, so a plain split is safe
    v.split(',')
        .map(|s| s.parse::<Policy>().map_err(|e| e.to_string()))
        .collect()
}

pub fn parse_seeds(v: &str) -> Result<Seeds, String> {
    if v.contains(',') {
        Ok(Seeds::List(parse_list(v)?))
    } else {
        let n: u64 = parse_num(v)?;
        if n == 0 {
            return Err("seed count must be at least 1".into());
        }
        Ok(Seeds::Count(n))
    }
}

/// `FIELD=V1,V2,...`
pub fn parse_sweep(v: &str) -> Result<Sweep, String> {
    let (field, values) = v
        .split_once('=')
        .ok_or_else(|| format!("expected FIELD=V1,V2,..., got `{v}`"))?;
    let values: Vec<String> = values.split(',').map(|s| s.trim().to_string()).collect();
    if values.iter().any(String::is_empty) {
        return Err("empty sweep value".into());
    }
    Ok(Sweep { field: field.trim().to_string(), values })
}

/// Builds a [`Config`] from an optional config file body and `key=value`
/// overrides.
#[derive(Debug, Default)]
pub struct ConfigBuilder {
    config: Config,
    origins: BTreeMap<String, Origin>,
}

impl ConfigBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn apply(&mut self, key: &str, value: &str, origin: Origin) -> Result<(), ConfigError> {
        let err = |message: String| ConfigError { key: key.to_string(), origin: origin.clone(), message };
        let c = &mut self.config;
        match key {
            "policy" => c.policies = parse_policies(value).map_err(err)?,
            "seeds" => c.seeds = parse_seeds(value).map_err(err)?,
            "sweep" => c.sweep = Some(parse_sweep(value).map_err(err)?),
            "out" => c.out = Some(PathBuf::from(value.trim())),
            _ => {
                if !set_param(&mut c.params, key, value).map_err(err)? {
                    return Err(err("unknown key".into()));
                }
            }
        }
        self.origins.insert(key.to_string(), origin);
        Ok(())
    }

    /// Applies every `key = value` line of a config file body.
    pub fn file(mut self, path: &str, text: &str) -> Result<Self, ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let origin = Origin::File { path: path.to_string(), line: i + 1 };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError {
                key: line.to_string(),
                origin: origin.clone(),
                message: "expected `key = value`".into(),
            })?;
            self.apply(key.trim(), value.trim(), origin)?;
        }
        Ok(self)
    }

    /// Applies one `key=value` flag override.
    pub fn set(mut self, kv: &str) -> Result<Self, ConfigError> {
        let (key, value) = kv.split_once('=').ok_or_else(|| ConfigError {
            key: kv.to_string(),
            origin: Origin::Flag,
            message: "expected KEY=VALUE".into(),
        })?;
        self.apply(key.trim(), value.trim(), Origin::Flag)?;
        Ok(self)
    }

    pub fn threads(mut self, n: usize) -> Self {
        self.config.threads = n;
        self
    }

    fn origin_of(&self, key: &str) -> Origin {
        self.origins.get(key).cloned().unwrap_or(Origin::Default)
    }

    /// Fills derived defaults and checks every invariant.
    pub fn build(mut self) -> Result<Config, ConfigError> {
        let n = self.config.params.num_classes as usize;
        if !self.origins.contains_key("p_class") && n > 0 && self.config.params.p_class.len() != n {
            self.config.params.p_class = vec![1.0 / n as f64; n];
        }
        self.config.params.validate().map_err(|e| ConfigError {
            key: e.key.to_string(),
            origin: self.origin_of(e.key),
            message: e.reason,
        })?;
        if let Some(sweep) = self.config.sweep.take() {
            let origin = self.origin_of("sweep");
            let err = |message: String| ConfigError { key: "sweep".into(), origin: origin.clone(), message };
            if sweep.field == "policy" {
                self.config.policies = parse_policies(&sweep.values.join(",")).map_err(err)?;
            } else {
                if !NUMERIC_KEYS.contains(&sweep.field.as_str()) {
                    return Err(err(format!("`{}` is not a numeric scenario field", sweep.field)));
                }
                for v in &sweep.values {
                    let mut p = self.config.params.clone();
                    set_param(&mut p, &sweep.field, v).map_err(err)?;
                    p.validate().map_err(|e| err(format!("value {v}: {e}")))?;
                }
                self.config.sweep = Some(sweep);
            }
        }
        if self.config.policies.is_empty() {
            return Err(ConfigError {
                key: "policy".into(),
                origin: self.origin_of("policy"),
                message: "no policy given".into(),
            });
        }
        Ok(self.config)
    }
}

/// Resolves defaults < file < overrides into a validated config.
pub fn parse_config(file: Option<(&str, &str)>, overrides: &[String]) -> Result<Config, ConfigError> {
    let mut b = ConfigBuilder::new();
    if let Some((path, text)) = file {
        b = b.file(path, text)?;
    }
    for kv in overrides {
        b = b.set(kv)?;
    }
    b.build()
}

impl Config {
    pub fn seed_list(&self) -> Vec<u64> {
        match &self.seeds {
            Seeds::Count(n) => (0..*n).map(|i| self.params.seed.wrapping_add(i)).collect(),
            Seeds::List(v) => v.clone(),
        }
    }

    /// Extra CSV column carrying the swept field, when it is not already
    /// one of the standard columns.
    fn extra_column(&self) -> Option<&str> {
        self.sweep
            .as_ref()
            .map(|s| s.field.as_str())
            .filter(|f| *f != "request_rate")
    }

    pub fn csv_header(&self) -> String {
        match self.extra_column() {
            Some(f) => format!("{CSV_HEADER},{f}"),
            None => CSV_HEADER.to_string(),
        }
    }
}

/// One simulation to execute, with its position in the output order.
#[derive(Debug, Clone)]
struct RunUnit {
    params: ScenarioParams,
    policy: Policy,
}

fn units(config: &Config) -> Vec<RunUnit> {
    let sweep_points: Vec<ScenarioParams> = match &config.sweep {
        None => vec![config.params.clone()],
        Some(s) => s
            .values
            .iter()
            .map(|v| {
                let mut p = config.params.clone();
                set_param(&mut p, &s.field, v).expect("sweep values validated");
                p
            })
            .collect(),
    };
    let seeds = config.seed_list();
    let mut out = Vec::new();
    for point in &sweep_points {
        for &policy in &config.policies {
            for &seed in &seeds {
                out.push(RunUnit { params: ScenarioParams { seed, ..point.clone() }, policy });
            }
        }
    }
    out
}

fn opt_fixed6(f: Option<crate::metrics::Fraction>) -> String {
    f.map(|x| x.to_fixed6()).unwrap_or_default()
}

fn slice_row(prefix: &str, class: &str, s: &SliceStats, extra: Option<&str>) -> String {
    let mut row = format!(
        "{prefix},{class},{},{},{},{},{},{}",
        s.submitted,
        s.served,
        s.lost(),
        opt_fixed6(s.service_ratio()),
        opt_fixed6(s.mean_response_us()),
        opt_fixed6(s.mean_broadcast_size()),
    );
    if let Some(e) = extra {
        row.push(',');
        row.push_str(e);
    }
    row
}

/// CSV rows for one run: the overall slice, then one per class.
pub fn report_rows(params: &ScenarioParams, policy: Policy, rep: &SimReport, extra_field: Option<&str>) -> Vec<String> {
    let prefix = format!("{policy},{},{}", params.request_rate, params.seed);
    let extra = extra_field.and_then(|f| param_text(params, f));
    let mut rows = vec![slice_row(&prefix, "all", &rep.overall, extra.as_deref())];
    for (c, s) in rep.per_class.iter().enumerate() {
        rows.push(slice_row(&prefix, &c.to_string(), s, extra.as_deref()));
    }
    rows
}

fn run_units(units: &[RunUnit], threads: usize) -> Result<Vec<SimReport>, CliError> {
    let one = |u: &RunUnit| run(&u.params, u.policy);
    let results: Vec<Result<SimReport, EngineError>> = if threads == 0 {
        units.iter().map(one).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("thread pool");
        pool.install(|| units.par_iter().map(one).collect())
    };
    results.into_iter().map(|r| r.map_err(CliError::from)).collect()
}

/// Runs every (sweep value, policy, seed) combination and returns the CSV
/// text, header included. Rows are ordered by sweep value, policy and seed
/// as configured, then by slice (`all`, `0`, `1`, ...).
pub fn run_sweep(config: &Config) -> Result<String, CliError> {
    let units = units(config);
    let reports = run_units(&units, config.threads)?;
    let extra = config.extra_column();
    let mut out = config.csv_header();
    out.push('\n');
    for (u, rep) in units.iter().zip(&reports) {
        for row in report_rows(&u.params, u.policy, rep, extra) {
            out.push_str(&row);
            out.push('\n');
        }
    }
    Ok(out)
}

/// Single-point run: every configured policy and seed, no sweep.
pub fn run_single(config: &Config) -> Result<String, CliError> {
    if config.sweep.is_some() {
        let c = Config { sweep: None, ..config.clone() };
        return run_sweep(&c);
    }
    run_sweep(config)
}

/// Reports for every configured run in output order, for library callers.
pub fn run_reports(config: &Config) -> Result<Vec<(ScenarioParams, Policy, SimReport)>, CliError> {
    let units = units(config);
    let reports = run_units(&units, config.threads)?;
    Ok(units.into_iter().zip(reports).map(|(u, r)| (u.params, u.policy, r)).collect())
}

const METRIC_COLUMNS: &[&str] = &[
    "seed",
    "submitted",
    "served",
    "expired",
    "service_ratio",
    "mean_response_us",
    "mean_broadcast_size",
];

pub const SUMMARY_METRICS: &str = "runs,submitted_mean,served_mean,expired_mean,service_ratio_mean,service_ratio_std,mean_response_us_mean,mean_response_us_std,mean_broadcast_size_mean,mean_broadcast_size_std";

/// Aggregates a run CSV into one row per distinct key (every column other
/// than the seed and the metrics), keeping first-appearance order.
pub fn summarize_csv(text: &str) -> Result<String, CliError> {
    let mut lines = text.lines().filter(|l| !l.is_empty());
    let header: Vec<&str> = lines.next().ok_or_else(|| CliError::Csv("empty input".into()))?.split(',').collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| CliError::Csv(format!("missing column `{name}`")))
    };
    let metric_idx: Vec<usize> = METRIC_COLUMNS.iter().map(|m| col(m)).collect::<Result<_, _>>()?;
    let key_idx: Vec<usize> = (0..header.len()).filter(|i| !metric_idx.contains(i)).collect();

    let mut order: Vec<Vec<String>> = Vec::new();
    let mut groups: BTreeMap<Vec<String>, Vec<Vec<String>>> = BTreeMap::new();
    for (n, line) in lines.enumerate() {
        let fields: Vec<String> = line.split(',').map(str::to_string).collect();
        if fields.len() != header.len() {
            return Err(CliError::Csv(format!("row {} has {} fields, expected {}", n + 2, fields.len(), header.len())));
        }
        let key: Vec<String> = key_idx.iter().map(|&i| fields[i].clone()).collect();
        let entry = groups.entry(key.clone()).or_default();
        if entry.is_empty() {
            order.push(key);
        }
        entry.push(fields);
    }

    let stat = |rows: &[Vec<String>], name: &str| -> Result<Option<MeanStd>, CliError> {
        let i = col(name)?;
        let xs: Vec<f64> = rows
            .iter()
            .filter(|r| !r[i].is_empty())
            .map(|r| r[i].parse::<f64>().map_err(|_| CliError::Csv(format!("bad {name} value `{}`", r[i]))))
            .collect::<Result<_, _>>()?;
        Ok(MeanStd::from_samples(&xs))
    };
    let mean = |m: &Option<MeanStd>| m.map(|m| format!("{:.6}", m.mean)).unwrap_or_default();
    let std = |m: &Option<MeanStd>| m.and_then(|m| m.std).map(|s| format!("{s:.6}")).unwrap_or_default();

    let key_names: Vec<&str> = key_idx.iter().map(|&i| header[i]).collect();
    let mut out = format!("{},{SUMMARY_METRICS}\n", key_names.join(","));
    for key in order {
        let rows = &groups[&key];
        let submitted = stat(rows, "submitted")?;
        let served = stat(rows, "served")?;
        let expired = stat(rows, "expired")?;
        let ratio = stat(rows, "service_ratio")?;
        let resp = stat(rows, "mean_response_us")?;
        let bcast = stat(rows, "mean_broadcast_size")?;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            key.join(","),
            rows.len(),
            mean(&submitted),
            mean(&served),
            mean(&expired),
            mean(&ratio),
            std(&ratio),
            mean(&resp),
            std(&resp),
            mean(&bcast),
            std(&bcast),
        ));
    }
    Ok(out)
}

/// Writes `text` to `path`, or to stdout when `path` is `None`.
pub fn write_output(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => fs::write(p, text).map_err(|source| CliError::Io { path: p.display().to_string(), source }),
        None => {
            use std::io::Write;
            io::stdout()
                .write_all(text.as_bytes())
                .map_err(|source| CliError::Io { path: "<stdout>".into(), source })
        }
    }
}

pub fn read_input(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io { path: path.display().to_string(), source })
}

/// Thread cap from the environment; absent or unparsable means sequential.
pub fn threads_from_env() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(0)
}
