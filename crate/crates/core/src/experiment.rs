//! Grid search over scenario parameters.
//!
//! An [`ExperimentSpec`] names a base [`ScenarioConfig`], one or more arms
//! (typically one per policy) and grid axes addressed by dotted paths into
//! the JSON form of the config, e.g. `policy.eps.shared.v` or
//! `acc.idm.b_comf`. Every grid cell is run for every seed; the per-cell
//! aggregate is an [`ExperimentRow`].
//!
//! Rows are written as CSV with the columns
//!
//! ```text
//! label, <param paths...>, rho_min, m_mean, m_std, feasible, rho_min_mean, runs, failures
//! ```
//!
//! Parameter columns appear in first-seen order over the rows; a cell is
//! empty when the row has no such parameter. Non-finite robustness values
//! are written as `inf`/`-inf` in CSV and as the strings `"inf"`/`"-inf"` in
//! JSON.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::sim::{run_simulation, ScenarioConfig, SimError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment: {0}")]
    Spec(String),
    #[error("parameter `{path}`: {reason}")]
    Path { path: String, reason: String },
    #[error("arm `{label}`, seed {seed}: {source}")]
    Run {
        label: String,
        seed: u64,
        #[source]
        source: SimError,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },
    #[error("thread pool: {0}")]
    Pool(String),
}

/// One grid dimension. With several paths the axis is zipped: each value
/// is an array holding one entry per path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    #[serde(alias = "path", deserialize_with = "one_or_many")]
    pub paths: Vec<String>,
    pub values: Vec<Value>,
}

impl GridAxis {
    pub fn new(path: impl Into<String>, values: impl IntoIterator<Item = f64>) -> Self {
        Self { paths: vec![path.into()], values: values.into_iter().map(Value::from).collect() }
    }

    pub fn zipped(paths: Vec<String>, values: Vec<Vec<f64>>) -> Self {
        Self {
            paths,
            values: values.into_iter().map(Value::from).collect(),
        }
    }

    fn validate(&self) -> Result<(), ExperimentError> {
        if self.paths.is_empty() || self.values.is_empty() {
            return Err(ExperimentError::Spec("grid axes need at least one path and one value".into()));
        }
        if self.paths.len() > 1 {
            for v in &self.values {
                if v.as_array().map(Vec::len) != Some(self.paths.len()) {
                    return Err(ExperimentError::Spec(format!(
                        "zipped axis {:?} needs arrays of length {}, got {v}",
                        self.paths,
                        self.paths.len()
                    )));
                }
            }
        }
        Ok(())
    }

    fn assignments(&self, i: usize) -> Vec<(String, Value)> {
        if self.paths.len() == 1 {
            vec![(self.paths[0].clone(), self.values[i].clone())]
        } else {
            let vs = self.values[i].as_array().expect("validated");
            self.paths.iter().cloned().zip(vs.iter().cloned()).collect()
        }
    }
}

fn one_or_many<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<String>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(String),
        Many(Vec<String>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(s) => vec![s],
        OneOrMany::Many(v) => v,
    })
}

/// A labelled variant of the base config with its own fixed settings and
/// grid axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arm {
    pub label: String,
    /// Fixed assignments applied before the grid, e.g. a whole `policy`.
    #[serde(default)]
    pub set: BTreeMap<String, Value>,
    #[serde(default)]
    pub grid: Vec<GridAxis>,
}

fn default_seeds() -> Vec<u64> {
    (0..20).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub base: ScenarioConfig,
    /// Label of the implicit single arm when `arms` is empty. Defaults to
    /// the base policy name.
    #[serde(default)]
    pub label: Option<String>,
    /// Axes shared by every arm, varied outermost.
    #[serde(default)]
    pub grid: Vec<GridAxis>,
    #[serde(default)]
    pub arms: Vec<Arm>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Feasibility margin: a cell is feasible when every run stays above it.
    #[serde(default)]
    pub eta: f64,
}

/// A fully resolved grid cell.
#[derive(Debug, Clone)]
pub struct Cell {
    pub label: String,
    pub params: Vec<(String, Value)>,
    pub config: ScenarioConfig,
}

impl ExperimentSpec {
    pub fn new(base: ScenarioConfig, grid: Vec<GridAxis>) -> Self {
        Self { base, label: None, grid, arms: Vec::new(), seeds: default_seeds(), eta: 0.0 }
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self, ExperimentError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|source| ExperimentError::Io { path: path.into(), source })?;
        serde_json::from_reader(BufReader::new(file))
            .map_err(|source| ExperimentError::Json { path: path.into(), source })
    }

    fn arms(&self) -> Vec<Arm> {
        if self.arms.is_empty() {
            vec![Arm {
                label: self.label.clone().unwrap_or_else(|| self.base.policy.name().to_owned()),
                set: BTreeMap::new(),
                grid: Vec::new(),
            }]
        } else {
            self.arms.clone()
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.seeds.is_empty() {
            return Err(ExperimentError::Spec("no seeds".into()));
        }
        for axis in self.grid.iter().chain(self.arms.iter().flat_map(|a| a.grid.iter())) {
            axis.validate()?;
        }
        Ok(())
    }

    /// Every cell in canonical order: arms in declaration order, then the
    /// shared axes, then the arm's axes, the last axis varying fastest.
    pub fn cells(&self) -> Result<Vec<Cell>, ExperimentError> {
        self.validate()?;
        let base = serde_json::to_value(&self.base).expect("config serializes");
        let mut out = Vec::new();
        for arm in self.arms() {
            let axes: Vec<&GridAxis> = self.grid.iter().chain(arm.grid.iter()).collect();
            let mut arm_base = base.clone();
            for (path, value) in &arm.set {
                set_path(&mut arm_base, path, value.clone())?;
            }
            check_paths(&arm_base, arm.set.iter(), &arm.label)?;
            let sizes: Vec<usize> = axes.iter().map(|a| a.values.len()).collect();
            let total: usize = sizes.iter().product();
            for flat in 0..total {
                let mut rem = flat;
                let mut index = vec![0; axes.len()];
                for (slot, size) in index.iter_mut().zip(&sizes).rev() {
                    *slot = rem % size;
                    rem /= size;
                }
                let params: Vec<(String, Value)> =
                    axes.iter().zip(&index).flat_map(|(a, i)| a.assignments(*i)).collect();
                let mut value = arm_base.clone();
                for (path, v) in &params {
                    set_path(&mut value, path, v.clone())?;
                }
                let config = check_paths(&value, params.iter().map(|(p, v)| (p, v)), &arm.label)?;
                out.push(Cell { label: arm.label.clone(), params, config });
            }
        }
        Ok(out)
    }
}

/// Deserializes `value` and confirms that every assignment survived the
/// round trip, which catches misspelled paths that serde would ignore.
fn check_paths<'a>(
    value: &Value,
    assignments: impl Iterator<Item = (&'a String, &'a Value)>,
    label: &str,
) -> Result<ScenarioConfig, ExperimentError> {
    let config: ScenarioConfig = serde_json::from_value(value.clone())
        .map_err(|e| ExperimentError::Spec(format!("arm `{label}`: {e}")))?;
    let back = serde_json::to_value(&config).expect("config serializes");
    for (path, v) in assignments {
        if !same_value(get_path(&back, path), v) {
            return Err(ExperimentError::Path {
                path: path.clone(),
                reason: "no such field in the scenario config".into(),
            });
        }
    }
    Ok(config)
}

fn same_value(found: Option<&Value>, expected: &Value) -> bool {
    match (found, expected) {
        (Some(Value::Number(a)), Value::Number(b)) => a.as_f64() == b.as_f64(),
        (Some(Value::Array(a)), Value::Array(b)) => {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| same_value(Some(x), y))
        }
        (Some(Value::Object(a)), Value::Object(b)) => {
            b.iter().all(|(k, v)| same_value(a.get(k), v))
        }
        (Some(a), b) => a == b,
        (None, _) => false,
    }
}

fn get_path<'a>(root: &'a Value, path: &str) -> Option<&'a Value> {
    path.split('.').try_fold(root, |v, seg| match v {
        Value::Object(map) => map.get(seg),
        Value::Array(items) => seg.parse::<usize>().ok().and_then(|i| items.get(i)),
        _ => None,
    })
}

/// Assigns `value` at a dotted path, creating missing object keys.
fn set_path(root: &mut Value, path: &str, value: Value) -> Result<(), ExperimentError> {
    let err = |reason: &str| ExperimentError::Path { path: path.to_owned(), reason: reason.to_owned() };
    let segs: Vec<&str> = path.split('.').collect();
    if segs.iter().any(|s| s.is_empty()) {
        return Err(err("empty path segment"));
    }
    let mut cur = root;
    for seg in &segs {
        if cur.is_null() {
            *cur = Value::Object(Default::default());
        }
        cur = match cur {
            Value::Object(map) => map.entry(seg.to_string()).or_insert(Value::Null),
            Value::Array(items) => {
                let i: usize = seg.parse().map_err(|_| err("array index expected"))?;
                let len = items.len();
                items.get_mut(i).ok_or_else(|| err(&format!("index {i} out of range ({len})")))?
            }
            _ => return Err(err(&format!("`{seg}` is below a scalar"))),
        };
    }
    *cur = value;
    Ok(())
}

/// Aggregate of one grid cell over all seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub label: String,
    #[serde(with = "param_list")]
    pub params: Vec<(String, Value)>,
    /// Minimum true robustness over all runs; `-inf` when a run collided.
    #[serde(with = "float")]
    pub rho_min: f64,
    /// Mean over completed runs of each run's minimum true robustness.
    #[serde(with = "float")]
    pub rho_min_mean: f64,
    /// Mean event count over completed runs.
    #[serde(with = "float")]
    pub m_mean: f64,
    /// Population standard deviation of the event count.
    #[serde(with = "float")]
    pub m_std: f64,
    pub feasible: bool,
    pub runs: usize,
    /// Runs that ended in a collision.
    pub failures: usize,
}

impl ExperimentRow {
    pub fn param(&self, name: &str) -> Option<&Value> {
        self.params.iter().find(|(k, _)| k == name).map(|(_, v)| v)
    }

    pub fn param_f64(&self, name: &str) -> Option<f64> {
        self.param(name).and_then(Value::as_f64)
    }
}

/// Result of one simulation as seen by the aggregation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RunOutcome {
    Completed { rho_min: f64, events: u64 },
    Collided,
}

/// Folds per-seed outcomes into a row.
pub fn aggregate(label: &str, params: Vec<(String, Value)>, outcomes: &[RunOutcome], eta: f64) -> ExperimentRow {
    let mut rho_min = f64::INFINITY;
    let mut rhos = Vec::new();
    let mut ms = Vec::new();
    let mut failures = 0;
    for o in outcomes {
        match *o {
            RunOutcome::Completed { rho_min: r, events } => {
                rho_min = rho_min.min(r);
                rhos.push(r);
                ms.push(events as f64);
            }
            RunOutcome::Collided => {
                failures += 1;
                rho_min = f64::NEG_INFINITY;
            }
        }
    }
    let mean = |xs: &[f64]| if xs.is_empty() { f64::NAN } else { xs.iter().sum::<f64>() / xs.len() as f64 };
    let m_mean = mean(&ms);
    let m_std = if ms.is_empty() {
        f64::NAN
    } else {
        (ms.iter().map(|m| (m - m_mean).powi(2)).sum::<f64>() / ms.len() as f64).sqrt()
    };
    ExperimentRow {
        label: label.to_owned(),
        params,
        rho_min,
        rho_min_mean: mean(&rhos),
        m_mean,
        m_std,
        feasible: failures == 0 && !outcomes.is_empty() && rho_min > eta,
        runs: outcomes.len(),
        failures,
    }
}

/// Runs every cell for every seed. `jobs` bounds the worker threads; rows
/// come back in canonical cell order regardless of scheduling.
pub fn run_grid(spec: &ExperimentSpec, jobs: Option<usize>) -> Result<Vec<ExperimentRow>, ExperimentError> {
    let cells = spec.cells()?;
    let work: Vec<(usize, u64)> =
        (0..cells.len()).flat_map(|c| spec.seeds.iter().map(move |s| (c, *s))).collect();
    let run = || {
        work.par_iter()
            .map(|&(c, seed)| match run_simulation(&cells[c].config, seed) {
                Ok(r) => Ok(RunOutcome::Completed { rho_min: r.rho_min_true, events: r.total_events }),
                Err(SimError::Collision { .. }) => Ok(RunOutcome::Collided),
                Err(source) => Err(ExperimentError::Run { label: cells[c].label.clone(), seed, source }),
            })
            .collect::<Result<Vec<_>, _>>()
    };
    let outcomes = match jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| ExperimentError::Pool(e.to_string()))?
            .install(run)?,
        None => run()?,
    };
    let per_cell = spec.seeds.len();
    Ok(cells
        .into_iter()
        .zip(outcomes.chunks(per_cell))
        .map(|(cell, chunk)| aggregate(&cell.label, cell.params, chunk, spec.eta))
        .collect())
}

/// Rows not dominated under (larger `rho_min`, smaller `m_mean`), in input
/// order. Of several identical rows only the first is kept.
pub fn pareto_front(rows: &[ExperimentRow]) -> Vec<ExperimentRow> {
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| {
        rows[a]
            .m_mean
            .total_cmp(&rows[b].m_mean)
            .then(rows[b].rho_min.total_cmp(&rows[a].rho_min))
            .then(a.cmp(&b))
    });
    let mut keep = Vec::new();
    let mut best = f64::NEG_INFINITY;
    let mut first = true;
    for i in order {
        let r = rows[i].rho_min;
        if first || r > best {
            keep.push(i);
            best = r;
            first = false;
        }
    }
    keep.sort_unstable();
    keep.into_iter().map(|i| rows[i].clone()).collect()
}

/// Percentage of events saved relative to `reference`.
pub fn reduction_percent(m: f64, reference: f64) -> f64 {
    100.0 * (1.0 - m / reference)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub label: String,
    /// Non-threshold parameters shared by the rows of this summary.
    #[serde(with = "param_list", default)]
    pub context: Vec<(String, Value)>,
    pub rows: usize,
    pub feasible_rows: usize,
    /// Feasible row with the fewest mean events.
    pub best: Option<ExperimentRow>,
    pub reduction_vs_cett: Option<f64>,
    pub reduction_vs_tt: Option<f64>,
}

/// An infeasible row whose thresholds are all at most those of a feasible
/// row of the same label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityViolation {
    pub label: String,
    /// Row index of the infeasible configuration with smaller thresholds.
    pub smaller: usize,
    /// Row index of the feasible configuration with larger thresholds.
    pub larger: usize,
    #[serde(with = "param_list")]
    pub smaller_params: Vec<(String, Value)>,
    #[serde(with = "param_list")]
    pub larger_params: Vec<(String, Value)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub policies: Vec<PolicySummary>,
    #[serde(default)]
    pub monotonicity_violations: Vec<MonotonicityViolation>,
}

/// `1` when larger values give larger thresholds, `-1` for divisors of the
/// threshold, `None` for parameters that do not scale thresholds.
fn threshold_direction(path: &str) -> Option<f64> {
    let segs = || path.split('.');
    if segs().any(|s| s == "delta") {
        Some(1.0)
    } else if segs().any(|s| matches!(s, "eps" | "eps_rho" | "lambda")) {
        Some(-1.0)
    } else {
        None
    }
}

/// Whether `a` has thresholds no larger than `b` in every threshold
/// parameter, strictly smaller in one, and identical other parameters.
fn smaller_thresholds(a: &ExperimentRow, b: &ExperimentRow) -> bool {
    if a.params.len() != b.params.len() {
        return false;
    }
    let mut strict = false;
    for ((ka, va), (kb, vb)) in a.params.iter().zip(&b.params) {
        if ka != kb {
            return false;
        }
        match (threshold_direction(ka), va.as_f64(), vb.as_f64()) {
            (Some(dir), Some(x), Some(y)) => {
                let (x, y) = (x * dir, y * dir);
                if x > y {
                    return false;
                }
                strict |= x < y;
            }
            _ if va != vb => return false,
            _ => {}
        }
    }
    strict
}

/// Pairs where shrinking thresholds turned a feasible configuration into an
/// infeasible one. Smaller thresholds are expected, not guaranteed, to
/// preserve satisfaction, so these are reported rather than rejected.
pub fn monotonicity_violations(rows: &[ExperimentRow]) -> Vec<MonotonicityViolation> {
    let mut out = Vec::new();
    for (i, small) in rows.iter().enumerate().filter(|(_, r)| !r.feasible) {
        for (j, large) in rows.iter().enumerate().filter(|(_, r)| r.feasible) {
            if small.label == large.label && smaller_thresholds(small, large) {
                out.push(MonotonicityViolation {
                    label: small.label.clone(),
                    smaller: i,
                    larger: j,
                    smaller_params: small.params.clone(),
                    larger_params: large.params.clone(),
                });
            }
        }
    }
    out
}

/// Parameters that do not scale thresholds, such as the scenario kind. Rows
/// are only compared within the same label and context.
pub fn context(row: &ExperimentRow) -> Vec<(String, Value)> {
    row.params.iter().filter(|(k, _)| threshold_direction(k).is_none()).cloned().collect()
}

/// Groups rows by label and context, in order of first appearance.
pub fn group_rows(rows: &[ExperimentRow]) -> Vec<Vec<&ExperimentRow>> {
    let mut keys: Vec<(&str, Vec<(String, Value)>)> = Vec::new();
    let mut groups: Vec<Vec<&ExperimentRow>> = Vec::new();
    for r in rows {
        let key = (r.label.as_str(), context(r));
        match keys.iter().position(|k| *k == key) {
            Some(i) => groups[i].push(r),
            None => {
                keys.push(key);
                groups.push(vec![r]);
            }
        }
    }
    groups
}

/// Best feasible row per label and context, and its savings relative to the
/// labels `cett` and `tt` in the same context.
pub fn summarize(rows: &[ExperimentRow]) -> Report {
    summarize_against(rows, "cett", "tt")
}

pub fn summarize_against(rows: &[ExperimentRow], cett: &str, tt: &str) -> Report {
    let best_of = |label: &str, ctx: &[(String, Value)]| {
        rows.iter()
            .filter(|r| r.label == label && r.feasible && context(r) == ctx)
            .min_by(|a, b| a.m_mean.total_cmp(&b.m_mean).then(b.rho_min.total_cmp(&a.rho_min)))
            .cloned()
    };
    let policies = group_rows(rows)
        .into_iter()
        .map(|group| {
            let label = group[0].label.as_str();
            let ctx = context(group[0]);
            let best = best_of(label, &ctx);
            let m = best.as_ref().map(|r| r.m_mean);
            let cett_m = best_of(cett, &ctx).map(|r| r.m_mean);
            let tt_m = best_of(tt, &ctx).map(|r| r.m_mean);
            PolicySummary {
                label: label.to_owned(),
                context: ctx,
                rows: group.len(),
                feasible_rows: group.iter().filter(|r| r.feasible).count(),
                reduction_vs_cett: m.zip(cett_m).map(|(m, c)| reduction_percent(m, c)),
                reduction_vs_tt: m.zip(tt_m).map(|(m, t)| reduction_percent(m, t)),
                best,
            }
        })
        .collect();
    Report { policies, monotonicity_violations: monotonicity_violations(rows) }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pct = |x: Option<f64>| x.map_or("-".to_owned(), |x| format!("{x:.1}%"));
        writeln!(
            f,
            "{:<16} {:>9} {:>10} {:>8} {:>9} {:>9}  parameters",
            "policy", "rho_min", "m", "sd(m)", "vs cett", "vs tt"
        )?;
        for p in &self.policies {
            match &p.best {
                Some(b) => {
                    let params: Vec<String> = b.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
                    writeln!(
                        f,
                        "{:<16} {:>9.3} {:>10.1} {:>8.1} {:>9} {:>9}  {}",
                        p.label,
                        b.rho_min,
                        b.m_mean,
                        b.m_std,
                        pct(p.reduction_vs_cett),
                        pct(p.reduction_vs_tt),
                        params.join(" ")
                    )?;
                }
                None => {
                    let ctx: Vec<String> = p.context.iter().map(|(k, v)| format!("{k}={v}")).collect();
                    writeln!(f, "{:<16} no feasible configuration ({} tried)  {}", p.label, p.rows, ctx.join(" "))?
                }
            }
        }
        let v = &self.monotonicity_violations;
        if !v.is_empty() {
            let show = |ps: &[(String, Value)]| ps.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" ");
            writeln!(f, "{} monotonicity violations (smaller thresholds infeasible):", v.len())?;
            for m in v.iter().take(5) {
                writeln!(f, "  {}: {} vs feasible {}", m.label, show(&m.smaller_params), show(&m.larger_params))?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    /// Format implied by a file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        path.extension().and_then(|e| e.to_str()).and_then(|e| e.parse().ok())
    }
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(format!("unknown format `{other}` (expected csv or json)")),
        }
    }
}

const STAT_COLUMNS: [&str; 7] =
    ["rho_min", "m_mean", "m_std", "feasible", "rho_min_mean", "runs", "failures"];

fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:?}")
    } else {
        x.to_string()
    }
}

fn param_cell(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

pub fn write_csv<W: Write>(rows: &[ExperimentRow], out: W) -> Result<(), csv::Error> {
    let mut names: Vec<&str> = Vec::new();
    for r in rows {
        for (k, _) in &r.params {
            if !names.contains(&k.as_str()) {
                names.push(k);
            }
        }
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["label"];
    header.extend(&names);
    header.extend(STAT_COLUMNS);
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.label.clone()];
        rec.extend(names.iter().map(|n| r.param(n).map(param_cell).unwrap_or_default()));
        rec.extend([
            fmt_f64(r.rho_min),
            fmt_f64(r.m_mean),
            fmt_f64(r.m_std),
            r.feasible.to_string(),
            fmt_f64(r.rho_min_mean),
            r.runs.to_string(),
            r.failures.to_string(),
        ]);
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn parse_param(s: &str) -> Value {
    serde_json::from_str::<Value>(s)
        .ok()
        .filter(|v| !v.is_string())
        .unwrap_or_else(|| Value::String(s.to_owned()))
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<ExperimentRow>, String> {
    let mut rd = csv::Reader::from_reader(input);
    let header: Vec<String> = rd.headers().map_err(|e| e.to_string())?.iter().map(str::to_owned).collect();
    let stats_at = header
        .iter()
        .position(|h| h == "rho_min")
        .ok_or("missing `rho_min` column")?;
    if header.first().map(String::as_str) != Some("label") || header[stats_at..] != STAT_COLUMNS {
        return Err(format!("unexpected header {header:?}"));
    }
    let names = &header[1..stats_at];
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        let f = |i: usize| -> Result<f64, String> {
            rec[stats_at + i].parse().map_err(|e| format!("column {}: {e}", STAT_COLUMNS[i]))
        };
        let u = |i: usize| -> Result<usize, String> {
            rec[stats_at + i].parse().map_err(|e| format!("column {}: {e}", STAT_COLUMNS[i]))
        };
        rows.push(ExperimentRow {
            label: rec[0].to_owned(),
            params: names
                .iter()
                .enumerate()
                .filter(|(i, _)| !rec[i + 1].is_empty())
                .map(|(i, n)| (n.clone(), parse_param(&rec[i + 1])))
                .collect(),
            rho_min: f(0)?,
            m_mean: f(1)?,
            m_std: f(2)?,
            feasible: rec[stats_at + 3].parse().map_err(|e| format!("column feasible: {e}"))?,
            rho_min_mean: f(4)?,
            runs: u(5)?,
            failures: u(6)?,
        });
    }
    Ok(rows)
}

/// Writes rows to `path` in the given format.
pub fn emit(rows: &[ExperimentRow], format: Format, path: &Path) -> Result<(), ExperimentError> {
    let file = File::create(path).map_err(|source| ExperimentError::Io { path: path.into(), source })?;
    let mut out = BufWriter::new(file);
    match format {
        Format::Csv => write_csv(rows, &mut out).map_err(|source| ExperimentError::Csv { path: path.into(), source })?,
        Format::Json => serde_json::to_writer_pretty(&mut out, rows)
            .map_err(|source| ExperimentError::Json { path: path.into(), source })?,
    }
    out.flush().map_err(|source| ExperimentError::Io { path: path.into(), source })
}

/// Reads rows written by [`emit`]; the format follows the file extension.
pub fn load_rows(path: &Path) -> Result<Vec<ExperimentRow>, ExperimentError> {
    let format = Format::from_path(path).ok_or_else(|| ExperimentError::Format {
        path: path.into(),
        reason: "extension must be .csv or .json".into(),
    })?;
    let file = File::open(path).map_err(|source| ExperimentError::Io { path: path.into(), source })?;
    let input = BufReader::new(file);
    match format {
        Format::Csv => read_csv(input).map_err(|reason| ExperimentError::Format { path: path.into(), reason }),
        Format::Json => serde_json::from_reader(input)
            .map_err(|source| ExperimentError::Json { path: path.into(), source }),
    }
}

/// `n` splits `(lambda_1, lambda_2)` with `1/lambda_1 + 1/lambda_2 = 1`,
/// the first signal's share `1/lambda_1` running over `i/(n+1)`.
pub fn lambda_splits(n: usize) -> Vec<(f64, f64)> {
    (1..=n)
        .map(|i| {
            let share = i as f64 / (n + 1) as f64;
            (1.0 / share, 1.0 / (1.0 - share))
        })
        .collect()
}

/// Axes for a worst-case-policy sweep over `eps_rho` and the uncertainty
/// split between two signals. The base policy must use Theorem-1 gains.
pub fn wc_sweep_axes(signals: (&str, &str), eps_rho: &[f64], splits: usize) -> Vec<GridAxis> {
    vec![
        GridAxis::new("policy.gains.eps_rho.default", eps_rho.iter().copied()),
        GridAxis::zipped(
            vec![
                format!("policy.gains.lambda.shared.{}", signals.0),
                format!("policy.gains.lambda.shared.{}", signals.1),
            ],
            lambda_splits(splits).into_iter().map(|(a, b)| vec![a, b]).collect(),
        ),
    ]
}

mod float {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else {
            s.serialize_str(&x.to_string())
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum F {
            Num(f64),
            Str(String),
        }
        match F::deserialize(d)? {
            F::Num(x) => Ok(x),
            F::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

mod param_list {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use serde_json::Value;

    #[derive(Serialize, Deserialize)]
    struct Param {
        name: String,
        value: Value,
    }

    pub fn serialize<S: Serializer>(params: &[(String, Value)], s: S) -> Result<S::Ok, S::Error> {
        let list: Vec<Param> =
            params.iter().map(|(n, v)| Param { name: n.clone(), value: v.clone() }).collect();
        list.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<(String, Value)>, D::Error> {
        Ok(Vec::<Param>::deserialize(d)?.into_iter().map(|p| (p.name, p.value)).collect())
    }
}
