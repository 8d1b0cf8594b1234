//! Run configuration, single runs, parameter sweeps and result files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::classifier::{CellGrid, ClassifierParams};
use crate::error::{Error, Result};
use crate::estimator::{estimate_lim, EstimatorConfig, LimRunResult};
use crate::initfn::InitialKind;
use crate::metric::{MetricSpace, WeightVector};
use crate::semidisc::SemiDiscMap;
use crate::systems::{accepts_param, build_named, resolve_params, BUILTIN_SYSTEMS};

pub const MAX_SWEEP_AXES: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    pub name: String,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl SweepAxis {
    /// Evenly spaced values, `min` first and `max` last.
    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.min];
        }
        let step = (self.max - self.min) / (self.count - 1) as f64;
        (0..self.count)
            .map(|k| {
                if k + 1 == self.count {
                    self.max
                } else {
                    self.min + step * k as f64
                }
            })
            .collect()
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    /// Parses `name:min:max:count`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::Config(format!("sweep '{s}' is not name:min:max:count"));
        if parts.len() != 4 || parts[0].is_empty() {
            return Err(bad());
        }
        Ok(SweepAxis {
            name: parts[0].to_string(),
            min: parts[1].trim().parse().map_err(|_| bad())?,
            max: parts[2].trim().parse().map_err(|_| bad())?,
            count: parts[3].trim().parse().map_err(|_| bad())?,
        })
    }
}

/// Everything that determines a run. Serialized in full into every result
/// file; `jobs` and `out` do not affect results and are left out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: String,
    /// Parameter overrides on top of the system defaults.
    pub params: BTreeMap<String, f64>,
    pub sweep: Vec<SweepAxis>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub n_disc: u32,
    pub r: usize,
    pub n_iter: usize,
    pub bisection_steps: u32,
    pub boundary_bias: f64,
    pub init: InitialKind,
    /// `None` derives weights from the vibration modes.
    pub weights: Option<Vec<f64>>,
    pub classifier: ClassifierParams,
    pub seed: u64,
    #[serde(skip, default = "default_jobs")]
    pub jobs: usize,
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

fn default_jobs() -> usize {
    1
}

impl RunConfig {
    /// Defaults tuned for each built-in system.
    pub fn preset(system: &str) -> Result<Self> {
        let base = |lower: Vec<f64>, upper: Vec<f64>, n_disc, r| RunConfig {
            system: system.to_string(),
            params: BTreeMap::new(),
            sweep: Vec::new(),
            lower,
            upper,
            n_disc,
            r,
            n_iter: 50,
            bisection_steps: 5,
            boundary_bias: 2.0,
            init: InitialKind::FreeVibration,
            weights: None,
            classifier: ClassifierParams::default(),
            seed: 0,
            jobs: 1,
            out: None,
        };
        Ok(match system {
            "duffing" => {
                let mut c = base(vec![-5.0; 2], vec![5.0; 2], 501, 30);
                c.classifier.ghost_factor = 10.0;
                c
            }
            "turning1" => base(vec![-3.0; 2], vec![3.0; 2], 201, 30),
            "turning2" => base(vec![-15.0; 4], vec![15.0; 4], 81, 30),
            "pendulum" => {
                let half = [120.0, 192.0, 180.0, 300.0];
                let mut c = base(half.iter().map(|h| -h).collect(), half.to_vec(), 101, 20);
                c.weights = Some(vec![1.0; 4]);
                c.classifier.k_rep = 4;
                c
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown system '{other}' (expected one of {})",
                    BUILTIN_SYSTEMS.join(", ")
                )))
            }
        })
    }

    pub fn estimator_config(&self, stream: u64) -> EstimatorConfig {
        EstimatorConfig {
            n_iter: self.n_iter,
            bisection_steps: self.bisection_steps,
            boundary_bias: self.boundary_bias,
            seed: self.seed,
            stream,
            classifier: self.classifier.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for k in self.params.keys() {
            if !accepts_param(&self.system, k)? {
                return Err(Error::Config(format!(
                    "system '{}' has no parameter '{k}'",
                    self.system
                )));
            }
        }
        if self.sweep.len() > MAX_SWEEP_AXES {
            return Err(Error::Config(format!(
                "at most {MAX_SWEEP_AXES} sweep axes are supported"
            )));
        }
        for axis in &self.sweep {
            if axis.count < 1 {
                return Err(Error::Config(format!(
                    "sweep '{}' needs count ≥ 1",
                    axis.name
                )));
            }
            if !(axis.min.is_finite() && axis.max.is_finite()) {
                return Err(Error::Config(format!(
                    "sweep '{}' has non-finite limits",
                    axis.name
                )));
            }
            if !accepts_param(&self.system, &axis.name)? {
                return Err(Error::Config(format!(
                    "system '{}' has no parameter '{}'",
                    self.system, axis.name
                )));
            }
        }
        if self.sweep.len() == 2 && self.sweep[0].name == self.sweep[1].name {
            return Err(Error::Config(
                "both sweep axes vary the same parameter".into(),
            ));
        }
        if self.r < 1 {
            return Err(Error::Config("r must be at least 1".into()));
        }
        if self.jobs < 1 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        CellGrid::new(self.lower.clone(), self.upper.clone(), self.n_disc)?;
        if let Some(w) = &self.weights {
            WeightVector::new(w.clone())?;
        }
        self.estimator_config(0).validate()
    }

    /// Parameter overrides for every sweep point, in row order (first axis
    /// outermost).
    pub fn grid_points(&self) -> Vec<Vec<f64>> {
        self.sweep.iter().fold(vec![Vec::new()], |acc, axis| {
            let values = axis.values();
            acc.into_iter()
                .flat_map(|prefix| {
                    values.iter().map(move |&v| {
                        let mut p = prefix.clone();
                        p.push(v);
                        p
                    })
                })
                .collect()
        })
    }

    fn overrides_at(&self, point: &[f64]) -> BTreeMap<String, f64> {
        let mut params = self.params.clone();
        for (axis, &v) in self.sweep.iter().zip(point) {
            params.insert(axis.name.clone(), v);
        }
        params
    }

    /// Reads a config from JSON: either a bare config or a result file that
    /// embeds one under `config`.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("malformed JSON: {e}")))?;
        let inner = match value.get("config") {
            Some(c) if value.get("rows").is_some() => c.clone(),
            _ => value,
        };
        serde_json::from_value(inner).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }
}

/// Runs one estimation with the given parameter overrides and RNG stream.
pub fn estimate_point(
    config: &RunConfig,
    overrides: &BTreeMap<String, f64>,
    stream: u64,
) -> Result<LimRunResult> {
    let system = Arc::new(build_named(&config.system, overrides)?);
    if config.lower.len() != system.dim() {
        return Err(Error::Config(format!(
            "bounds have dimension {}, system '{}' has {}",
            config.lower.len(),
            config.system,
            system.dim()
        )));
    }
    let map = SemiDiscMap::new(system.clone(), config.r)?;
    let weights = config.weights.clone().map(WeightVector::new).transpose()?;
    let metric = MetricSpace::for_system(&system, weights)?;
    let grid = CellGrid::new(config.lower.clone(), config.upper.clone(), config.n_disc)?;
    estimate_lim(
        &map,
        &metric,
        &grid,
        config.init,
        &config.estimator_config(stream),
    )
}

pub fn run_single(config: &RunConfig) -> Result<LimRunResult> {
    config.validate()?;
    if !config.sweep.is_empty() {
        return Err(Error::Config("run_single takes no sweep axes".into()));
    }
    estimate_point(config, &config.params, 0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub values: Vec<f64>,
    /// Full parameter set the row was run with.
    pub params: BTreeMap<String, f64>,
    #[serde(flatten)]
    pub outcome: RowOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", content = "detail", rename_all = "snake_case")]
pub enum RowOutcome {
    Done(LimRunResult),
    Failed(String),
}

impl SweepRow {
    pub fn result(&self) -> Option<&LimRunResult> {
        match &self.outcome {
            RowOutcome::Done(r) => Some(r),
            RowOutcome::Failed(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub config: RunConfig,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn lims(&self) -> Vec<Option<f64>> {
        self.rows
            .iter()
            .map(|r| r.result().map(|x| x.lim))
            .collect()
    }
}

fn run_rows(config: &RunConfig) -> Result<SweepResult> {
    let points = config.grid_points();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} worker threads: {e}", config.jobs)))?;
    let rows = pool.install(|| {
        points
            .par_iter()
            .enumerate()
            .map(|(index, point)| {
                let overrides = config.overrides_at(point);
                let params = resolve_params(&config.system, &overrides).unwrap_or_default();
                let outcome = match estimate_point(config, &overrides, index as u64) {
                    Ok(r) => RowOutcome::Done(r),
                    Err(e) => RowOutcome::Failed(e.to_string()),
                };
                SweepRow {
                    values: point.clone(),
                    params,
                    outcome,
                }
            })
            .collect()
    });
    Ok(SweepResult {
        config: config.clone(),
        rows,
    })
}

/// One estimation per sweep point, `config.jobs` at a time. Each point draws
/// from its own RNG stream indexed by its row, so the table does not depend
/// on the job count.
pub fn run_sweep(config: &RunConfig) -> Result<SweepResult> {
    config.validate()?;
    if config.sweep.is_empty() {
        return Err(Error::Config("a sweep needs at least one axis".into()));
    }
    run_rows(config)
}

/// Like [`run_sweep`] but also accepts zero axes (a single row).
pub fn run_table(config: &RunConfig) -> Result<SweepResult> {
    config.validate()?;
    run_rows(config)
}

/// `x` rounded to 9 significant digits.
pub fn round9(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.8e}").parse().unwrap_or(x)
}

fn fmt9(x: f64) -> String {
    format!("{}", round9(x))
}

fn round_tree(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(r) = n
                .as_f64()
                .map(round9)
                .and_then(serde_json::Number::from_f64)
            {
                *n = r;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_tree),
        Value::Object(map) => map.values_mut().for_each(round_tree),
        _ => {}
    }
}

/// The structured result file contents: config echo verbatim, results
/// rounded to 9 significant digits.
pub fn result_json(result: &SweepResult) -> Result<String> {
    let config = serde_json::to_value(&result.config).map_err(|e| Error::Io(e.to_string()))?;
    let mut rows = serde_json::to_value(&result.rows).map_err(|e| Error::Io(e.to_string()))?;
    round_tree(&mut rows);
    let doc = serde_json::json!({ "config": config, "rows": rows });
    let mut text = serde_json::to_string_pretty(&doc).map_err(|e| Error::Io(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// Summary table: one row per sweep point.
pub fn summary_csv(result: &SweepResult) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = result.config.sweep.iter().map(|a| a.name.clone()).collect();
    header.extend(
        [
            "lim",
            "status",
            "n_traj",
            "n_steps",
            "wall_s",
            "n_iter",
            "n_attractors",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    w.write_record(&header).map_err(csv_err)?;
    for row in &result.rows {
        let mut rec: Vec<String> = row.values.iter().map(|&v| fmt9(v)).collect();
        match &row.outcome {
            RowOutcome::Done(r) => rec.extend([
                fmt9(r.lim),
                r.status.to_string(),
                r.n_traj.to_string(),
                r.n_steps.to_string(),
                fmt9(r.wall_s),
                r.lim_history.len().to_string(),
                r.attractors.len().to_string(),
            ]),
            RowOutcome::Failed(_) => rec.extend(
                ["", "error", "0", "0", "", "0", "0"]
                    .iter()
                    .map(|s| s.to_string()),
            ),
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.to_string()))?)
        .map_err(|e| Error::Io(e.to_string()))
}

/// Per-iteration LIM of every row.
pub fn history_csv(result: &SweepResult) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = result.config.sweep.iter().map(|a| a.name.clone()).collect();
    header.extend(["iteration".to_string(), "lim".to_string()]);
    w.write_record(&header).map_err(csv_err)?;
    for row in &result.rows {
        if let Some(r) = row.result() {
            for (k, lim) in r.lim_history.iter().enumerate() {
                let mut rec: Vec<String> = row.values.iter().map(|&v| fmt9(v)).collect();
                rec.push((k + 1).to_string());
                rec.push(fmt9(*lim));
                w.write_record(&rec).map_err(csv_err)?;
            }
        }
    }
    String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.to_string()))?)
        .map_err(|e| Error::Io(e.to_string()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmittedFiles {
    pub summary: PathBuf,
    pub history: PathBuf,
    pub result: PathBuf,
}

/// Writes `lim.csv`, `history.csv` and `result.json` into `dir`.
pub fn emit(result: &SweepResult, dir: &Path) -> Result<EmittedFiles> {
    let io = |p: &Path, e: std::io::Error| Error::Io(format!("{}: {e}", p.display()));
    fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let files = EmittedFiles {
        summary: dir.join("lim.csv"),
        history: dir.join("history.csv"),
        result: dir.join("result.json"),
    };
    fs::write(&files.summary, summary_csv(result)?).map_err(|e| io(&files.summary, e))?;
    fs::write(&files.history, history_csv(result)?).map_err(|e| io(&files.history, e))?;
    fs::write(&files.result, result_json(result)?).map_err(|e| io(&files.result, e))?;
    Ok(files)
}
