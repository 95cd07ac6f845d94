//! Cartesian-product sweeps over config fields and seeds, with a mean ± stderr
//! aggregate per grid point.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::Value;

use crate::config::{set_path, ConfigError, RunConfig};
use crate::run::{run, MetricsRecord, RunSummary};
use crate::stats::{mean, stderr};

/// One swept field and the values it takes.
#[derive(Debug, Clone, PartialEq)]
pub struct GridAxis {
    /// Dotted config path, e.g. `trust_region.c_beta`.
    pub key: String,
    pub values: Vec<Value>,
}

impl GridAxis {
    /// Parses `key=v1,v2,...` or `key=[json array]`. Values that are not JSON
    /// are taken as strings.
    pub fn parse(spec: &str) -> Result<Self, String> {
        let (key, raw) = spec
            .split_once('=')
            .ok_or_else(|| format!("grid axis `{spec}`: expected key=v1,v2"))?;
        let values = if raw.trim_start().starts_with('[') {
            serde_json::from_str::<Vec<Value>>(raw).map_err(|e| format!("grid axis `{spec}`: {e}"))?
        } else {
            raw.split(',')
                .map(|v| serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string())))
                .collect()
        };
        if key.is_empty() || values.is_empty() {
            return Err(format!("grid axis `{spec}` is empty"));
        }
        Ok(Self {
            key: key.to_string(),
            values,
        })
    }

    /// Last path segment, used in series labels.
    pub fn short_name(&self) -> &str {
        self.key.rsplit('.').next().unwrap_or(&self.key)
    }
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub base: RunConfig,
    pub axes: Vec<GridAxis>,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    /// Worker threads; each run stays single-threaded.
    pub jobs: usize,
    /// Leading improvement steps excluded from per-run averages.
    pub skip_steps: usize,
}

/// One grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub label: String,
    pub assignment: Vec<(String, Value)>,
}

#[derive(Debug, Clone)]
pub struct SweepRun {
    pub cell: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub result: Result<(RunSummary, Vec<MetricsRecord>), String>,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub cells: Vec<Cell>,
    pub runs: Vec<SweepRun>,
    pub aggregate_csv: PathBuf,
}

impl SweepResult {
    pub fn runs_for(&self, cell: usize) -> impl Iterator<Item = &SweepRun> {
        self.runs.iter().filter(move |r| r.cell == cell)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error("{0}")]
    Spec(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("output error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const RUNS_FILE: &str = "runs.csv";

fn label_value(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Grid points in row-major order over `axes` (last axis varies fastest).
pub fn cells(axes: &[GridAxis]) -> Vec<Cell> {
    let mut out = vec![Cell {
        label: String::new(),
        assignment: Vec::new(),
    }];
    for axis in axes {
        out = out
            .into_iter()
            .flat_map(|c| {
                axis.values.iter().map(move |v| {
                    let mut assignment = c.assignment.clone();
                    assignment.push((axis.key.clone(), v.clone()));
                    let part = format!("{}={}", axis.short_name(), label_value(v));
                    let label = if c.label.is_empty() {
                        part
                    } else {
                        format!("{},{part}", c.label)
                    };
                    Cell { label, assignment }
                })
            })
            .collect();
    }
    if axes.is_empty() {
        out[0].label = "base".into();
    }
    out
}

fn cell_config(base: &RunConfig, cell: &Cell) -> Result<RunConfig, ConfigError> {
    let mut tree = serde_json::to_value(base).expect("config serializes");
    for (key, v) in &cell.assignment {
        set_path(&mut tree, key, v.clone())
            .map_err(|e| ConfigError::Override(format!("{key}={v}"), e))?;
    }
    let cfg: RunConfig =
        serde_json::from_value(tree).map_err(|e| ConfigError::Override(cell.label.clone(), e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn dir_name(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "=._-".contains(c) { c } else { '_' })
        .collect()
}

/// Runs every (cell, seed) pair and writes `runs.csv` and `aggregate.csv`.
/// Individual run failures are recorded, not propagated.
pub fn sweep(spec: &SweepSpec) -> Result<SweepResult, SweepError> {
    if spec.seeds.is_empty() {
        return Err(SweepError::Spec("sweep needs at least one seed".into()));
    }
    let cells = cells(&spec.axes);
    let mut jobs = Vec::new();
    for (ci, cell) in cells.iter().enumerate() {
        let cfg = cell_config(&spec.base, cell)?;
        for &seed in &spec.seeds {
            let mut c = cfg.clone();
            c.seed = seed;
            c.out_dir = spec.out_dir.join(dir_name(&cell.label)).join(format!("seed_{seed}"));
            jobs.push((ci, c));
        }
    }
    fs::create_dir_all(&spec.out_dir)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.jobs.max(1))
        .build()
        .map_err(|e| SweepError::Spec(e.to_string()))?;
    let runs: Vec<SweepRun> = pool.install(|| {
        jobs.par_iter()
            .map(|(ci, cfg)| SweepRun {
                cell: *ci,
                seed: cfg.seed,
                out_dir: cfg.out_dir.clone(),
                result: run(cfg)
                    .map(|o| (o.summary, o.records))
                    .map_err(|e| e.to_string()),
            })
            .collect()
    });

    write_runs(&spec.out_dir.join(RUNS_FILE), &cells, &runs)?;
    let aggregate_csv = spec.out_dir.join(AGGREGATE_FILE);
    write_aggregate(&aggregate_csv, &spec.axes, &cells, &runs, spec.skip_steps)?;
    Ok(SweepResult {
        cells,
        runs,
        aggregate_csv,
    })
}

fn write_runs(path: &Path, cells: &[Cell], runs: &[SweepRun]) -> Result<(), SweepError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["series", "seed", "status", "error", "out_dir"])?;
    for r in runs {
        let (status, err) = match &r.result {
            Ok(_) => ("ok", String::new()),
            Err(e) => ("failed", e.clone()),
        };
        w.write_record([
            cells[r.cell].label.as_str(),
            &r.seed.to_string(),
            status,
            &err,
            &r.out_dir.display().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-run average of `field` over steps after `skip`; `None` when the run has
/// no such steps or the field is null throughout.
pub fn run_average(records: &[MetricsRecord], field: &str, skip: usize) -> Option<f64> {
    let xs: Vec<f64> = records.iter().skip(skip).filter_map(|r| r.field(field)).collect();
    (!xs.is_empty()).then(|| mean(&xs))
}

/// One row per grid point: axis values, run counts, then `<field>_mean` and
/// `<field>_stderr` across seeds for every metrics column. Points without a
/// successful run are marked `missing` with empty statistics.
pub fn write_aggregate(
    path: &Path,
    axes: &[GridAxis],
    cells: &[Cell],
    runs: &[SweepRun],
    skip: usize,
) -> Result<(), SweepError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = vec!["series".into()];
    header.extend(axes.iter().map(|a| a.key.clone()));
    header.extend(["runs", "failed", "missing"].map(String::from));
    for f in MetricsRecord::NUMERIC_FIELDS {
        header.push(format!("{f}_mean"));
        header.push(format!("{f}_stderr"));
    }
    w.write_record(&header)?;

    for (ci, cell) in cells.iter().enumerate() {
        let ok: Vec<&Vec<MetricsRecord>> = runs
            .iter()
            .filter(|r| r.cell == ci)
            .filter_map(|r| r.result.as_ref().ok().map(|(_, m)| m))
            .collect();
        let total = runs.iter().filter(|r| r.cell == ci).count();
        let mut row = vec![cell.label.clone()];
        row.extend(cell.assignment.iter().map(|(_, v)| label_value(v)));
        row.push(total.to_string());
        row.push((total - ok.len()).to_string());
        row.push((ok.is_empty()).to_string());
        for f in MetricsRecord::NUMERIC_FIELDS {
            let per_run: Vec<f64> = ok.iter().filter_map(|m| run_average(m, f, skip)).collect();
            if per_run.is_empty() {
                row.extend([String::new(), String::new()]);
            } else {
                row.push(mean(&per_run).to_string());
                row.push(stderr(&per_run).to_string());
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_parsing() {
        let a = GridAxis::parse("trust_region.c_beta=1,3").unwrap();
        assert_eq!(a.values, vec![Value::from(1), Value::from(3)]);
        assert_eq!(a.short_name(), "c_beta");
        let b = GridAxis::parse("network.hidden=[[8],[16,16]]").unwrap();
        assert_eq!(b.values.len(), 2);
        let c = GridAxis::parse("trust_region.ablation=none,no_fixup").unwrap();
        assert_eq!(c.values[1], Value::from("no_fixup"));
        assert!(GridAxis::parse("x").is_err());
    }

    #[test]
    fn product_order_and_labels() {
        let axes = [
            GridAxis::parse("a.x=1,2").unwrap(),
            GridAxis::parse("y=p,q,r").unwrap(),
        ];
        let c = cells(&axes);
        assert_eq!(c.len(), 6);
        assert_eq!(c[0].label, "x=1,y=p");
        assert_eq!(c[5].label, "x=2,y=r");
        assert_eq!(cells(&[])[0].label, "base");
    }
}
