//! Plot-ready curves: per-seed EWMA smoothing, then mean and standard error
//! across the seeds of each series, aligned by improvement step.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::run::{read_metrics, MetricsRecord};
use crate::stats::{ewma, mean, stderr};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum XAxis {
    EnvSteps,
    WallMs,
}

impl XAxis {
    fn field(self) -> &'static str {
        match self {
            XAxis::EnvSteps => "env_steps",
            XAxis::WallMs => "wall_ms",
        }
    }
}

impl std::str::FromStr for XAxis {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "env_steps" => Ok(XAxis::EnvSteps),
            "wall_ms" => Ok(XAxis::WallMs),
            _ => Err(format!("x axis must be env_steps or wall_ms, got `{s}`")),
        }
    }
}

/// One metrics file and the series it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct Input {
    pub series: String,
    pub path: PathBuf,
}

impl Input {
    /// `LABEL=PATH`, or a bare path labeled by its directory: the parent, or
    /// the grandparent when the parent is a `seed_N` directory. An argument
    /// naming an existing file is always a bare path, since sweep directories
    /// contain `=`.
    pub fn parse(arg: &str) -> Self {
        if !Path::new(arg).is_file() {
            if let Some((label, path)) = arg.split_once('=') {
                if !label.contains('/') {
                    return Self {
                        series: label.to_string(),
                        path: PathBuf::from(path),
                    };
                }
            }
        }
        let path = PathBuf::from(arg);
        let name = |p: Option<&Path>| {
            p.and_then(|p| p.file_name())
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "run".into())
        };
        let parent = path.parent();
        let mut series = name(parent);
        if series.starts_with("seed_") {
            series = name(parent.and_then(Path::parent));
        }
        Self { series, path }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub x: f64,
    pub series: String,
    pub mean: f64,
    pub stderr: f64,
}

/// Smooths `metric` per file with an EWMA of span `window`, then averages
/// across each series' files step by step. `x` is the mean x value over the
/// files that reached that step. Series appear in first-seen order.
pub fn curves(inputs: &[Input], x: XAxis, metric: &str, window: usize) -> Result<Vec<CurvePoint>, String> {
    if MetricsRecord::NUMERIC_FIELDS.iter().all(|f| *f != metric) {
        return Err(format!("unknown metric `{metric}`"));
    }
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<(Vec<f64>, Vec<f64>)>> = BTreeMap::new();
    for input in inputs {
        let records = read_metrics(&input.path)?;
        let xs = records.iter().map(|r| r.field(x.field()).unwrap_or(0.0)).collect();
        let ys: Vec<f64> = records
            .iter()
            .map(|r| r.field(metric))
            .collect::<Option<_>>()
            .ok_or_else(|| format!("{}: metric `{metric}` is null", input.path.display()))?;
        if !groups.contains_key(&input.series) {
            order.push(input.series.clone());
        }
        groups
            .entry(input.series.clone())
            .or_default()
            .push((xs, ewma(&ys, window)));
    }

    let mut out = Vec::new();
    for series in order {
        let runs = &groups[&series];
        let len = runs.iter().map(|(x, _)| x.len()).max().unwrap_or(0);
        for i in 0..len {
            let live: Vec<&(Vec<f64>, Vec<f64>)> = runs.iter().filter(|(x, _)| i < x.len()).collect();
            let xs: Vec<f64> = live.iter().map(|(x, _)| x[i]).collect();
            let ys: Vec<f64> = live.iter().map(|(_, y)| y[i]).collect();
            out.push(CurvePoint {
                x: mean(&xs),
                series: series.clone(),
                mean: mean(&ys),
                stderr: stderr(&ys),
            });
        }
    }
    Ok(out)
}

/// Writes `x,series,mean,stderr`.
pub fn write_csv(points: &[CurvePoint], path: &Path) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x", "series", "mean", "stderr"])?;
    for p in points {
        w.write_record([
            p.x.to_string(),
            p.series.clone(),
            p.mean.to_string(),
            p.stderr.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn input_labels() {
        assert_eq!(Input::parse("a=x/m.jsonl").series, "a");
        assert_eq!(Input::parse("sw/c_beta=1/seed_3/metrics.jsonl").series, "c_beta=1");
        assert_eq!(Input::parse("out/run7/metrics.jsonl").series, "run7");
    }
}
