use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::experiment::{CurvePoint, MetricName};
use crate::error::{Error, Result};
use crate::selection::Strategy;

/// Across-seed statistics for one (strategy, k, round).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub strategy: Strategy,
    pub k: usize,
    pub round: usize,
    pub n_labeled: usize,
    pub metric_name: MetricName,
    pub mean: f64,
    /// Sample standard deviation (n - 1); 0 for a single seed.
    pub std: f64,
    pub n_seeds: usize,
}

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

pub fn summarize(points: &[CurvePoint]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(Strategy, usize, usize), Vec<&CurvePoint>> = BTreeMap::new();
    for p in points {
        groups.entry((p.strategy, p.k, p.round)).or_default().push(p);
    }
    groups
        .into_iter()
        .map(|((strategy, k, round), pts)| {
            let vals: Vec<f64> = pts.iter().map(|p| p.metric_value).collect();
            let (mean, std) = mean_std(&vals);
            SummaryRow {
                strategy,
                k,
                round,
                n_labeled: pts[0].n_labeled,
                metric_name: pts[0].metric_name,
                mean,
                std,
                n_seeds: vals.len(),
            }
        })
        .collect()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Writes to a sibling temp file and renames it into place.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub const CURVE_COLUMNS: [&str; 7] = [
    "strategy",
    "seed",
    "round",
    "n_labeled",
    "metric_name",
    "metric_value",
    "k",
];

fn curves_bytes(points: &[CurvePoint]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CURVE_COLUMNS).map_err(csv_err)?;
    for p in points {
        w.write_record([
            p.strategy.to_string(),
            p.seed.to_string(),
            p.round.to_string(),
            p.n_labeled.to_string(),
            p.metric_name.as_str().to_string(),
            format!("{:?}", p.metric_value),
            p.k.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

pub fn write_curves_csv(path: &Path, points: &[CurvePoint]) -> Result<()> {
    write_atomic(path, &curves_bytes(points)?)
}

pub fn write_cell_csv(path: &Path, points: &[CurvePoint]) -> Result<()> {
    write_curves_csv(path, points)
}

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["strategy", "k", "round", "n_labeled", "metric_name", "mean", "std", "n_seeds"])
        .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.strategy.to_string(),
            r.k.to_string(),
            r.round.to_string(),
            r.n_labeled.to_string(),
            r.metric_name.as_str().to_string(),
            format!("{:?}", r.mean),
            format!("{:?}", r.std),
            r.n_seeds.to_string(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    write_atomic(path, &bytes)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, &serde_json::to_vec_pretty(value)?)
}

/// Reads a `curves.csv` back.
pub fn read_curves_csv(path: &Path) -> Result<Vec<CurvePoint>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let bad = |col: &str| Error::Csv {
            row: i + 2,
            column: col.to_string(),
            msg: "unparseable value".into(),
        };
        let field = |j: usize| rec.get(j).unwrap_or("");
        out.push(CurvePoint {
            strategy: field(0).parse().map_err(|_| bad("strategy"))?,
            seed: field(1).parse().map_err(|_| bad("seed"))?,
            round: field(2).parse().map_err(|_| bad("round"))?,
            n_labeled: field(3).parse().map_err(|_| bad("n_labeled"))?,
            metric_name: match field(4) {
                "accuracy" => MetricName::Accuracy,
                "mse" => MetricName::Mse,
                _ => return Err(bad("metric_name")),
            },
            metric_value: field(5).parse().map_err(|_| bad("metric_value"))?,
            k: field(6).parse().map_err(|_| bad("k"))?,
        });
    }
    Ok(out)
}
