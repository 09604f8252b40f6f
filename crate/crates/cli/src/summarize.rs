//! Trade-off and per-layer tables aggregated over seeds.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use crate::runner::{read_summary, SummaryRow, SUMMARY_FILE};

pub const TRADEOFF_FILE: &str = "tradeoff.csv";
pub const LAYERS_FILE: &str = "layers.csv";

/// Linearly interpolated quantile of sorted data (`q` in `[0, 1]`).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Median and 25% / 75% quantiles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spread {
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
}

impl Spread {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let mut v: Vec<f64> = values.into_iter().collect();
        v.sort_by(f64::total_cmp);
        Self {
            q25: quantile(&v, 0.25),
            median: quantile(&v, 0.5),
            q75: quantile(&v, 0.75),
        }
    }
}

/// One ε′ setting aggregated over its seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct TradeoffRow {
    pub eps_prime: f64,
    pub runs: usize,
    pub usage: Spread,
    pub test_error: Spread,
    pub layers: Vec<Spread>,
}

/// Every `summary.csv` below `<out>/eps_*/seed_*/`, in sorted path order.
fn run_summaries(out: &Path) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    let entries = std::fs::read_dir(out).with_context(|| format!("reading {}", out.display()))?;
    for eps_dir in entries {
        let eps_dir = eps_dir?.path();
        let is_eps = eps_dir
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.starts_with("eps_"));
        if !is_eps || !eps_dir.is_dir() {
            continue;
        }
        for seed_dir in std::fs::read_dir(&eps_dir)? {
            let summary = seed_dir?.path().join(SUMMARY_FILE);
            if summary.is_file() {
                found.push(summary);
            }
        }
    }
    found.sort();
    Ok(found)
}

/// Groups completed runs by ε′ (descending).
pub fn aggregate(rows: &[SummaryRow]) -> Result<Vec<TradeoffRow>> {
    let mut eps: Vec<f64> = rows.iter().map(|r| r.eps_prime).collect();
    eps.sort_by(|a, b| b.total_cmp(a));
    eps.dedup();
    eps.into_iter()
        .map(|e| {
            let group: Vec<&SummaryRow> = rows.iter().filter(|r| r.eps_prime == e).collect();
            let n_layers = group[0].per_layer_counts.len();
            if group.iter().any(|r| r.per_layer_counts.len() != n_layers) {
                bail!("runs with eps'={e} disagree on the number of layers");
            }
            Ok(TradeoffRow {
                eps_prime: e,
                runs: group.len(),
                usage: Spread::of(group.iter().map(|r| r.final_usage_rate)),
                test_error: Spread::of(group.iter().map(|r| r.final_test_error)),
                layers: (0..n_layers)
                    .map(|l| Spread::of(group.iter().map(|r| r.per_layer_counts[l] as f64)))
                    .collect(),
            })
        })
        .collect()
}

/// Reads all run summaries in `out` and writes `tradeoff.csv` and `layers.csv`.
pub fn summarize(out: &Path) -> Result<Vec<TradeoffRow>> {
    let mut rows = Vec::new();
    for path in run_summaries(out)? {
        rows.extend(read_summary(&path)?);
    }
    if rows.is_empty() {
        bail!("no completed runs found in {}", out.display());
    }
    rows.sort_by(|a, b| {
        b.eps_prime
            .total_cmp(&a.eps_prime)
            .then(a.seed.cmp(&b.seed))
    });
    let table = aggregate(&rows)?;

    let mut w = csv::Writer::from_path(out.join(TRADEOFF_FILE))?;
    w.write_record([
        "eps_prime",
        "runs",
        "median_usage_rate",
        "q25_usage_rate",
        "q75_usage_rate",
        "median_test_error",
        "q25_test_error",
        "q75_test_error",
        "median_per_layer_counts",
    ])?;
    for t in &table {
        let layers: Vec<String> = t.layers.iter().map(|s| s.median.to_string()).collect();
        w.write_record([
            t.eps_prime.to_string(),
            t.runs.to_string(),
            t.usage.median.to_string(),
            t.usage.q25.to_string(),
            t.usage.q75.to_string(),
            t.test_error.median.to_string(),
            t.test_error.q25.to_string(),
            t.test_error.q75.to_string(),
            layers.join(";"),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(out.join(LAYERS_FILE))?;
    w.write_record([
        "eps_prime",
        "layer",
        "median_count",
        "q25_count",
        "q75_count",
    ])?;
    for t in &table {
        for (l, s) in t.layers.iter().enumerate() {
            w.write_record([
                t.eps_prime.to_string(),
                (l + 1).to_string(),
                s.median.to_string(),
                s.q25.to_string(),
                s.q75.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(table)
}
