//! Aggregation of per-replicate rows.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::scenarios::ResultRecord;
use crate::error::{Error, Result};

const Z95: f64 = 1.959_963_984_540_054;

/// Statistics of one `(sample_size, estimator, quantity)` group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub sample_size: usize,
    pub estimator: String,
    pub quantity: String,
    pub count: usize,
    pub failures: usize,
    pub mean: f64,
    pub variance: f64,
    /// Mean squared error; `NaN` without a known truth.
    pub mse: f64,
    pub truth: f64,
    /// 95% normal-approximation half-width of `mean`.
    pub half_width: f64,
}

/// Paired ratio `numerator / denominator` of a per-replicate metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioStats {
    pub sample_size: usize,
    pub quantity: String,
    pub numerator: String,
    pub denominator: String,
    /// `mse` or `variance`.
    pub metric: String,
    pub value: f64,
    /// 95% delta-method half-width.
    pub half_width: f64,
    pub pairs: usize,
}

/// JSON summary written next to the per-replicate CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: String,
    pub config: ExperimentConfig,
    pub metadata: BTreeMap<String, serde_json::Value>,
    pub groups: Vec<GroupStats>,
    pub ratios: Vec<RatioStats>,
}

impl Summary {
    pub fn group(&self, sample_size: usize, estimator: &str, quantity: &str) -> Option<&GroupStats> {
        self.groups
            .iter()
            .find(|g| g.sample_size == sample_size && g.estimator == estimator && g.quantity == quantity)
    }

    pub fn ratio(&self, sample_size: usize, quantity: &str, numerator: &str, denominator: &str, metric: &str) -> Option<&RatioStats> {
        self.ratios.iter().find(|r| {
            r.sample_size == sample_size
                && r.quantity == quantity
                && r.numerator == numerator
                && r.denominator == denominator
                && r.metric == metric
        })
    }
}

type Key = (usize, String, String);

fn grouped(records: &[ResultRecord]) -> BTreeMap<Key, Vec<&ResultRecord>> {
    let mut map: BTreeMap<Key, Vec<&ResultRecord>> = BTreeMap::new();
    for r in records {
        map.entry((r.sample_size, r.estimator.clone(), r.quantity.clone()))
            .or_default()
            .push(r);
    }
    map
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn sample_variance(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

fn is_ok(r: &ResultRecord) -> bool {
    r.status == "ok" && r.estimate.is_finite()
}

/// Per-group statistics in key order.
pub fn group_stats(records: &[ResultRecord]) -> Vec<GroupStats> {
    grouped(records)
        .into_iter()
        .map(|((n, est, q), rows)| {
            let ok: Vec<&&ResultRecord> = rows.iter().filter(|r| is_ok(r)).collect();
            let values: Vec<f64> = ok.iter().map(|r| r.estimate).collect();
            let sq: Vec<f64> = ok.iter().map(|r| r.sq_error).filter(|e| e.is_finite()).collect();
            let variance = sample_variance(&values);
            GroupStats {
                sample_size: n,
                estimator: est,
                quantity: q,
                count: ok.len(),
                failures: rows.len() - ok.len(),
                mean: mean(&values),
                variance,
                mse: if sq.is_empty() { f64::NAN } else { mean(&sq) },
                truth: rows.first().map_or(f64::NAN, |r| r.truth),
                half_width: if values.is_empty() {
                    f64::NAN
                } else {
                    Z95 * (variance / values.len() as f64).sqrt()
                },
            }
        })
        .collect()
}

/// `mean(a) / mean(b)` over paired observations with its delta-method half-width.
pub fn paired_ratio(a: &[f64], b: &[f64]) -> (f64, f64) {
    let m = a.len().min(b.len());
    if m == 0 {
        return (f64::NAN, f64::NAN);
    }
    let (ma, mb) = (mean(&a[..m]), mean(&b[..m]));
    let ratio = ma / mb;
    if m < 2 {
        return (ratio, f64::NAN);
    }
    let (va, vb) = (sample_variance(&a[..m]), sample_variance(&b[..m]));
    let cov = a[..m]
        .iter()
        .zip(&b[..m])
        .map(|(x, y)| (x - ma) * (y - mb))
        .sum::<f64>()
        / (m - 1) as f64;
    let var = (va / (mb * mb) + ma * ma * vb / mb.powi(4) - 2.0 * ma * cov / mb.powi(3)) / m as f64;
    (ratio, Z95 * var.max(0.0).sqrt())
}

/// Paired ratios for each `(numerator, denominator)` estimator pair and every
/// quantity they share. Replicates where either side failed are dropped.
pub fn paired_ratios(records: &[ResultRecord], pairs: &[(&str, &str)]) -> Vec<RatioStats> {
    let map = grouped(records);
    let mut out = Vec::new();
    for ((n, est, q), rows) in &map {
        for (num, den) in pairs {
            if est != num {
                continue;
            }
            let Some(other) = map.get(&(*n, den.to_string(), q.clone())) else {
                continue;
            };
            let by_rep: BTreeMap<usize, &ResultRecord> =
                other.iter().filter(|r| is_ok(r)).map(|r| (r.replicate, *r)).collect();
            let paired: Vec<(&ResultRecord, &ResultRecord)> = rows
                .iter()
                .filter(|r| is_ok(r))
                .filter_map(|r| by_rep.get(&r.replicate).map(|o| (*r, *o)))
                .collect();
            if paired.is_empty() {
                continue;
            }
            let mk = |metric: &str, (value, half_width): (f64, f64)| RatioStats {
                sample_size: *n,
                quantity: q.clone(),
                numerator: num.to_string(),
                denominator: den.to_string(),
                metric: metric.to_string(),
                value,
                half_width,
                pairs: paired.len(),
            };
            let sq_a: Vec<f64> = paired.iter().map(|(a, _)| a.sq_error).collect();
            let sq_b: Vec<f64> = paired.iter().map(|(_, b)| b.sq_error).collect();
            if sq_a.iter().chain(&sq_b).all(|v| v.is_finite()) {
                out.push(mk("mse", paired_ratio(&sq_a, &sq_b)));
            }
            let ea: Vec<f64> = paired.iter().map(|(a, _)| a.estimate).collect();
            let eb: Vec<f64> = paired.iter().map(|(_, b)| b.estimate).collect();
            let (ma, mb) = (mean(&ea), mean(&eb));
            let da: Vec<f64> = ea.iter().map(|v| (v - ma).powi(2)).collect();
            let db: Vec<f64> = eb.iter().map(|v| (v - mb).powi(2)).collect();
            out.push(mk("variance", paired_ratio(&da, &db)));
        }
    }
    out
}

/// Writes the per-replicate rows as CSV.
pub fn write_records<W: std::io::Write>(writer: W, records: &[ResultRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(r).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads rows written by [`write_records`].
pub fn read_records<R: std::io::Read>(reader: R) -> Result<Vec<ResultRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (row, rec) in rdr.deserialize().enumerate() {
        out.push(rec.map_err(|e: csv::Error| Error::Parse {
            rows: row,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "-".into()
    } else if v == 0.0 || (1e-3..1e6).contains(&v.abs()) {
        format!("{v:.6}")
    } else {
        format!("{v:.4e}")
    }
}

/// Human-readable table of a results CSV (or a directory holding
/// `results.csv`).
pub fn summarize(path: &Path) -> Result<String> {
    let file = if path.is_dir() { path.join("results.csv") } else { path.to_path_buf() };
    let reader = std::fs::File::open(&file).map_err(|e| Error::Parse {
        rows: 0,
        message: format!("cannot open {}: {e}", file.display()),
    })?;
    let records = read_records(reader)?;
    summarize_records(&records)
}

/// Table text for already-loaded rows.
pub fn summarize_records(records: &[ResultRecord]) -> Result<String> {
    if records.is_empty() {
        return Err(Error::Parse {
            rows: 0,
            message: "result set is empty".into(),
        });
    }
    let mut scenarios: Vec<&str> = records.iter().map(|r| r.scenario.as_str()).collect();
    scenarios.dedup();
    let replicates = records.iter().map(|r| r.replicate).collect::<std::collections::BTreeSet<_>>().len();
    let mut out = String::new();
    writeln!(out, "scenario: {}  replicates: {replicates}  rows: {}", scenarios.join(","), records.len()).unwrap();
    let header = ["n", "estimator", "quantity", "count", "fail", "mean", "variance", "mse"];
    let rows: Vec<[String; 8]> = group_stats(records)
        .into_iter()
        .map(|g| {
            [
                g.sample_size.to_string(),
                g.estimator,
                g.quantity,
                g.count.to_string(),
                g.failures.to_string(),
                fmt_num(g.mean),
                fmt_num(g.variance),
                fmt_num(g.mse),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for r in &rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: &[&str]| -> String {
        cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 1 || i == 2 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect::<Vec<_>>()
            .join("  ")
    };
    writeln!(out, "{}", line(&header)).unwrap();
    for r in &rows {
        let cells: Vec<&str> = r.iter().map(String::as_str).collect();
        writeln!(out, "{}", line(&cells)).unwrap();
    }
    Ok(out)
}
