//! CSV artifacts. Every file has a mandatory header row; reals are written in
//! Rust's shortest round-trip form, so parsing a file back yields the exact
//! in-memory values. Each writer re-reads its output and compares.
//!
//! | file | header | rows |
//! |------|--------|------|
//! | `trace.csv` | `step,loss,accuracy,nc1,nc2,nc3,per_class_acc_0..K−1,solver_mean_iters,solver_skip_count` | one per snapshot; solver fields empty for explicit heads |
//! | `features.csv` | `label,h_0..h_{D−1}` | one per sample, post-head features |
//! | `gram_samples.csv` | `label,s_0..s_{N−1}` | `HᵀH` with samples sorted by class |
//! | `gram_class_means.csv` | `class,c_0..c_{K−1}` | `H̄ᵀH̄` of the class means |

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::lpm::Snapshot;
use crate::metrics::class_statistics;
use crate::numerics::Matrix;

pub const TRACE_FILE: &str = "trace.csv";
pub const FEATURES_FILE: &str = "features.csv";
pub const GRAM_SAMPLES_FILE: &str = "gram_samples.csv";
pub const GRAM_CLASS_MEANS_FILE: &str = "gram_class_means.csv";

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => format_err(path, format!("{other:?}")),
    }
}

fn write_rows(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_rows(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec.map_err(|e| csv_err(path, e))?.iter().map(String::from).collect());
    }
    Ok((header, rows))
}

fn parse_f64(path: &Path, field: &str) -> Result<f64> {
    field.parse().map_err(|_| format_err(path, format!("not a number: {field:?}")))
}

fn parse_usize(path: &Path, field: &str) -> Result<usize> {
    field.parse().map_err(|_| format_err(path, format!("not a count: {field:?}")))
}

fn expect_header(path: &Path, got: &[String], want: &[String]) -> Result<()> {
    if got != want {
        return Err(format_err(path, format!("header {:?}, expected {:?}", got.join(","), want.join(","))));
    }
    Ok(())
}

/// One `trace.csv` row.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub nc1: f64,
    pub nc2: f64,
    pub nc3: f64,
    pub per_class_accuracy: Vec<f64>,
    pub solver_mean_iters: Option<f64>,
    pub solver_skip_count: Option<usize>,
}

impl From<&Snapshot> for TraceRow {
    fn from(s: &Snapshot) -> Self {
        TraceRow {
            step: s.step,
            loss: s.report.loss,
            accuracy: s.report.accuracy,
            nc1: s.report.nc1,
            nc2: s.report.nc2,
            nc3: s.report.nc3,
            per_class_accuracy: s.report.per_class_accuracy.clone(),
            solver_mean_iters: s.solver.map(|x| x.mean_iterations),
            solver_skip_count: s.solver.map(|x| x.skipped),
        }
    }
}

pub fn trace_header(k: usize) -> Vec<String> {
    let mut h: Vec<String> = ["step", "loss", "accuracy", "nc1", "nc2", "nc3"].map(String::from).to_vec();
    h.extend((0..k).map(|c| format!("per_class_acc_{c}")));
    h.push("solver_mean_iters".into());
    h.push("solver_skip_count".into());
    h
}

pub fn write_trace(path: &Path, k: usize, snapshots: &[Snapshot]) -> Result<()> {
    let rows: Vec<TraceRow> = snapshots.iter().map(TraceRow::from).collect();
    let fields: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut f = vec![
                r.step.to_string(),
                r.loss.to_string(),
                r.accuracy.to_string(),
                r.nc1.to_string(),
                r.nc2.to_string(),
                r.nc3.to_string(),
            ];
            f.extend(r.per_class_accuracy.iter().map(f64::to_string));
            f.push(r.solver_mean_iters.map(|v| v.to_string()).unwrap_or_default());
            f.push(r.solver_skip_count.map(|v| v.to_string()).unwrap_or_default());
            f
        })
        .collect();
    write_rows(path, &trace_header(k), &fields)?;
    if read_trace(path)? != rows {
        return Err(format_err(path, "re-read trace differs from what was written"));
    }
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>> {
    let (header, rows) = read_rows(path)?;
    let k = header.len().checked_sub(8).ok_or_else(|| format_err(path, "trace header too short"))?;
    expect_header(path, &header, &trace_header(k))?;
    let mut out: Vec<TraceRow> = Vec::with_capacity(rows.len());
    for row in rows {
        fn optional(field: &str) -> Option<&str> {
            if field.is_empty() { None } else { Some(field) }
        }
        let solver_mean_iters = optional(&row[6 + k]).map(|f| parse_f64(path, f)).transpose()?;
        let solver_skip_count = optional(&row[7 + k]).map(|f| parse_usize(path, f)).transpose()?;
        if solver_mean_iters.is_some() != solver_skip_count.is_some() {
            return Err(format_err(path, "solver columns must be both empty or both filled"));
        }
        let r = TraceRow {
            step: parse_usize(path, &row[0])?,
            loss: parse_f64(path, &row[1])?,
            accuracy: parse_f64(path, &row[2])?,
            nc1: parse_f64(path, &row[3])?,
            nc2: parse_f64(path, &row[4])?,
            nc3: parse_f64(path, &row[5])?,
            per_class_accuracy: row[6..6 + k].iter().map(|f| parse_f64(path, f)).collect::<Result<_>>()?,
            solver_mean_iters,
            solver_skip_count,
        };
        if !r.loss.is_finite() {
            return Err(format_err(path, format!("non-finite loss at step {}", r.step)));
        }
        if out.last().is_some_and(|prev| prev.step >= r.step) {
            return Err(format_err(path, "steps must increase"));
        }
        out.push(r);
    }
    Ok(out)
}

/// Labelled matrix CSV: one row per entry of `labels`, `width` value columns.
fn write_labelled(path: &Path, first: &str, prefix: &str, labels: &[usize], m: &Matrix) -> Result<()> {
    let mut header = vec![first.to_string()];
    header.extend((0..m.cols()).map(|j| format!("{prefix}_{j}")));
    let rows: Vec<Vec<String>> = (0..m.rows())
        .map(|i| std::iter::once(labels[i].to_string()).chain(m.row(i).iter().map(f64::to_string)).collect())
        .collect();
    write_rows(path, &header, &rows)?;
    let (back_labels, back) = read_labelled(path, first, prefix)?;
    if back_labels != labels || back.as_slice() != m.as_slice() {
        return Err(format_err(path, "re-read matrix differs from what was written"));
    }
    Ok(())
}

fn read_labelled(path: &Path, first: &str, prefix: &str) -> Result<(Vec<usize>, Matrix)> {
    let (header, rows) = read_rows(path)?;
    let width = header.len().saturating_sub(1);
    let mut want = vec![first.to_string()];
    want.extend((0..width).map(|j| format!("{prefix}_{j}")));
    expect_header(path, &header, &want)?;
    if width == 0 || rows.is_empty() {
        return Err(format_err(path, "empty matrix"));
    }
    let mut labels = Vec::with_capacity(rows.len());
    let mut data = Vec::with_capacity(rows.len() * width);
    for row in &rows {
        labels.push(parse_usize(path, &row[0])?);
        for f in &row[1..] {
            data.push(parse_f64(path, f)?);
        }
    }
    let m = Matrix::new(rows.len(), width, data).map_err(|e| format_err(path, e.to_string()))?;
    Ok((labels, m))
}

/// Writes post-head features `H` (D×N) as one row per sample.
pub fn write_features(path: &Path, h: &Matrix, labels: &[usize]) -> Result<()> {
    write_labelled(path, "label", "h", labels, &h.transpose())
}

/// Returns `(H, labels)` with `H` as D×N.
pub fn read_features(path: &Path) -> Result<(Matrix, Vec<usize>)> {
    let (labels, rows) = read_labelled(path, "label", "h")?;
    Ok((rows.transpose(), labels))
}

pub fn read_gram_samples(path: &Path) -> Result<(Vec<usize>, Matrix)> {
    let (labels, g) = read_labelled(path, "label", "s")?;
    if !g.is_square() {
        return Err(format_err(path, "sample Gram is not square"));
    }
    Ok((labels, g))
}

pub fn read_gram_class_means(path: &Path) -> Result<Matrix> {
    let (classes, g) = read_labelled(path, "class", "c")?;
    if !g.is_square() || classes != (0..g.rows()).collect::<Vec<_>>() {
        return Err(format_err(path, "class Gram must be square with classes 0..K"));
    }
    Ok(g)
}

/// Sample Gram `HᵀH` (samples stably sorted by class) and class-mean Gram
/// `H̄ᵀH̄`, written as `gram_samples.csv` and `gram_class_means.csv` inside
/// `dir`. Returns the two paths.
pub fn export_gram(features_h: &Matrix, labels: &[usize], dir: &Path) -> Result<(PathBuf, PathBuf)> {
    if labels.len() != features_h.cols() {
        return Err(Error::shape("export_gram", format!("{} labels", features_h.cols()), labels.len().to_string()));
    }
    let k = labels.iter().max().map_or(0, |m| m + 1).max(2);
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by_key(|&j| labels[j]);
    let sorted = features_h.select_columns(&order);
    let sorted_labels: Vec<usize> = order.iter().map(|&j| labels[j]).collect();
    let stats = class_statistics(features_h, labels, k)?;
    let means = stats.class_means;

    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let samples = dir.join(GRAM_SAMPLES_FILE);
    let classes = dir.join(GRAM_CLASS_MEANS_FILE);
    write_labelled(&samples, "label", "s", &sorted_labels, &sorted.t_matmul(&sorted))?;
    write_labelled(&classes, "class", "c", &(0..k).collect::<Vec<_>>(), &means.t_matmul(&means))?;
    Ok((samples, classes))
}
