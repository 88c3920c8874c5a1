//! CSV and JSON report writers.
//!
//! Every CSV starts with a `# config_hash: <sha256>` comment line; readers
//! should treat `#` as a comment character. Floats are written in shortest
//! round-trip form so reports are byte-stable across runs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attribution::Method;
use crate::error::{Error, Result};
use crate::faithfulness::{FaithfulnessCurve, MethodScore};
use crate::manipulation::{GridResult, ManipulationOutcome, Occurrence};
use crate::mrr::RankVector;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the JSON serialization of `value`.
pub fn config_hash(value: &impl Serialize) -> Result<String> {
    Ok(sha256_hex(serde_json::to_string(value)?.as_bytes()))
}

pub fn file_sha256(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn csv_report(path: &Path, hash: &str) -> Result<csv::Writer<BufWriter<File>>> {
    let mut file = create(path)?;
    writeln!(file, "# config_hash: {hash}").map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn finish(mut w: csv::Writer<BufWriter<File>>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Reads a report CSV written by this module, skipping the hash line.
pub fn read_report(path: impl AsRef<Path>) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path.as_ref())?;
    let header = r.headers()?.iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| Ok(rec?.iter().map(str::to_string).collect()))
        .collect::<Result<_>>()?;
    Ok((header, rows))
}

/// `method,score,used,undefined`
pub fn write_evaluate(path: &Path, hash: &str, methods: &[Method], scores: &[MethodScore]) -> Result<()> {
    let mut w = csv_report(path, hash)?;
    w.write_record(["method", "score", "used", "undefined"])?;
    for (m, s) in methods.iter().zip(scores) {
        w.write_record([m.name().to_string(), opt(s.mean), s.used.to_string(), s.undefined.to_string()])?;
    }
    finish(w, path)
}

pub struct CurveRow<'a> {
    pub sample_id: usize,
    pub method: Method,
    pub curve: &'a FaithfulnessCurve,
}

/// `sample_id,method,step,output`; step 0 is the unperturbed input.
pub fn write_curves(path: &Path, hash: &str, rows: &[CurveRow<'_>]) -> Result<()> {
    let mut w = csv_report(path, hash)?;
    w.write_record(["sample_id", "method", "step", "output"])?;
    for row in rows {
        for (step, v) in row.curve.outputs.iter().enumerate() {
            w.write_record([
                row.sample_id.to_string(),
                row.method.name().to_string(),
                step.to_string(),
                v.to_string(),
            ])?;
        }
    }
    finish(w, path)
}

/// One row per (method, config).
pub fn write_grid(path: &Path, hash: &str, grid: &GridResult) -> Result<()> {
    let mut w = csv_report(path, hash)?;
    w.write_record(["method", "partition_size", "perturbation", "normalize", "score", "undefined"])?;
    for (m, method) in grid.methods.iter().enumerate() {
        for (c, config) in grid.configs.iter().enumerate() {
            w.write_record([
                method.name().to_string(),
                config.partition_size.to_string(),
                config.perturbation.to_string(),
                config.normalize.to_string(),
                opt(grid.scores[m][c]),
                grid.undefined[m][c].to_string(),
            ])?;
        }
    }
    finish(w, path)
}

/// Per-method base and manipulated score, one intra outcome per row:
/// `method,base,manipulated,partition_size,perturbation,normalize`.
pub fn write_intra_table(path: &Path, hash: &str, outcomes: &[ManipulationOutcome]) -> Result<()> {
    let mut w = csv_report(path, hash)?;
    w.write_record(["method", "base", "manipulated", "partition_size", "perturbation", "normalize"])?;
    for o in outcomes {
        let m = o.methods.iter().position(|&x| x == o.focus).unwrap_or(0);
        w.write_record([
            o.focus.name().to_string(),
            opt(o.base_scores[m]),
            opt(o.chosen_scores[m]),
            o.chosen.partition_size.to_string(),
            o.chosen.perturbation.to_string(),
            o.chosen.normalize.to_string(),
        ])?;
    }
    finish(w, path)
}

/// All methods' scores at the base config and at the config chosen for one
/// inter outcome: `method,base,manipulated`.
pub fn write_inter_table(path: &Path, hash: &str, outcome: &ManipulationOutcome) -> Result<()> {
    let mut w = csv_report(path, hash)?;
    w.write_record(["method", "base", "manipulated"])?;
    for (m, method) in outcome.methods.iter().enumerate() {
        w.write_record([
            method.name().to_string(),
            opt(outcome.base_scores[m]),
            opt(outcome.chosen_scores[m]),
        ])?;
    }
    finish(w, path)
}

pub fn write_occurrences(path: &Path, hash: &str, rows: &[Occurrence]) -> Result<()> {
    let mut w = csv_report(path, hash)?;
    w.write_record(["axis", "value", "count"])?;
    for r in rows {
        w.write_record([r.axis.as_str(), r.value.as_str(), &r.count.to_string()])?;
    }
    finish(w, path)
}

pub fn mean_std_cell(mean: f64, std: f64) -> String {
    format!("{mean:.4} ± {std:.4}")
}

/// Method x dataset table of mean rank and spread, plus a pooled `All` column.
pub fn write_mrr_table(
    path: &Path,
    hash: &str,
    methods: &[Method],
    datasets: &[(String, RankVector)],
    pooled: &RankVector,
) -> Result<()> {
    let mut w = csv_report(path, hash)?;
    let mut header = vec!["method".to_string()];
    header.extend(datasets.iter().map(|(name, _)| name.clone()));
    header.push("All".into());
    w.write_record(&header)?;
    for (m, method) in methods.iter().enumerate() {
        let mut row = vec![method.name().to_string()];
        for (_, v) in datasets {
            row.push(mean_std_cell(v.means[m], v.stds[m]));
        }
        row.push(mean_std_cell(pooled.means[m], pooled.stds[m]));
        w.write_record(&row)?;
    }
    finish(w, path)
}

/// Scores divided by the largest absolute score of the grid, so the maximum
/// of a positive grid maps to 1.0.
pub fn boxplot_values(grid: &GridResult) -> Result<Vec<Vec<f64>>> {
    let gaps = grid.gaps();
    if !gaps.is_empty() {
        return Err(Error::IncompleteGrid(format!("{} empty cells", gaps.len())));
    }
    let max = grid
        .scores
        .iter()
        .flatten()
        .flatten()
        .fold(0.0_f64, |m, v| m.max(v.abs()));
    Ok(grid
        .scores
        .iter()
        .map(|row| {
            row.iter()
                .map(|v| if max > 0.0 { v.unwrap() / max } else { 0.0 })
                .collect()
        })
        .collect())
}

/// `method,partition_size,perturbation,normalize,normalized_score`
pub fn export_boxplot_data(path: &Path, hash: &str, grid: &GridResult) -> Result<()> {
    let values = boxplot_values(grid)?;
    let mut w = csv_report(path, hash)?;
    w.write_record(["method", "partition_size", "perturbation", "normalize", "normalized_score"])?;
    for (method, row) in grid.methods.iter().zip(&values) {
        for (config, v) in grid.configs.iter().zip(row) {
            w.write_record([
                method.name().to_string(),
                config.partition_size.to_string(),
                config.perturbation.to_string(),
                config.normalize.to_string(),
                v.to_string(),
            ])?;
        }
    }
    finish(w, path)
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut file = create(path)?;
    serde_json::to_writer_pretty(&mut file, value)?;
    writeln!(file).and_then(|_| file.flush()).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub config_hash: String,
    pub outcomes: Vec<ManipulationOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    pub path: PathBuf,
    pub sha256: String,
}

impl ArtifactRecord {
    pub fn of(path: &Path) -> Result<Self> {
        Ok(Self {
            path: path.to_path_buf(),
            sha256: file_sha256(path)?,
        })
    }
}
