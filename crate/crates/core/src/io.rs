//! Plain-text storage for instances.
//!
//! Matrices are headerless row-major CSV with 17 significant digits, which
//! round-trips every `f64`. A weight sequence is a JSON manifest
//! `{n, d, support: [[l1, l2], ...], files: [...]}` plus one single-column CSV
//! per support entry listing the generator for offsets `-(n-1)..=n-1`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rope::{SupportSet, WeightSequence};
use crate::structured::ToeplitzGenerator;

pub const MANIFEST_FILE: &str = "weights.json";

fn format_value(x: f64) -> String {
    format!("{x:.16e}")
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    }
}

fn parse_value(path: &Path, line: usize, field: &str) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| {
        Error::Format(format!(
            "{}: record {line}: `{field}` is not a number",
            path.display()
        ))
    })
}

pub fn write_matrix_csv(path: &Path, m: &Matrix) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    for i in 0..m.rows() {
        w.write_record(m.row(i).iter().map(|&x| format_value(x)))
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush()?;
    Ok(())
}

fn read_records(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut rows = Vec::new();
    for (line, record) in r.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let row = record
            .iter()
            .map(|f| parse_value(path, line + 1, f))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn read_matrix_csv(path: &Path) -> Result<Matrix> {
    let rows = read_records(path)?;
    let cols = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().position(|r| r.len() != cols) {
        return Err(Error::Format(format!(
            "{}: record {} has {} fields, expected {cols}",
            path.display(),
            bad + 1,
            rows[bad].len()
        )));
    }
    let n = rows.len();
    Matrix::from_vec(n, cols, rows.concat())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightManifest {
    pub n: usize,
    pub d: usize,
    pub support: Vec<[usize; 2]>,
    pub files: Vec<String>,
}

/// Writes the manifest and generator files into `dir`; returns the manifest path.
pub fn write_weights(dir: &Path, w: &WeightSequence) -> Result<PathBuf> {
    let support = w.support().entries();
    let files: Vec<String> = support
        .iter()
        .map(|(a, b)| format!("w_{a}_{b}.csv"))
        .collect();
    for (file, g) in files.iter().zip(w.generators()) {
        let mut out = BufWriter::new(File::create(dir.join(file))?);
        for &x in g.as_slice() {
            writeln!(out, "{}", format_value(x))?;
        }
        out.flush()?;
    }
    let manifest = WeightManifest {
        n: w.n(),
        d: w.d(),
        support: support.iter().map(|&(a, b)| [a, b]).collect(),
        files,
    };
    let path = dir.join(MANIFEST_FILE);
    let mut out = BufWriter::new(File::create(&path)?);
    serde_json::to_writer_pretty(&mut out, &manifest)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    writeln!(out)?;
    out.flush()?;
    Ok(path)
}

/// Reads a manifest; generator files resolve relative to its directory.
pub fn read_weights(manifest_path: &Path) -> Result<WeightSequence> {
    let manifest: WeightManifest = serde_json::from_reader(BufReader::new(File::open(manifest_path)?))
        .map_err(|e| Error::Format(format!("{}: {e}", manifest_path.display())))?;
    if manifest.files.len() != manifest.support.len() {
        return Err(Error::Format(format!(
            "{}: {} files for {} support entries",
            manifest_path.display(),
            manifest.files.len(),
            manifest.support.len()
        )));
    }
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let support = SupportSet::new(
        manifest.d,
        manifest.support.iter().map(|&[a, b]| (a, b)).collect(),
    )?;
    let gens = manifest
        .files
        .iter()
        .map(|f| {
            let path = base.join(f);
            let rows = read_records(&path)?;
            if let Some(bad) = rows.iter().position(|r| r.len() != 1) {
                return Err(Error::Format(format!(
                    "{}: record {} should hold one value",
                    path.display(),
                    bad + 1
                )));
            }
            ToeplitzGenerator::new(manifest.n, rows.concat())
        })
        .collect::<Result<Vec<_>>>()?;
    WeightSequence::new(manifest.n, support, gens)
}
