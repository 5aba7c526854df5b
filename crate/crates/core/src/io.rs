//! CSV input and output.
//!
//! Writers format floats as `{:.16e}` with LF line endings and replace the
//! target atomically (write to a sibling temp file, then rename), so reruns
//! with the same inputs produce byte-identical files.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::bounds::{BoundReport, CurveFamily, CurveRow, IndexSetFamily};
use crate::chaos::{CellProfile, ChaosError, ChaosTensor};
use crate::distributions::{DistError, Distribution};
use crate::verify::CheckResult;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv error in {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}, row {row}: {msg}")]
    Parse { path: PathBuf, row: usize, msg: String },
    #[error(transparent)]
    Distribution(#[from] DistError),
    #[error(transparent)]
    Chaos(#[from] ChaosError),
    #[error("{0}")]
    Invalid(String),
}

/// Formats a float the way every writer here does.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// One row of a results file.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub check_id: String,
    pub formula_id: String,
    pub n: usize,
    pub dist: String,
    pub bound: f64,
    pub estimate: f64,
    pub std_error: f64,
    pub holds: bool,
    pub margin: f64,
    pub seed: u64,
}

impl ResultRow {
    pub fn from_check(check_id: &str, n: usize, dist: &str, check: &CheckResult) -> Self {
        ResultRow {
            check_id: check_id.to_string(),
            formula_id: check.bound.formula.as_str().to_string(),
            n,
            dist: dist.to_string(),
            bound: check.bound.value,
            estimate: check.estimate.value,
            std_error: check.estimate.std_error,
            holds: check.holds,
            margin: check.margin,
            seed: check.estimate.seed,
        }
    }
}

pub const RESULTS_HEADER: [&str; 10] =
    ["check_id", "formula_id", "n", "dist", "bound", "estimate", "std_error", "holds", "margin", "seed"];
pub const BOUNDS_HEADER: [&str; 5] = ["formula_id", "metric", "value", "term_name", "term_value"];
pub const CURVES_HEADER: [&str; 7] = ["family", "x", "third", "kernel", "ratio", "check", "converged"];

/// Renders rows as CSV text with LF line endings.
pub fn format_table(rows: &[Vec<String>]) -> Result<Vec<u8>, IoError> {
    let mut buf = Vec::new();
    {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(&mut buf);
        for row in rows {
            w.write_record(row).map_err(|source| IoError::Csv { path: PathBuf::from("<table>"), source })?;
        }
        w.flush().map_err(|source| IoError::Io { path: PathBuf::from("<table>"), source })?;
    }
    Ok(buf)
}

/// Writes rows to `path` through a sibling temp file and a rename.
pub fn write_table(path: &Path, rows: &[Vec<String>]) -> Result<(), IoError> {
    let io_err = |source| IoError::Io { path: path.to_path_buf(), source };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let name = path.file_name().ok_or_else(|| IoError::Invalid(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let buf = format_table(rows)?;
    let mut file = fs::File::create(&tmp).map_err(io_err)?;
    file.write_all(&buf).map_err(io_err)?;
    file.sync_all().map_err(io_err)?;
    drop(file);
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        io_err(e)
    })
}

fn header(h: &[&str]) -> Vec<String> {
    h.iter().map(|s| s.to_string()).collect()
}

pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<(), IoError> {
    write_table(path, &results_table(rows))
}

pub fn results_table(rows: &[ResultRow]) -> Vec<Vec<String>> {
    let mut out = vec![header(&RESULTS_HEADER)];
    out.extend(rows.iter().map(|r| {
        vec![
            r.check_id.clone(),
            r.formula_id.clone(),
            r.n.to_string(),
            r.dist.clone(),
            fmt_f64(r.bound),
            fmt_f64(r.estimate),
            fmt_f64(r.std_error),
            r.holds.to_string(),
            fmt_f64(r.margin),
            r.seed.to_string(),
        ]
    }));
    out
}

/// One row per named term; reports without terms get a single row with
/// empty term columns.
pub fn write_bounds(path: &Path, reports: &[BoundReport<f64>]) -> Result<(), IoError> {
    write_table(path, &bounds_table(reports))
}

pub fn bounds_table(reports: &[BoundReport<f64>]) -> Vec<Vec<String>> {
    let mut out = vec![header(&BOUNDS_HEADER)];
    for r in reports {
        let base = [r.formula.as_str().to_string(), r.metric.as_str().to_string(), fmt_f64(r.value)];
        if r.terms.is_empty() {
            out.push(base.iter().cloned().chain([String::new(), String::new()]).collect());
        }
        for (name, v) in &r.terms {
            out.push(base.iter().cloned().chain([name.clone(), fmt_f64(*v)]).collect());
        }
    }
    out
}

pub fn write_curves(path: &Path, family: CurveFamily, rows: &[CurveRow<f64>]) -> Result<(), IoError> {
    write_table(path, &curves_table(family, rows))
}

pub fn curves_table(family: CurveFamily, rows: &[CurveRow<f64>]) -> Vec<Vec<String>> {
    let mut out = vec![header(&CURVES_HEADER)];
    out.extend(rows.iter().map(|r| {
        vec![
            family.as_str().to_string(),
            fmt_f64(r.x),
            fmt_f64(r.third),
            fmt_f64(r.kernel),
            fmt_f64(r.ratio),
            fmt_f64(r.check),
            r.converged.to_string(),
        ]
    }));
    out
}

/// Reads the data rows of a headered CSV as trimmed string fields.
fn read_rows(path: &Path) -> Result<Vec<(usize, Vec<String>)>, IoError> {
    let csv_err = |source| IoError::Csv { path: path.to_path_buf(), source };
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(csv_err)?;
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        rows.push((i + 2, rec.iter().map(str::to_string).collect()));
    }
    Ok(rows)
}

fn parse_field<F: std::str::FromStr>(path: &Path, row: usize, field: &str, what: &str) -> Result<F, IoError> {
    field.parse().map_err(|_| IoError::Parse { path: path.to_path_buf(), row, msg: format!("bad {what} `{field}`") })
}

fn expect_len(path: &Path, row: usize, fields: &[String], len: usize) -> Result<(), IoError> {
    if fields.len() != len {
        return Err(IoError::Parse {
            path: path.to_path_buf(),
            row,
            msg: format!("expected {len} columns, found {}", fields.len()),
        });
    }
    Ok(())
}

/// A tabulated law from `x,cdf` rows.
pub fn load_tabulated(path: &Path) -> Result<Distribution<f64>, IoError> {
    let mut xs = Vec::new();
    let mut cdf = Vec::new();
    for (row, f) in read_rows(path)? {
        expect_len(path, row, &f, 2)?;
        xs.push(parse_field(path, row, &f[0], "x")?);
        cdf.push(parse_field(path, row, &f[1], "cdf")?);
    }
    Ok(Distribution::tabulated(xs, cdf)?)
}

/// An order-n tensor from `k1,...,kn,value` rows (1-based cells) with one
/// shared cell profile. The tensor is used as given, not symmetrized.
pub fn load_tensor(path: &Path, profile: CellProfile<f64>) -> Result<ChaosTensor<f64>, IoError> {
    let rows = read_rows(path)?;
    let Some((_, first)) = rows.first() else {
        return Err(IoError::Invalid(format!("{}: no tensor entries", path.display())));
    };
    let order = first.len().checked_sub(1).filter(|&n| n > 0).ok_or_else(|| {
        IoError::Invalid(format!("{}: need at least one index column", path.display()))
    })?;
    let mut coeffs: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
    let mut cells = 0;
    for (row, f) in &rows {
        expect_len(path, *row, f, order + 1)?;
        let key = f[..order]
            .iter()
            .map(|s| {
                let k: usize = parse_field(path, *row, s, "cell index")?;
                if k == 0 {
                    return Err(IoError::Parse { path: path.to_path_buf(), row: *row, msg: "cells are 1-based".into() });
                }
                Ok(k - 1)
            })
            .collect::<Result<Vec<_>, _>>()?;
        cells = cells.max(key.iter().max().map_or(0, |k| k + 1));
        let v: f64 = parse_field(path, *row, &f[order], "value")?;
        *coeffs.entry(key).or_insert(0.0) += v;
    }
    let mut t = ChaosTensor::zero(order, cells);
    t.add_term(coeffs, vec![profile; order])?;
    Ok(t)
}

/// A square matrix from `k,l,value` rows (1-based). An entry whose mirror is
/// absent is mirrored; entries given twice must agree.
pub fn load_matrix(path: &Path) -> Result<Vec<Vec<f64>>, IoError> {
    let mut entries: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut n = 0;
    for (row, f) in read_rows(path)? {
        expect_len(path, row, &f, 3)?;
        let k: usize = parse_field(path, row, &f[0], "row index")?;
        let l: usize = parse_field(path, row, &f[1], "column index")?;
        if k == 0 || l == 0 {
            return Err(IoError::Parse { path: path.to_path_buf(), row, msg: "indices are 1-based".into() });
        }
        let v: f64 = parse_field(path, row, &f[2], "value")?;
        if entries.insert((k - 1, l - 1), v).is_some() {
            return Err(IoError::Parse { path: path.to_path_buf(), row, msg: format!("duplicate entry ({k},{l})") });
        }
        n = n.max(k).max(l);
    }
    let mut a = vec![vec![0.0; n]; n];
    for (&(k, l), &v) in &entries {
        match entries.get(&(l, k)) {
            Some(&w) if w != v => {
                return Err(IoError::Invalid(format!("{}: entries ({},{}) and ({},{}) differ", path.display(), k + 1, l + 1, l + 1, k + 1)))
            }
            _ => {
                a[k][l] = v;
                a[l][k] = v;
            }
        }
    }
    Ok(a)
}

fn read_weights(path: &Path, fill: f64) -> Result<Vec<f64>, IoError> {
    let mut b = Vec::new();
    for (row, f) in read_rows(path)? {
        expect_len(path, row, &f, 2)?;
        let k: usize = parse_field(path, row, &f[0], "index")?;
        if k == 0 {
            return Err(IoError::Parse { path: path.to_path_buf(), row, msg: "indices are 1-based".into() });
        }
        if k > b.len() {
            b.resize(k, fill);
        }
        b[k - 1] = parse_field(path, row, &f[1], "weight")?;
    }
    Ok(b)
}

/// Dense weights from `k,b` rows (1-based); missing indices get 0.
pub fn load_weights(path: &Path) -> Result<Vec<f64>, IoError> {
    read_weights(path, 0.0)
}

/// Index tuples from `i1,...,iq` rows (1-based), with optional per-element
/// weights. Without weights every element gets weight 1.
pub fn load_family(path: &Path, weights: Option<&Path>) -> Result<IndexSetFamily<f64>, IoError> {
    let rows = read_rows(path)?;
    let q = rows.first().map(|(_, f)| f.len()).ok_or_else(|| IoError::Invalid(format!("{}: empty family", path.display())))?;
    let mut tuples = Vec::with_capacity(rows.len());
    for (row, f) in &rows {
        expect_len(path, *row, f, q)?;
        let t = f
            .iter()
            .map(|s| {
                let i: usize = parse_field(path, *row, s, "index")?;
                i.checked_sub(1).ok_or_else(|| IoError::Parse { path: path.to_path_buf(), row: *row, msg: "indices are 1-based".into() })
            })
            .collect::<Result<Vec<_>, _>>()?;
        tuples.push(t);
    }
    let n = tuples.iter().flatten().max().map_or(0, |m| m + 1);
    let mut b = match weights {
        Some(wpath) => read_weights(wpath, 1.0)?,
        None => Vec::new(),
    };
    if b.len() < n {
        b.resize(n, 1.0);
    }
    IndexSetFamily::new(q, tuples, b).map_err(|e| IoError::Invalid(e.to_string()))
}
