//! CSV and manifest ingestion.
//!
//! Matrix CSV: the first row holds column labels (its first cell is
//! ignored), every later row starts with its row label; an empty cell (or
//! `NA`/`NaN`) is missing. A tensor is a TOML manifest listing one such CSV
//! per outcome coordinate, with identical labels and missingness.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::tensor_store::{Mask, PartialTensor};

struct Grid {
    row_labels: Vec<String>,
    col_labels: Vec<String>,
    /// Row-major, `None` for empty cells.
    cells: Vec<Option<String>>,
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn read_grid<R: Read>(reader: R, path: &Path) -> Result<Grid> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = records
        .next()
        .ok_or_else(|| parse_error(path, 1, "empty file"))??;
    let col_labels: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    if col_labels.is_empty() {
        return Err(parse_error(path, 1, "header has no column labels"));
    }
    let mut row_labels = Vec::new();
    let mut cells = Vec::new();
    for (k, rec) in records.enumerate() {
        let rec = rec?;
        let line = k + 2;
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() != col_labels.len() + 1 {
            return Err(parse_error(
                path,
                line,
                format!("expected {} fields, found {}", col_labels.len() + 1, rec.len()),
            ));
        }
        row_labels.push(rec[0].to_string());
        for field in rec.iter().skip(1) {
            let missing = field.is_empty() || field.eq_ignore_ascii_case("na") || field.eq_ignore_ascii_case("nan");
            cells.push(if missing { None } else { Some(field.to_string()) });
        }
    }
    if row_labels.is_empty() {
        return Err(parse_error(path, 2, "no data rows"));
    }
    Ok(Grid {
        row_labels,
        col_labels,
        cells,
    })
}

fn grid_values(grid: &Grid, path: &Path) -> Result<(Vec<f64>, Mask)> {
    let n = grid.col_labels.len();
    let mut values = Vec::with_capacity(grid.cells.len());
    let mut bits = Vec::with_capacity(grid.cells.len());
    for (idx, cell) in grid.cells.iter().enumerate() {
        match cell {
            None => {
                values.push(0.0);
                bits.push(false);
            }
            Some(text) => {
                let v: f64 = text.parse().map_err(|_| {
                    parse_error(
                        path,
                        idx / n + 2,
                        format!("column `{}`: `{text}` is not a number", grid.col_labels[idx % n]),
                    )
                })?;
                if !v.is_finite() {
                    return Err(parse_error(path, idx / n + 2, format!("non-finite value `{text}`")));
                }
                values.push(v);
                bits.push(true);
            }
        }
    }
    Ok((values, Mask::from_vec(grid.row_labels.len(), n, bits)?))
}

/// Parses a matrix CSV from any reader; `source` names it in errors.
pub fn read_matrix<R: Read>(reader: R, source: &Path) -> Result<PartialTensor> {
    let grid = read_grid(reader, source)?;
    let (values, mask) = grid_values(&grid, source)?;
    PartialTensor::new(1, values, mask)?.with_labels(grid.row_labels, grid.col_labels)
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<PartialTensor> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_matrix(std::io::BufReader::new(file), path)
}

fn write_grid<W: Write>(
    writer: W,
    t: &PartialTensor,
    mut cell: impl FnMut(usize, usize) -> Option<String>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![String::new()];
    header.extend(t.col_labels().iter().cloned());
    w.write_record(&header)?;
    for i in 0..t.rows() {
        let mut rec = vec![t.row_labels()[i].clone()];
        rec.extend((0..t.cols()).map(|j| cell(i, j).unwrap_or_default()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// Writes outcome coordinate `k` as a matrix CSV; unobserved cells are empty.
pub fn write_matrix<W: Write>(writer: W, t: &PartialTensor, k: usize) -> Result<()> {
    if k >= t.depth() {
        return Err(Error::IndexOutOfRange { index: k, len: t.depth() });
    }
    write_grid(writer, t, |i, j| t.observed_at(i, j, k).map(|v| v.to_string()))
}

pub fn save_matrix(path: impl AsRef<Path>, t: &PartialTensor, k: usize) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_matrix(std::io::BufWriter::new(file), t, k)
}

/// Mask CSV: 1 for observed, 0 for missing, with the data CSV label layout.
pub fn read_mask<R: Read>(reader: R, source: &Path) -> Result<(Mask, Vec<String>, Vec<String>)> {
    let grid = read_grid(reader, source)?;
    let n = grid.col_labels.len();
    let mut bits = Vec::with_capacity(grid.cells.len());
    for (idx, cell) in grid.cells.iter().enumerate() {
        match cell.as_deref() {
            Some("1") => bits.push(true),
            Some("0") => bits.push(false),
            other => {
                return Err(parse_error(
                    source,
                    idx / n + 2,
                    format!("mask cells must be 0 or 1, found `{}`", other.unwrap_or("")),
                ))
            }
        }
    }
    let mask = Mask::from_vec(grid.row_labels.len(), n, bits)?;
    Ok((mask, grid.row_labels, grid.col_labels))
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<(Mask, Vec<String>, Vec<String>)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_mask(std::io::BufReader::new(file), path)
}

pub fn write_mask<W: Write>(writer: W, mask: &Mask, row_labels: &[String], col_labels: &[String]) -> Result<()> {
    let (m, n) = mask.shape();
    if row_labels.len() != m || col_labels.len() != n {
        return Err(Error::InvalidParameter("label counts do not match the mask".into()));
    }
    let carrier = PartialTensor::new(1, vec![0.0; m * n], Mask::full(m, n))?
        .with_labels(row_labels.to_vec(), col_labels.to_vec())?;
    write_grid(writer, &carrier, |i, j| Some(if mask.get(i, j) { "1" } else { "0" }.to_string()))
}

pub fn save_mask(path: impl AsRef<Path>, mask: &Mask, row_labels: &[String], col_labels: &[String]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_mask(std::io::BufWriter::new(file), mask, row_labels, col_labels)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    /// CSV paths in coordinate order, relative to the manifest.
    files: Vec<PathBuf>,
}

/// Loads a TOML tensor manifest (`files = ["y1.csv", "y2.csv"]`).
pub fn load_manifest(path: impl AsRef<Path>) -> Result<PartialTensor> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: Manifest = toml::from_str(&text)?;
    if manifest.files.is_empty() {
        return Err(parse_error(path, 1, "manifest lists no files"));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let slices = manifest
        .files
        .iter()
        .map(|f| load_matrix(base.join(f)))
        .collect::<Result<Vec<_>>>()?;
    let first = &slices[0];
    for (f, s) in manifest.files.iter().zip(&slices).skip(1) {
        if s.row_labels() != first.row_labels() || s.col_labels() != first.col_labels() {
            return Err(parse_error(base.join(f).as_path(), 1, "labels differ from the first coordinate file"));
        }
        if s.mask() != first.mask() {
            return Err(parse_error(base.join(f).as_path(), 1, "missing cells differ from the first coordinate file"));
        }
    }
    let coords: Vec<_> = slices.iter().map(|s| s.coordinate(0)).collect();
    PartialTensor::from_coordinates(&coords, first.mask().clone())?
        .with_labels(first.row_labels().to_vec(), first.col_labels().to_vec())
}

/// Writes one CSV per coordinate next to a manifest named `path`.
pub fn save_manifest(path: impl AsRef<Path>, t: &PartialTensor) -> Result<()> {
    let path = path.as_ref();
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("tensor");
    let base = path.parent().unwrap_or(Path::new("."));
    let mut names = Vec::new();
    for k in 0..t.depth() {
        let name = format!("{stem}_{}.csv", k + 1);
        save_matrix(base.join(&name), t, k)?;
        names.push(format!("\"{name}\""));
    }
    std::fs::write(path, format!("files = [{}]\n", names.join(", "))).map_err(|e| Error::io(path, e))
}

/// A CSV matrix or, for `.toml` paths, a tensor manifest.
pub fn load_tensor(path: impl AsRef<Path>) -> Result<PartialTensor> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => load_manifest(path),
        _ => load_matrix(path),
    }
}
