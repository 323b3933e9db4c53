//! Matrix, vector and index file formats.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FileError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Malformed { path: PathBuf, message: String },
}

fn malformed(path: &Path, message: impl Into<String>) -> FileError {
    FileError::Malformed {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn read_text(path: &Path) -> Result<String, FileError> {
    fs::read_to_string(path).map_err(|source| FileError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
}

fn parse_cell(path: &Path, row: usize, col: usize, cell: &str, sentinel: Option<&str>) -> Result<f64, FileError> {
    if sentinel == Some(cell) {
        return Ok(f64::NAN);
    }
    let v: f64 = cell
        .parse()
        .map_err(|_| malformed(path, format!("row {row}, column {col}: '{cell}' is not a number")))?;
    if !v.is_finite() {
        return Err(malformed(path, format!("row {row}, column {col}: value is not finite")));
    }
    Ok(v)
}

/// Reads a dense, comma-separated, row-major matrix. A first row that does
/// not parse as numbers is taken as a header. Cells equal to `sentinel` are
/// returned as NaN.
pub fn read_dense(path: &Path, sentinel: Option<&str>) -> Result<DMatrix<f64>, FileError> {
    let text = read_text(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in reader(&text).records().enumerate() {
        let rec = rec.map_err(|e| malformed(path, e.to_string()))?;
        if rec.iter().all(|c| c.is_empty()) {
            continue;
        }
        let parsed: Result<Vec<f64>, _> = rec
            .iter()
            .enumerate()
            .map(|(j, c)| parse_cell(path, i + 1, j + 1, c, sentinel))
            .collect();
        match parsed {
            Ok(v) => rows.push(v),
            Err(_) if i == 0 && rec.iter().any(|c| c.parse::<f64>().is_err() && Some(c) != sentinel) => continue,
            Err(e) => return Err(e),
        }
    }
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 {
        return Err(malformed(path, "no numeric rows"));
    }
    if let Some(i) = rows.iter().position(|r| r.len() != ncols) {
        return Err(malformed(
            path,
            format!("row {} has {} values, expected {ncols}", i + 1, rows[i].len()),
        ));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// A vector stored as a single row or a single column.
pub fn read_vector(path: &Path) -> Result<Vec<f64>, FileError> {
    let m = read_dense(path, None)?;
    if m.nrows() == 1 || m.ncols() == 1 {
        Ok(m.iter().copied().collect())
    } else {
        Err(malformed(path, format!("expected a vector, found a {}x{} matrix", m.nrows(), m.ncols())))
    }
}

/// Coordinate CSV with header `row,col,value` and zero-based indices.
pub fn read_coordinates(path: &Path) -> Result<Vec<(usize, usize, f64)>, FileError> {
    let text = read_text(path)?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| malformed(path, e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != ["row", "col", "value"] {
        return Err(malformed(path, "header must be 'row,col,value'"));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| malformed(path, e.to_string()))?;
        let line = i + 2;
        let idx = |k: usize| {
            rec[k]
                .parse::<usize>()
                .map_err(|_| malformed(path, format!("line {line}: '{}' is not an index", &rec[k])))
        };
        out.push((idx(0)?, idx(1)?, parse_cell(path, line, 3, &rec[2], None)?));
    }
    Ok(out)
}

/// JSON array of arrays of zero-based indices.
pub fn read_blocks(path: &Path) -> Result<Vec<Vec<usize>>, FileError> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| malformed(path, format!("expected an array of index arrays: {e}")))
}

/// JSON index list: a flat array, or an array holding a single array.
pub fn read_indices(path: &Path) -> Result<Vec<usize>, FileError> {
    let text = read_text(path)?;
    if let Ok(flat) = serde_json::from_str::<Vec<usize>>(&text) {
        return Ok(flat);
    }
    match read_blocks(path)?.as_slice() {
        [single] => Ok(single.clone()),
        _ => Err(malformed(path, "expected one array of indices")),
    }
}

/// Row-major CSV; values use the shortest representation that parses back to
/// the same `f64`.
pub fn write_dense(path: &Path, m: &DMatrix<f64>) -> Result<(), FileError> {
    let io_err = |source| FileError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = String::with_capacity(m.len() * 20);
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&m[(i, j)].to_string());
        }
        out.push('\n');
    }
    let mut f = fs::File::create(path).map_err(io_err)?;
    f.write_all(out.as_bytes()).map_err(io_err)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), FileError> {
    fs::write(path, text).map_err(|source| FileError::Io {
        path: path.to_path_buf(),
        source,
    })
}
