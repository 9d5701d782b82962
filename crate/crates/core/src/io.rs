//! Plain-text matrix files and `#`-prefixed metadata headers.
//!
//! Matrices are written one row per line, comma separated, using the
//! shortest representation that parses back to the identical `f64`.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma};
use thiserror::Error;

use crate::Matrix;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("cannot read {path}: {reason}")]
    Read { path: PathBuf, reason: String },
    #[error("cannot write {path}: {reason}")]
    Write { path: PathBuf, reason: String },
    #[error("{path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
}

pub(crate) fn read_err(path: &Path, e: impl ToString) -> IoError {
    IoError::Read { path: path.to_path_buf(), reason: e.to_string() }
}

pub(crate) fn write_err(path: &Path, e: impl ToString) -> IoError {
    IoError::Write { path: path.to_path_buf(), reason: e.to_string() }
}

/// Round-trip exact text form of a float.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Metadata header lines, emitted as `# key: value`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Header(pub Vec<(String, String)>);

impl Header {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.0.push((key.into(), value.to_string()));
        self
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.0.push((key.into(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        self.0.iter().map(|(k, v)| format!("# {k}: {v}\n")).collect()
    }

    /// Collect leading `# key: value` lines of a text file.
    pub fn parse(text: &str) -> Self {
        let mut header = Header::new();
        for line in text.lines() {
            let Some(rest) = line.strip_prefix('#') else { break };
            if let Some((k, v)) = rest.trim().split_once(':') {
                header.push(k.trim(), v.trim());
            }
        }
        header
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| write_err(parent, e))?;
    }
    let mut file = fs::File::create(path).map_err(|e| write_err(path, e))?;
    file.write_all(text.as_bytes()).map_err(|e| write_err(path, e))
}

pub fn matrix_to_csv(m: &Matrix) -> String {
    let mut out = String::with_capacity(m.len() * 20);
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&fmt_f64(m[(i, j)]));
        }
        out.push('\n');
    }
    out
}

pub fn write_matrix_csv(path: &Path, m: &Matrix, header: &Header) -> Result<(), IoError> {
    let mut text = header.render();
    text.push_str(&matrix_to_csv(m));
    write_text(path, &text)
}

/// Read a comma-separated matrix, skipping `#` lines and blank lines.
pub fn read_matrix_csv(path: &Path) -> Result<Matrix, IoError> {
    let file = fs::File::open(path).map_err(|e| read_err(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| read_err(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(',')
            .map(|tok| {
                tok.trim().parse::<f64>().map_err(|e| IoError::Malformed {
                    path: path.to_path_buf(),
                    reason: format!("line {}: {tok:?}: {e}", lineno + 1),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(IoError::Malformed {
                    path: path.to_path_buf(),
                    reason: format!("line {} has {} columns, expected {}", lineno + 1, row.len(), first.len()),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(IoError::Malformed { path: path.to_path_buf(), reason: "no data rows".into() });
    }
    let ncols = rows[0].len();
    Ok(Matrix::from_row_iterator(rows.len(), ncols, rows.into_iter().flatten()))
}

/// 16-bit grayscale preview, linearly stretched over the matrix min–max.
pub fn write_png16_preview(path: &Path, m: &Matrix) -> Result<(), IoError> {
    let (lo, hi) = m.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(m.ncols() as u32, m.nrows() as u32, |x, y| {
        let v = (m[(y as usize, x as usize)] - lo) / span;
        Luma([(v.clamp(0.0, 1.0) * 65535.0).round() as u16])
    });
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| write_err(parent, e))?;
    }
    img.save(path).map_err(|e| write_err(path, e))
}
