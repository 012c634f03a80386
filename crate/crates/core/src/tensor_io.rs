//! Dense matrix ingestion and emission.
//!
//! Two on-disk formats are supported: headerless (or single-header-line) CSV,
//! and a little-endian raw-binary layout:
//!
//! ```text
//! "BHTM" | dtype: u8 (0 = f64, 1 = f32) | N: u64 | D: u64 | N*D values, row-major
//! ```
//!
//! Raw-binary is lossless. Values are converted to the caller's precision on
//! load, so a file written in f64 can feed an f32 run and vice versa.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Result, TsneError};
use crate::real::{Precision, Real};

pub const MAGIC: &[u8; 4] = b"BHTM";
const HEADER_LEN: usize = 4 + 1 + 8 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    RawBinary,
}

impl Format {
    /// Guess the format of an existing file from its first bytes.
    pub fn sniff(path: &Path) -> Result<Format> {
        let bytes = fs::read(path).map_err(|source| TsneError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(if bytes.starts_with(MAGIC) {
            Format::RawBinary
        } else {
            Format::Csv
        })
    }

    /// Format implied by a file extension; anything but `.bin` is CSV.
    pub fn from_extension(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") => Format::RawBinary,
            _ => Format::Csv,
        }
    }
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Format::Csv),
            "bin" | "raw" | "raw-binary" => Ok(Format::RawBinary),
            other => Err(format!("unknown format `{other}` (expected csv or bin)")),
        }
    }
}

/// N×D row-major dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct InputMatrix<T> {
    n_points: usize,
    n_dims: usize,
    data: Vec<T>,
}

impl<T: Real> InputMatrix<T> {
    pub fn new(n_points: usize, n_dims: usize, data: Vec<T>) -> Result<Self> {
        let m = InputMatrix { n_points, n_dims, data };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        if self.n_points < 2 {
            return Err(TsneError::Shape(format!(
                "need at least 2 points, got {}",
                self.n_points
            )));
        }
        if self.n_dims < 1 {
            return Err(TsneError::Shape("need at least 1 dimension".into()));
        }
        if self.data.len() != self.n_points * self.n_dims {
            return Err(TsneError::Shape(format!(
                "data length {} != {} x {}",
                self.data.len(),
                self.n_points,
                self.n_dims
            )));
        }
        if let Some(pos) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(TsneError::NonFinite {
                row: pos / self.n_dims,
                col: pos % self.n_dims,
            });
        }
        Ok(())
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn n_dims(&self) -> usize {
        self.n_dims
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn precision(&self) -> Precision {
        T::PRECISION
    }

    #[inline(always)]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.n_dims..(i + 1) * self.n_dims]
    }

    pub fn cast<U: Real>(&self) -> InputMatrix<U> {
        InputMatrix {
            n_points: self.n_points,
            n_dims: self.n_dims,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }
}

/// Optional per-point class ids, used only for coloring plots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector {
    pub labels: Vec<i64>,
}

impl LabelVector {
    pub fn check_len(&self, n: usize) -> Result<()> {
        if self.labels.len() != n {
            return Err(TsneError::Shape(format!(
                "label count {} does not match point count {n}",
                self.labels.len()
            )));
        }
        Ok(())
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TsneError + '_ {
    move |source| TsneError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn load_matrix<T: Real>(path: &Path, format: Format) -> Result<InputMatrix<T>> {
    match format {
        Format::Csv => load_csv(path, false),
        Format::RawBinary => load_raw(path),
    }
}

/// Read a numeric CSV. Row numbers in errors are 1-based file lines.
pub fn load_csv<T: Real>(path: &Path, has_header: bool) -> Result<InputMatrix<T>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, 0, e))?;

    let mut data = Vec::new();
    let mut n_dims = 0;
    let mut n_points = 0;
    for (line, record) in reader.records().enumerate() {
        let row = line + 1;
        let record = record.map_err(|e| csv_err(path, row, e))?;
        if has_header && row == 1 {
            continue;
        }
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if n_points == 0 {
            n_dims = record.len();
        } else if record.len() != n_dims {
            return Err(TsneError::Parse {
                path: path.to_path_buf(),
                row,
                message: format!("expected {n_dims} columns, found {}", record.len()),
            });
        }
        for (col, field) in record.iter().enumerate() {
            let v: T = field.parse().map_err(|_| TsneError::Parse {
                path: path.to_path_buf(),
                row,
                message: format!("column {}: cannot parse `{field}` as a number", col + 1),
            })?;
            if !v.is_finite() {
                return Err(TsneError::NonFinite { row: n_points, col });
            }
            data.push(v);
        }
        n_points += 1;
    }
    InputMatrix::new(n_points, n_dims, data)
}

fn csv_err(path: &Path, row: usize, e: csv::Error) -> TsneError {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => TsneError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => TsneError::Parse {
            path: path.to_path_buf(),
            row,
            message: format!("{other:?}"),
        },
    }
}

fn load_raw<T: Real>(path: &Path) -> Result<InputMatrix<T>> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let bad = |message: String| TsneError::Parse {
        path: path.to_path_buf(),
        row: 0,
        message,
    };
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(bad("missing BHTM header".into()));
    }
    let dtype = bytes[4];
    let n = u64::from_le_bytes(bytes[5..13].try_into().unwrap()) as usize;
    let d = u64::from_le_bytes(bytes[13..21].try_into().unwrap()) as usize;
    let width = match dtype {
        0 => 8,
        1 => 4,
        other => return Err(bad(format!("unknown dtype tag {other}"))),
    };
    let body = &bytes[HEADER_LEN..];
    let expected = n
        .checked_mul(d)
        .and_then(|c| c.checked_mul(width))
        .ok_or_else(|| bad("header dimensions overflow".into()))?;
    if body.len() != expected {
        return Err(bad(format!("body has {} bytes, header implies {expected}", body.len())));
    }
    let data: Vec<T> = match dtype {
        0 => body.chunks_exact(8).map(|c| T::lit(f64::read_le(c))).collect(),
        _ => body.chunks_exact(4).map(|c| T::lit(f32::read_le(c) as f64)).collect(),
    };
    InputMatrix::new(n, d, data)
}

pub fn save_matrix<T: Real>(m: &InputMatrix<T>, path: &Path, format: Format) -> Result<()> {
    m.validate()?;
    let bytes = match format {
        Format::RawBinary => {
            let mut out = Vec::with_capacity(HEADER_LEN + m.data.len() * T::WIDTH);
            out.extend_from_slice(MAGIC);
            out.push(match T::PRECISION {
                Precision::F64 => 0,
                Precision::F32 => 1,
            });
            out.extend_from_slice(&(m.n_points as u64).to_le_bytes());
            out.extend_from_slice(&(m.n_dims as u64).to_le_bytes());
            for &v in &m.data {
                v.write_le(&mut out);
            }
            out
        }
        Format::Csv => {
            // `Display` for floats prints the shortest string that parses back
            // to the same value.
            let mut out = Vec::with_capacity(m.data.len() * 12);
            for i in 0..m.n_points {
                for (j, v) in m.row(i).iter().enumerate() {
                    if j > 0 {
                        out.push(b',');
                    }
                    write!(out, "{v}").expect("write to Vec");
                }
                out.push(b'\n');
            }
            out
        }
    };
    fs::write(path, bytes).map_err(io_err(path))
}

/// One integer label per line (first CSV column).
pub fn load_labels(path: &Path) -> Result<LabelVector> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut labels = Vec::new();
    for (line, content) in text.lines().enumerate() {
        let field = content.split(',').next().unwrap_or("").trim();
        if field.is_empty() {
            continue;
        }
        let v = field
            .parse::<i64>()
            .or_else(|_| field.parse::<f64>().map(|f| f as i64))
            .map_err(|_| TsneError::Parse {
                path: path.to_path_buf(),
                row: line + 1,
                message: format!("cannot parse label `{field}`"),
            })?;
        labels.push(v);
    }
    Ok(LabelVector { labels })
}
