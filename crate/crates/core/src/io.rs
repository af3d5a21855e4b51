//! Reading and writing dense matrices as headerless CSV or MatrixMarket.
//!
//! Values are written with 17 significant digits, enough to recover every
//! `f64` exactly.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DataMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatrixFormat {
    Csv,
    MatrixMarket,
}

impl MatrixFormat {
    /// `.mtx` and `.mm` mean MatrixMarket; anything else CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("mtx") | Some("mm") => MatrixFormat::MatrixMarket,
            _ => MatrixFormat::Csv,
        }
    }
}

impl FromStr for MatrixFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(MatrixFormat::Csv),
            "matrix-market" | "mtx" | "mm" => Ok(MatrixFormat::MatrixMarket),
            other => Err(Error::InvalidArgument(format!("unknown matrix format '{other}'"))),
        }
    }
}

pub fn load_matrix(path: &Path, format: Option<MatrixFormat>) -> Result<DataMatrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    match format.unwrap_or_else(|| MatrixFormat::from_path(path)) {
        MatrixFormat::Csv => parse_csv(&text),
        MatrixFormat::MatrixMarket => parse_matrix_market(&text),
    }
}

pub fn save_matrix(path: &Path, m: &DMatrix<f64>, format: Option<MatrixFormat>) -> Result<()> {
    let text = match format.unwrap_or_else(|| MatrixFormat::from_path(path)) {
        MatrixFormat::Csv => to_csv(m)?,
        MatrixFormat::MatrixMarket => to_matrix_market(m),
    };
    fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn parse_value(tok: &str, line: usize) -> Result<f64> {
    let v: f64 = tok.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("not a number: '{}'", tok.trim()),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            message: format!("non-finite value '{}'", tok.trim()),
        });
    }
    Ok(v)
}

/// Headerless comma-separated rows. Blank lines are ignored.
pub fn parse_csv(text: &str) -> Result<DataMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        let row = rec.iter().map(|t| parse_value(t, line)).collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {} fields, found {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "no data rows".into(),
        });
    }
    DataMatrix::from_rows(&rows)
}

pub fn to_csv(m: &DMatrix<f64>) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for i in 0..m.nrows() {
        w.write_record(m.row(i).iter().map(|v| format_f64(*v)))
            .map_err(|e| Error::Io(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
}

/// 17 significant digits in scientific notation.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Clone, Copy, PartialEq)]
enum Layout {
    Array,
    Coordinate,
}

#[derive(Clone, Copy, PartialEq)]
enum Symmetry {
    General,
    Symmetric,
}

/// Real or integer MatrixMarket, `array` or `coordinate`, `general` or
/// `symmetric` (symmetric storage is expanded).
pub fn parse_matrix_market(text: &str) -> Result<DataMatrix> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (hline, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "empty file".into(),
    })?;
    let words: Vec<String> = header.split_whitespace().map(str::to_lowercase).collect();
    let bad = |message: String| Error::Parse { line: hline, message };
    if words.len() != 5 || words[0] != "%%matrixmarket" || words[1] != "matrix" {
        return Err(bad("expected '%%MatrixMarket matrix <layout> <field> <symmetry>'".into()));
    }
    let layout = match words[2].as_str() {
        "array" => Layout::Array,
        "coordinate" => Layout::Coordinate,
        other => return Err(bad(format!("unsupported layout '{other}'"))),
    };
    if !matches!(words[3].as_str(), "real" | "double" | "integer") {
        return Err(bad(format!("unsupported field '{}'", words[3])));
    }
    let symmetry = match words[4].as_str() {
        "general" => Symmetry::General,
        "symmetric" => Symmetry::Symmetric,
        other => return Err(bad(format!("unsupported symmetry '{other}'"))),
    };

    let mut body = lines.filter(|(_, l)| {
        let t = l.trim();
        !t.is_empty() && !t.starts_with('%')
    });
    let (sline, size) = body.next().ok_or(Error::Parse {
        line: hline,
        message: "missing size line".into(),
    })?;
    let dims = size
        .split_whitespace()
        .map(|t| {
            t.parse::<usize>().map_err(|_| Error::Parse {
                line: sline,
                message: format!("bad dimension '{t}'"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let expected = if layout == Layout::Array { 2 } else { 3 };
    if dims.len() != expected {
        return Err(Error::Parse {
            line: sline,
            message: format!("size line needs {expected} integers"),
        });
    }
    let (n, d) = (dims[0], dims[1]);
    if symmetry == Symmetry::Symmetric && n != d {
        return Err(Error::Parse {
            line: sline,
            message: "symmetric matrix must be square".into(),
        });
    }
    let mut m = DMatrix::zeros(n, d);
    let mut last_line = sline;

    match layout {
        Layout::Array => {
            // column-major; symmetric stores the lower triangle only
            let slots: Vec<(usize, usize)> = (0..d)
                .flat_map(|j| {
                    let start = if symmetry == Symmetry::Symmetric { j } else { 0 };
                    (start..n).map(move |i| (i, j))
                })
                .collect();
            let mut next = 0;
            for (line, l) in body {
                last_line = line;
                for tok in l.split_whitespace() {
                    let &(i, j) = slots.get(next).ok_or(Error::Parse {
                        line,
                        message: format!("more than {} values", slots.len()),
                    })?;
                    let v = parse_value(tok, line)?;
                    m[(i, j)] = v;
                    if symmetry == Symmetry::Symmetric {
                        m[(j, i)] = v;
                    }
                    next += 1;
                }
            }
            if next != slots.len() {
                return Err(Error::Parse {
                    line: last_line,
                    message: format!("expected {} values, found {next}", slots.len()),
                });
            }
        }
        Layout::Coordinate => {
            let nnz = dims[2];
            let mut count = 0;
            for (line, l) in body {
                last_line = line;
                let toks: Vec<&str> = l.split_whitespace().collect();
                if toks.len() != 3 {
                    return Err(Error::Parse {
                        line,
                        message: "coordinate entry needs 'row col value'".into(),
                    });
                }
                let index = |t: &str, bound: usize| -> Result<usize> {
                    match t.parse::<usize>() {
                        Ok(v) if v >= 1 && v <= bound => Ok(v - 1),
                        _ => Err(Error::Parse {
                            line,
                            message: format!("index '{t}' outside 1..={bound}"),
                        }),
                    }
                };
                let (i, j) = (index(toks[0], n)?, index(toks[1], d)?);
                let v = parse_value(toks[2], line)?;
                m[(i, j)] = v;
                if symmetry == Symmetry::Symmetric {
                    m[(j, i)] = v;
                }
                count += 1;
            }
            if count != nnz {
                return Err(Error::Parse {
                    line: last_line,
                    message: format!("header declares {nnz} entries, found {count}"),
                });
            }
        }
    }
    DataMatrix::new(m)
}

/// Dense `array real general` MatrixMarket.
pub fn to_matrix_market(m: &DMatrix<f64>) -> String {
    let mut out = String::from("%%MatrixMarket matrix array real general\n");
    out.push_str(&format!("{} {}\n", m.nrows(), m.ncols()));
    for v in m.iter() {
        out.push_str(&format_f64(*v));
        out.push('\n');
    }
    out
}
