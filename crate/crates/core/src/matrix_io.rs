//! Plain-text dense matrices: a `rows cols` header line, then one
//! whitespace-separated row per line.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{CpscError, Result};

pub fn format_matrix(m: &DMatrix<f64>) -> String {
    let mut out = format!("{} {}\n", m.nrows(), m.ncols());
    for row in m.row_iter() {
        let mut first = true;
        for v in row.iter() {
            if !first {
                out.push(' ');
            }
            first = false;
            // `{:e}` round-trips f64 exactly
            let _ = write!(out, "{v:e}");
        }
        out.push('\n');
    }
    out
}

pub fn parse_matrix(text: &str) -> Result<DMatrix<f64>> {
    let mut tokens = text.split_whitespace();
    let mut dim = |name| -> Result<usize> {
        tokens
            .next()
            .ok_or_else(|| CpscError::format("matrix", format!("missing {name}")))?
            .parse()
            .map_err(|_| CpscError::format("matrix", format!("bad {name}")))
    };
    let (rows, cols) = (dim("row count")?, dim("column count")?);
    let values = tokens
        .map(|t| t.parse::<f64>().map_err(|_| CpscError::format("matrix", format!("bad entry {t:?}"))))
        .collect::<Result<Vec<_>>>()?;
    if values.len() != rows * cols {
        return Err(CpscError::format(
            "matrix",
            format!("expected {} entries, found {}", rows * cols, values.len()),
        ));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

pub fn write_matrix(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    fs::write(path, format_matrix(m))?;
    Ok(())
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    parse_matrix(&fs::read_to_string(path)?)
}
