//! CSV emission with reproducible formatting: '.' decimal separator,
//! '\n' line endings, UTF-8, and fixed 9-significant-digit scientific
//! notation for floats so identical runs produce identical bytes.

use crate::error::NnError;
use std::io::Write;
use std::path::Path;

type Result<T> = std::result::Result<T, NnError>;

/// Formats a float with exactly nine significant digits.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.8e}")
}

/// Writes one CSV file: a header row followed by data rows, '\n' endings.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    let mut file =
        std::fs::File::create(path).map_err(NnError::io(format!("creating {}", path.display())))?;
    file.write_all(out.as_bytes())
        .map_err(NnError::io(format!("writing {}", path.display())))
}

/// Reads a CSV written by `write_csv` back into header + string rows.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = std::fs::read_to_string(path)
        .map_err(NnError::io(format!("reading {}", path.display())))?;
    let mut lines = text.lines();
    let header = match lines.next() {
        Some(h) => h.split(',').map(|s| s.to_string()).collect(),
        None => {
            return Err(NnError::TruncatedFile {
                path: path.display().to_string(),
            })
        }
    };
    let rows = lines
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').map(|s| s.to_string()).collect())
        .collect();
    Ok((header, rows))
}

/// Mean and (population) standard deviation of a slice; (0, 0) when empty.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
