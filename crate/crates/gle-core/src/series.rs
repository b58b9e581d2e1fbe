//! CSV layout shared by kernel and correlation exports: one row per time,
//! columns `t, v_11, v_12, …, v_mm` (row-major), preceded by `# key=value`
//! metadata comment lines.

use nalgebra::DMatrix;
use std::path::Path;

use crate::error::{GleError, Result};

pub fn write_matrix_series_csv(
    path: &Path,
    times: &[f64],
    values: &[DMatrix<f64>],
    meta: &[(String, String)],
) -> Result<()> {
    use std::io::Write;
    if times.len() != values.len() {
        return Err(GleError::DimensionMismatch(format!(
            "{} times vs {} matrices",
            times.len(),
            values.len()
        )));
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (k, v) in meta {
        writeln!(out, "# {k}={v}")?;
    }
    if let Some(first) = values.first() {
        let (r, c) = first.shape();
        let mut header = vec!["t".to_string()];
        for i in 0..r {
            for j in 0..c {
                header.push(format!("v_{}{}", i + 1, j + 1));
            }
        }
        writeln!(out, "{}", header.join(","))?;
        for (t, m) in times.iter().zip(values) {
            let mut row = vec![format!("{t:.17e}")];
            for i in 0..r {
                for j in 0..c {
                    row.push(format!("{:.17e}", m[(i, j)]));
                }
            }
            writeln!(out, "{}", row.join(","))?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_matrix_series_csv(path: &Path) -> Result<(Vec<f64>, Vec<DMatrix<f64>>)> {
    let text = std::fs::read_to_string(path)?;
    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut dim: Option<usize> = None;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with('t') {
            continue;
        }
        let fields: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|s| s.trim().parse::<f64>()).collect();
        let fields = fields.map_err(|e| GleError::Config(format!("bad series row: {e}")))?;
        if fields.len() < 2 {
            return Err(GleError::Config("series rows need t plus entries".into()));
        }
        let entries = fields.len() - 1;
        let m = match dim {
            Some(m) => m,
            None => {
                let m = (entries as f64).sqrt().round() as usize;
                if m * m != entries {
                    return Err(GleError::Config(format!(
                        "{entries} entries is not a square matrix"
                    )));
                }
                dim = Some(m);
                m
            }
        };
        times.push(fields[0]);
        values.push(DMatrix::from_row_slice(m, m, &fields[1..]));
    }
    Ok((times, values))
}
