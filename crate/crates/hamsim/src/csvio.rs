//! CSV readers and writers.
//!
//! All output is comma-separated with a header row, `.` decimal separator,
//! 17 significant digits and LF line endings; files are written atomically
//! (temp file + rename). The matrix reader accepts untrusted input: entries
//! are `i,j,value` or `i,j,k,value`, indices are capped, values must be
//! finite.

use std::io::Write;
use std::path::Path;

use nalgebra::DVector;

use crate::diagnostics::DriftSeries;
use crate::error::{Error, Result};

/// Largest accepted matrix index (keeps hostile inputs from requesting huge
/// allocations downstream).
pub const MAX_MATRIX_INDEX: usize = 4095;

/// 17 significant digits.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `content` to `path` through a temp file in the same directory.
pub fn atomic_write(path: &Path, content: &str) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp{}",
        path.extension()
            .map(|e| e.to_string_lossy().into_owned())
            .unwrap_or_default(),
        std::process::id()
    ));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(content.as_bytes())?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Trajectory as `t,x_1..x_n` rows.
pub fn trajectory_csv(tau: f64, states: &[DVector<f64>]) -> String {
    let n = states.first().map(|s| s.len()).unwrap_or(0);
    let mut out = String::from("t");
    for i in 1..=n {
        out.push_str(&format!(",x_{i}"));
    }
    out.push('\n');
    for (step, x) in states.iter().enumerate() {
        out.push_str(&fmt_float(step as f64 * tau));
        for v in x.iter() {
            out.push(',');
            out.push_str(&fmt_float(*v));
        }
        out.push('\n');
    }
    out
}

pub fn write_trajectory_csv(path: &Path, tau: f64, states: &[DVector<f64>]) -> Result<()> {
    atomic_write(path, &trajectory_csv(tau, states))
}

/// Drift series as `t,H,rel_drift` rows.
pub fn drift_csv(series: &DriftSeries) -> String {
    let mut out = String::from("t,H,rel_drift\n");
    for i in 0..series.times.len() {
        out.push_str(&format!(
            "{},{},{}\n",
            fmt_float(series.times[i]),
            fmt_float(series.energy[i]),
            fmt_float(series.relative_drift[i])
        ));
    }
    out
}

pub fn write_drift_csv(path: &Path, series: &DriftSeries) -> Result<()> {
    atomic_write(path, &drift_csv(series))
}

/// Coordinate triplets as `i,j,value` rows.
pub fn triplets_csv(triplets: &[(usize, usize, f64)]) -> String {
    let mut out = String::from("i,j,value\n");
    for &(i, j, v) in triplets {
        out.push_str(&format!("{i},{j},{}\n", fmt_float(v)));
    }
    out
}

pub fn write_triplets_csv(path: &Path, triplets: &[(usize, usize, f64)]) -> Result<()> {
    atomic_write(path, &triplets_csv(triplets))
}

/// One parsed matrix entry: 2 or 3 indices plus a value.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixRecord {
    pub indices: Vec<usize>,
    pub value: f64,
}

/// Parses `i,j[,k],value` lines. Blank lines and `#` comments are skipped; a
/// single header line is tolerated. Errors carry the 1-based line number.
pub fn read_matrix_csv(text: &str) -> Result<Vec<MatrixRecord>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(|f| f.trim()).collect();
        if !(fields.len() == 3 || fields.len() == 4) {
            return Err(Error::Config {
                line: lineno + 1,
                field: "matrix-csv".into(),
                message: format!("expected 3 or 4 fields, got {}", fields.len()),
            });
        }
        let index_count = fields.len() - 1;
        let mut indices = Vec::with_capacity(index_count);
        let mut header_like = false;
        for f in &fields[..index_count] {
            match f.parse::<usize>() {
                Ok(v) if v <= MAX_MATRIX_INDEX => indices.push(v),
                Ok(v) => {
                    return Err(Error::Config {
                        line: lineno + 1,
                        field: "matrix-csv".into(),
                        message: format!("index {v} exceeds the cap {MAX_MATRIX_INDEX}"),
                    })
                }
                Err(_) => {
                    header_like = true;
                    break;
                }
            }
        }
        if header_like {
            if out.is_empty() && lineno == 0 {
                continue; // header row
            }
            return Err(Error::Config {
                line: lineno + 1,
                field: "matrix-csv".into(),
                message: "non-numeric index".into(),
            });
        }
        let value = fields[index_count].parse::<f64>().map_err(|_| Error::Config {
            line: lineno + 1,
            field: "matrix-csv".into(),
            message: format!("cannot parse value `{}`", fields[index_count]),
        })?;
        if !value.is_finite() {
            return Err(Error::Config {
                line: lineno + 1,
                field: "matrix-csv".into(),
                message: "non-finite value".into(),
            });
        }
        out.push(MatrixRecord { indices, value });
    }
    if out.is_empty() {
        return Err(Error::Config {
            line: 0,
            field: "matrix-csv".into(),
            message: "no entries".into(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_has_17_digits() {
        assert_eq!(fmt_float(0.5), "5.0000000000000000e-1");
        assert_eq!(fmt_float(1.0 / 3.0), "3.3333333333333331e-1");
    }

    #[test]
    fn trajectory_roundtrip_shape() {
        let states = vec![
            DVector::from_row_slice(&[1.0, 2.0]),
            DVector::from_row_slice(&[3.0, 4.0]),
        ];
        let csv = trajectory_csv(0.5, &states);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "t,x_1,x_2");
        assert!(lines[2].starts_with("5.0000000000000000e-1,"));
        assert!(!csv.contains('\r'));
    }

    #[test]
    fn matrix_csv_parses_entries() {
        let recs = read_matrix_csv("i,j,value\n0,1,2.5\n1,0,-2.5\n").unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].indices, vec![0, 1]);
        assert_eq!(recs[0].value, 2.5);
        let cubic = read_matrix_csv("0,0,1,0.3\n").unwrap();
        assert_eq!(cubic[0].indices.len(), 3);
    }

    #[test]
    fn matrix_csv_rejects_bad_input() {
        assert!(matches!(read_matrix_csv(""), Err(Error::Config { .. })));
        assert!(matches!(
            read_matrix_csv("0,1\n"),
            Err(Error::Config { .. })
        ));
        assert!(matches!(
            read_matrix_csv("0,99999999,1.0\n"),
            Err(Error::Config { line: 1, .. })
        ));
        assert!(matches!(
            read_matrix_csv("0,1,inf\n"),
            Err(Error::Config { .. })
        ));
        assert!(matches!(
            read_matrix_csv("0,1,nan\n"),
            Err(Error::Config { .. })
        ));
        // header only
        assert!(matches!(
            read_matrix_csv("i,j,value\n"),
            Err(Error::Config { .. })
        ));
        // non-numeric index past the first line
        assert!(matches!(
            read_matrix_csv("0,1,2.0\na,b,c\n"),
            Err(Error::Config { line: 2, .. })
        ));
    }

    #[test]
    fn atomic_write_creates_file() {
        let dir = std::env::temp_dir().join(format!("hamsim-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("out.csv");
        atomic_write(&path, "a,b\n1,2\n").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "a,b\n1,2\n");
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
