//! Transfer-matrix CSV: header row of target labels plus "Average", one
//! row per source, cells with three decimal places.
//!
//! Cells are written as exact milli-units (round half away from zero) and
//! the Average field is the rounded mean of the rounded target cells, so a
//! reader recomputing the Average from the file reproduces it exactly.

use crate::error::{Error, Result};
use crate::transfer::TransferMatrix;
use std::path::Path;

fn to_milli(v: f64) -> i64 {
    let scaled = v * 1000.0;
    // round half away from zero
    if scaled >= 0.0 {
        (scaled + 0.5).floor() as i64
    } else {
        (scaled - 0.5).ceil() as i64
    }
}

fn fmt_milli(m: i64) -> String {
    format!("{}.{:03}", m / 1000, (m % 1000).abs())
}

fn parse_cell(s: &str, line: usize) -> Result<i64> {
    let bad = || Error::Format {
        offset: line as u64,
        detail: format!("cell {s:?} on line {line} is not a 3-decimal value"),
    };
    let (int, frac) = s.split_once('.').ok_or_else(bad)?;
    if frac.len() != 3 {
        return Err(bad());
    }
    let int: i64 = int.parse().map_err(|_| bad())?;
    let frac: i64 = frac.parse().map_err(|_| bad())?;
    Ok(int * 1000 + if int < 0 { -frac } else { frac })
}

pub fn to_csv(m: &TransferMatrix) -> String {
    let mut out = String::from("source");
    for label in &m.col_labels {
        out.push(',');
        out.push_str(label);
    }
    out.push('\n');
    let n = m.n_targets();
    for (row_label, row) in m.row_labels.iter().zip(m.cells.iter()) {
        out.push_str(row_label);
        let millis: Vec<i64> = row[..n].iter().map(|&v| to_milli(v)).collect();
        for &cell in &millis {
            out.push(',');
            out.push_str(&fmt_milli(cell));
        }
        // Average of the cells as written, re-rounded to milli.
        let avg = to_milli(millis.iter().sum::<i64>() as f64 / (n as f64 * 1000.0));
        out.push(',');
        out.push_str(&fmt_milli(avg));
        out.push('\n');
    }
    out
}

/// Parse a matrix CSV, verifying the Average column against the cells.
pub fn from_csv(text: &str) -> Result<TransferMatrix> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or(Error::Format { offset: 0, detail: "empty matrix file".into() })?;
    let mut cols: Vec<String> = header.split(',').map(str::to_string).collect();
    if cols.len() < 3 {
        return Err(Error::Format {
            offset: 0,
            detail: "header needs source, at least one target, and Average".into(),
        });
    }
    let corner = cols.remove(0);
    if corner != "source" {
        return Err(Error::Format {
            offset: 0,
            detail: format!("corner cell {corner:?}, expected \"source\""),
        });
    }
    if cols.last().map(String::as_str) != Some("Average") {
        return Err(Error::Format {
            offset: 0,
            detail: "last header column must be Average".into(),
        });
    }
    let n_targets = cols.len() - 1;
    let mut row_labels = Vec::new();
    let mut cells = Vec::new();
    for (lineno, line) in lines {
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let label = fields
            .next()
            .ok_or(Error::Format { offset: lineno as u64, detail: "missing row label".into() })?;
        let values: Vec<&str> = fields.collect();
        if values.len() != n_targets + 1 {
            return Err(Error::Format {
                offset: lineno as u64,
                detail: format!("row {label} has {} cells, expected {}", values.len(), n_targets + 1),
            });
        }
        let millis: Vec<i64> = values
            .iter()
            .map(|v| parse_cell(v, lineno))
            .collect::<Result<_>>()?;
        let expect_avg = to_milli(millis[..n_targets].iter().sum::<i64>() as f64 / (n_targets as f64 * 1000.0));
        if millis[n_targets] != expect_avg {
            return Err(Error::Format {
                offset: lineno as u64,
                detail: format!(
                    "row {label}: Average {} does not recompute from cells (expected {})",
                    fmt_milli(millis[n_targets]),
                    fmt_milli(expect_avg)
                ),
            });
        }
        row_labels.push(label.to_string());
        cells.push(millis.iter().map(|&c| c as f64 / 1000.0).collect());
    }
    if cells.is_empty() {
        return Err(Error::Format { offset: 1, detail: "matrix has no rows".into() });
    }
    // Rebuild exact averages in f64 so the in-memory invariant holds.
    let mut matrix = TransferMatrix {
        row_labels,
        col_labels: cols,
        cells,
        repeats: 0,
        seed: 0,
    };
    for row in &mut matrix.cells {
        let n = row.len() - 1;
        row[n] = row[..n].iter().sum::<f64>() / n as f64;
    }
    Ok(matrix)
}

pub fn save(m: &TransferMatrix, path: &Path) -> Result<()> {
    super::atomic_write(path, to_csv(m).as_bytes())
}

pub fn load(path: &Path) -> Result<TransferMatrix> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    from_csv(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TransferMatrix {
        TransferMatrix {
            row_labels: vec!["FP".into(), "1".into()],
            col_labels: vec!["FP".into(), "1".into(), "Average".into()],
            cells: vec![
                vec![0.1234, 0.8766, 0.5],
                vec![0.2, 0.4, 0.30000000000000004],
            ],
            repeats: 3,
            seed: 9,
        }
    }

    #[test]
    fn csv_has_three_decimals_and_recomputable_average() {
        let csv = to_csv(&sample());
        let expect = "source,FP,1,Average\nFP,0.123,0.877,0.500\n1,0.200,0.400,0.300\n";
        assert_eq!(csv, expect);
        let parsed = from_csv(&csv).unwrap();
        assert_eq!(parsed.row_labels, vec!["FP", "1"]);
        assert_eq!(parsed.cells[0][0], 0.123);
        parsed.validate().unwrap();
    }

    #[test]
    fn average_mismatch_is_rejected() {
        let bad = "source,FP,1,Average\nFP,0.100,0.300,0.250\n";
        assert!(matches!(from_csv(bad), Err(Error::Format { .. })));
    }

    #[test]
    fn odd_average_rounding_recomputes_exactly() {
        // 3 targets averaging to a non-terminating decimal: writer and
        // reader must agree on the rounded value.
        let m = TransferMatrix {
            row_labels: vec!["FP".into()],
            col_labels: vec!["a".into(), "b".into(), "c".into(), "Average".into()],
            cells: vec![vec![0.001, 0.0, 0.0, 0.001 / 3.0]],
            repeats: 1,
            seed: 0,
        };
        let csv = to_csv(&m);
        from_csv(&csv).unwrap();
    }

    #[test]
    fn header_and_shape_errors() {
        assert!(from_csv("").is_err());
        assert!(from_csv("source,FP\nFP,0.1\n").is_err(), "no Average column");
        assert!(from_csv("corner,FP,Average\nFP,0.100,0.100\n").is_err());
        assert!(
            from_csv("source,FP,Average\nFP,0.100\n").is_err(),
            "row width mismatch"
        );
        assert!(from_csv("source,FP,Average\nFP,0.1,0.1\n").is_err(), "2-decimal cell");
    }

    #[test]
    fn round_trip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        save(&sample(), &path).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(loaded.row_labels, sample().row_labels);
    }
}
