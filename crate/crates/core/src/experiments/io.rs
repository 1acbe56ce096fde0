//! Trajectory CSV and summary JSON.
//!
//! CSV columns are `t, gap, grad_norm, d, invariant_drift`; the last two are
//! empty for standard runs. Values carry 17 significant digits so a
//! write/read cycle reproduces every `f64` exactly.

use std::fs;
use std::path::Path;

use serde::{de::DeserializeOwned, Serialize};

use crate::error::ExperimentError;
use crate::flow::Trajectory;

pub const CSV_HEADER: [&str; 5] = ["t", "gap", "grad_norm", "d", "invariant_drift"];

/// Column-wise contents of a trajectory CSV.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrajectoryTable {
    pub t: Vec<f64>,
    pub gap: Vec<f64>,
    pub grad_norm: Vec<f64>,
    pub d: Vec<Option<f64>>,
    pub invariant_drift: Vec<Option<f64>>,
}

impl TrajectoryTable {
    /// Every `stride`-th row of `traj`; the final row is always kept.
    pub fn from_trajectory(traj: &Trajectory, stride: usize) -> Self {
        let stride = stride.max(1);
        let n = traj.len();
        let mut out = TrajectoryTable::default();
        for i in (0..n).filter(|i| i % stride == 0 || *i + 1 == n) {
            out.t.push(traj.times[i]);
            out.gap.push(traj.gaps[i]);
            out.grad_norm.push(traj.grad_norms[i]);
            out.d.push(traj.d_values.as_ref().map(|v| v[i]));
            out.invariant_drift.push(traj.invariant_drift.as_ref().map(|v| v[i]));
        }
        out
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn trajectory_csv_bytes(table: &TrajectoryTable) -> Result<Vec<u8>, ExperimentError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let csv_err = |e: csv::Error| ExperimentError::Csv(e.to_string());
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for i in 0..table.len() {
        let opt = |v: Option<f64>| v.map(fmt).unwrap_or_default();
        w.write_record([
            fmt(table.t[i]),
            fmt(table.gap[i]),
            fmt(table.grad_norm[i]),
            opt(table.d[i]),
            opt(table.invariant_drift[i]),
        ])
        .map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| ExperimentError::Csv(e.to_string()))
}

pub fn write_trajectory_csv(table: &TrajectoryTable, path: &Path) -> Result<(), ExperimentError> {
    fs::write(path, trajectory_csv_bytes(table)?).map_err(io_err(path))
}

pub fn read_trajectory_csv(path: &Path) -> Result<TrajectoryTable, ExperimentError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    parse_trajectory_csv(&bytes)
}

pub fn parse_trajectory_csv(bytes: &[u8]) -> Result<TrajectoryTable, ExperimentError> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let header = r.headers().map_err(|e| ExperimentError::Csv(e.to_string()))?;
    if header.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(ExperimentError::Csv(format!(
            "unexpected header {:?}, expected {:?}",
            header.iter().collect::<Vec<_>>(),
            CSV_HEADER
        )));
    }
    let mut out = TrajectoryTable::default();
    for (idx, rec) in r.records().enumerate() {
        let line = idx + 2;
        let rec = rec.map_err(|e| ExperimentError::Csv(format!("line {line}: {e}")))?;
        let field = |j: usize| -> Result<Option<f64>, ExperimentError> {
            let s = rec.get(j).unwrap_or("").trim();
            if s.is_empty() {
                return Ok(None);
            }
            s.parse::<f64>().map(Some).map_err(|e| {
                ExperimentError::Csv(format!("line {line}, column {}: {e}", CSV_HEADER[j]))
            })
        };
        let required = |j: usize| -> Result<f64, ExperimentError> {
            field(j)?.ok_or_else(|| {
                ExperimentError::Csv(format!("line {line}: column {} is empty", CSV_HEADER[j]))
            })
        };
        out.t.push(required(0)?);
        out.gap.push(required(1)?);
        out.grad_norm.push(required(2)?);
        out.d.push(field(3)?);
        out.invariant_drift.push(field(4)?);
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), ExperimentError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, ExperimentError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_and_line_endings() {
        let table = TrajectoryTable {
            t: vec![0.0, 0.1],
            gap: vec![1.0, 0.5],
            grad_norm: vec![2.0, 1.0],
            d: vec![None, None],
            invariant_drift: vec![None, None],
        };
        let text = String::from_utf8(trajectory_csv_bytes(&table).unwrap()).unwrap();
        assert!(text.starts_with("t,gap,grad_norm,d,invariant_drift\n"));
        assert!(!text.contains('\r'));
        assert!(text.contains("1.0000000000000001e-1,5.0000000000000000e-1,"));
        assert_eq!(parse_trajectory_csv(text.as_bytes()).unwrap(), table);
    }

    #[test]
    fn bad_input_is_diagnosed() {
        let err = parse_trajectory_csv(b"t,gap\n0,1\n").unwrap_err().to_string();
        assert!(err.contains("header"));
        let err = parse_trajectory_csv(b"t,gap,grad_norm,d,invariant_drift\n0,x,1,,\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 2") && err.contains("gap"), "{err}");
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_exact(rows in prop::collection::vec(
            (any::<f64>(), any::<f64>(), any::<f64>(), prop::option::of(any::<f64>()), prop::option::of(any::<f64>())),
            0..40)) {
            let finite = |v: f64| if v.is_finite() { v } else { 0.0 };
            let table = TrajectoryTable {
                t: rows.iter().map(|r| finite(r.0)).collect(),
                gap: rows.iter().map(|r| finite(r.1)).collect(),
                grad_norm: rows.iter().map(|r| finite(r.2)).collect(),
                d: rows.iter().map(|r| r.3.map(finite)).collect(),
                invariant_drift: rows.iter().map(|r| r.4.map(finite)).collect(),
            };
            let back = parse_trajectory_csv(&trajectory_csv_bytes(&table).unwrap()).unwrap();
            prop_assert_eq!(back.t.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            table.t.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!(back, table);
        }
    }
}
