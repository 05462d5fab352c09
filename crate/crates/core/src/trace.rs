//! Per-step session trace and its CSV and plot-data exports.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: u64,
    pub time_min: f64,
    /// True plant CVs.
    pub cv: Vec<f64>,
    /// CVs as fed to the controller.
    pub measured: Vec<f64>,
    pub mv: Vec<f64>,
    /// Per MV, whether the machine supplied it this step.
    pub machine: Vec<bool>,
    pub alarm: bool,
    pub shutdown: bool,
}

/// Checks the rows run `1, 2, ..` without gaps.
pub fn check_contiguous(rows: &[TraceRow]) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::IncompleteTrace("trace is empty".into()));
    }
    for (n, r) in rows.iter().enumerate() {
        if r.t != n as u64 + 1 {
            return Err(Error::IncompleteTrace(format!("expected step {}, found {}", n + 1, r.t)));
        }
    }
    Ok(())
}

pub fn write_csv<W: Write>(rows: &[TraceRow], cv_tags: &[String], mv_tags: &[String], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string(), "sim_minutes".to_string()];
    header.extend(mv_tags.iter().cloned());
    header.extend(cv_tags.iter().cloned());
    header.extend(cv_tags.iter().map(|t| format!("measured_{t}")));
    header.extend(["alarm", "shutdown", "machine_mvs"].map(String::from));
    w.write_record(&header).map_err(csv_err)?;
    for r in rows {
        let mut rec = vec![r.t.to_string(), r.time_min.to_string()];
        rec.extend(r.mv.iter().map(f64::to_string));
        rec.extend(r.cv.iter().map(f64::to_string));
        rec.extend(r.measured.iter().map(f64::to_string));
        rec.push(u8::from(r.alarm).to_string());
        rec.push(u8::from(r.shutdown).to_string());
        rec.push(r.machine.iter().map(|&m| if m { 'M' } else { 'O' }).collect());
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Io(e.to_string()))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// Column-oriented series for trend charts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotData {
    pub schema_version: u32,
    pub cv_tags: Vec<String>,
    pub mv_tags: Vec<String>,
    pub cv_min: Vec<f64>,
    pub cv_max: Vec<f64>,
    pub step: Vec<u64>,
    pub time_min: Vec<f64>,
    /// `[cv][step]`
    pub cv: Vec<Vec<f64>>,
    /// `[mv][step]`
    pub mv: Vec<Vec<f64>>,
}

impl PlotData {
    pub fn from_rows(rows: &[TraceRow], cv_tags: &[String], mv_tags: &[String], cv_min: &[f64], cv_max: &[f64]) -> Self {
        Self {
            schema_version: 1,
            cv_tags: cv_tags.to_vec(),
            mv_tags: mv_tags.to_vec(),
            cv_min: cv_min.to_vec(),
            cv_max: cv_max.to_vec(),
            step: rows.iter().map(|r| r.t).collect(),
            time_min: rows.iter().map(|r| r.time_min).collect(),
            cv: (0..cv_tags.len()).map(|k| rows.iter().map(|r| r.cv[k]).collect()).collect(),
            mv: (0..mv_tags.len()).map(|i| rows.iter().map(|r| r.mv[i]).collect()).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(t: u64) -> TraceRow {
        TraceRow {
            t,
            time_min: t as f64 * 0.5,
            cv: vec![1.0, 2.5],
            measured: vec![1.0, 2.0],
            mv: vec![3.0],
            machine: vec![true],
            alarm: t > 1,
            shutdown: false,
        }
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        let tags = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        write_csv(&[row(1), row(2)], &tags(&["A", "B"]), &tags(&["U"]), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,sim_minutes,U,A,B,measured_A,measured_B,alarm,shutdown,machine_mvs");
        assert_eq!(lines[2], "2,1,3,1,2.5,1,2,1,0,M");
    }

    #[test]
    fn gaps_are_incomplete() {
        assert!(check_contiguous(&[row(1), row(2)]).is_ok());
        assert!(check_contiguous(&[row(1), row(3)]).is_err());
        assert!(check_contiguous(&[]).is_err());
    }
}
