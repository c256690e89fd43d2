//! Metrics CSV: one header line, then one row per record.
//!
//! | column | meaning |
//! |---|---|
//! | `step` | learner steps completed |
//! | `wall_ms` | milliseconds since the run started; 0 in deterministic mode |
//! | `loss_td`, `loss_tc`, `loss_im`, `loss_total` | losses of the step's batch |
//! | `max_abs_q` | largest `|Q|` over batch predictions since the previous row |
//! | `eval_return_mean` | mean greedy return, empty when no evaluation ran at this step |
//! | `snapshot_k` | target-network refresh count |
//!
//! Floats use Rust's shortest round-trip formatting, so parsing a field gives
//! back the exact value that was written.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const METRICS_HEADER: &str = "step,wall_ms,loss_td,loss_tc,loss_im,loss_total,max_abs_q,eval_return_mean,snapshot_k";

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub wall_ms: u64,
    pub loss_td: f64,
    pub loss_tc: f64,
    pub loss_im: f64,
    pub loss_total: f64,
    pub max_abs_q: f64,
    pub eval_return_mean: Option<f64>,
    pub snapshot_k: u64,
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        let eval = self.eval_return_mean.map(|v| format!("{v:?}")).unwrap_or_default();
        format!(
            "{},{},{:?},{:?},{:?},{:?},{:?},{},{}",
            self.step,
            self.wall_ms,
            self.loss_td,
            self.loss_tc,
            self.loss_im,
            self.loss_total,
            self.max_abs_q,
            eval,
            self.snapshot_k
        )
    }

    pub fn parse(line: &str, n: usize) -> Result<Self> {
        let err = |m: String| Error::Parse { line: n, message: m };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(err(format!("expected 9 columns, found {}", f.len())));
        }
        let float = |i: usize| f[i].parse::<f64>().map_err(|e| err(format!("column {}: {e}", i + 1)));
        let int = |i: usize| f[i].parse::<u64>().map_err(|e| err(format!("column {}: {e}", i + 1)));
        Ok(Self {
            step: int(0)?,
            wall_ms: int(1)?,
            loss_td: float(2)?,
            loss_tc: float(3)?,
            loss_im: float(4)?,
            loss_total: float(5)?,
            max_abs_q: float(6)?,
            eval_return_mean: if f[7].is_empty() { None } else { Some(float(7)?) },
            snapshot_k: int(8)?,
        })
    }
}

pub struct MetricsWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        };
        w.line(METRICS_HEADER)?;
        Ok(w)
    }

    fn line(&mut self, s: &str) -> Result<()> {
        writeln!(self.out, "{s}").map_err(|e| Error::io(&self.path, e))
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        self.line(&row.to_csv())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::Parse {
            line: 1,
            message: "missing metrics header".into(),
        });
    }
    lines.enumerate().map(|(i, l)| MetricsRow::parse(l, i + 2)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_round_trip_exactly() {
        let row = MetricsRow {
            step: 3,
            wall_ms: 17,
            loss_td: 0.1 + 0.2,
            loss_tc: 1e-300,
            loss_im: 0.0,
            loss_total: std::f64::consts::PI,
            max_abs_q: 0.42421356237309503,
            eval_return_mean: Some(2.0 / 3.0),
            snapshot_k: 1,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let mut w = MetricsWriter::create(&path).unwrap();
        w.write(&row).unwrap();
        w.write(&MetricsRow {
            eval_return_mean: None,
            ..row.clone()
        })
        .unwrap();
        w.flush().unwrap();
        let back = read_metrics(&path).unwrap();
        assert_eq!(back[0], row);
        assert_eq!(back[1].eval_return_mean, None);
    }
}
