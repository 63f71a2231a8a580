//! Per-epoch metrics, the CSV export and the per-run summary file.
//!
//! CSV columns: `epoch,train_loss,val_err,elapsed_ms` with 6, 4 and 3
//! decimal places for the real-valued columns. `val_err` is a fraction
//! (0.0303 means 3.03%); `elapsed_ms` is cumulative.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

use super::config::{num, KeyValues};

pub const CSV_HEADER: &str = "epoch,train_loss,val_err,elapsed_ms";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_err: f64,
    pub elapsed_ms: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub label: String,
    pub seed: u64,
    pub rows: Vec<EpochRow>,
    /// Earliest epoch with the minimum validation error.
    pub best_epoch: usize,
    pub best_validation_error: f64,
    /// Error of the best-epoch model on the test set, when one was given.
    pub test_error_at_best: Option<f64>,
    pub first_epoch_validation_error: f64,
    pub time_to_best_ms: f64,
}

impl RunRecord {
    /// Derives the model-selection fields from `rows`.
    pub fn from_rows(
        label: impl Into<String>,
        seed: u64,
        rows: Vec<EpochRow>,
        test_error_at_best: Option<f64>,
    ) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::invalid("a run record needs at least one epoch"))?;
        let mut best = *first;
        for r in &rows[1..] {
            if r.val_err < best.val_err {
                best = *r;
            }
        }
        Ok(RunRecord {
            label: label.into(),
            seed,
            first_epoch_validation_error: first.val_err,
            best_epoch: best.epoch,
            best_validation_error: best.val_err,
            time_to_best_ms: best.elapsed_ms,
            test_error_at_best,
            rows,
        })
    }

    pub fn total_ms(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.elapsed_ms)
    }
}

pub fn export_metrics(record: &RunRecord) -> String {
    let mut out = String::with_capacity(32 * (record.rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in &record.rows {
        writeln!(
            out,
            "{},{:.6},{:.4},{:.3}",
            r.epoch, r.train_loss, r.val_err, r.elapsed_ms
        )
        .unwrap();
    }
    out
}

pub fn parse_metrics(text: &str) -> Result<Vec<EpochRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == CSV_HEADER => {}
        _ => {
            return Err(Error::Config {
                line: 1,
                reason: format!("expected header `{CSV_HEADER}`"),
            })
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |what: &str| Error::Config {
            line: i + 1,
            reason: format!("{what} in `{line}`"),
        };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(bad("expected 4 fields"));
        }
        rows.push(EpochRow {
            epoch: fields[0].trim().parse().map_err(|_| bad("bad epoch"))?,
            train_loss: fields[1]
                .trim()
                .parse()
                .map_err(|_| bad("bad train_loss"))?,
            val_err: fields[2].trim().parse().map_err(|_| bad("bad val_err"))?,
            elapsed_ms: fields[3]
                .trim()
                .parse()
                .map_err(|_| bad("bad elapsed_ms"))?,
        });
    }
    Ok(rows)
}

fn record_text(record: &RunRecord) -> String {
    let mut s = String::new();
    writeln!(s, "label = {}", record.label).unwrap();
    writeln!(s, "seed = {}", record.seed).unwrap();
    writeln!(s, "epochs_run = {}", record.rows.len()).unwrap();
    writeln!(s, "best_epoch = {}", record.best_epoch).unwrap();
    writeln!(
        s,
        "best_validation_error = {:?}",
        record.best_validation_error
    )
    .unwrap();
    match record.test_error_at_best {
        Some(t) => writeln!(s, "test_error_at_best = {t:?}").unwrap(),
        None => writeln!(s, "test_error_at_best = none").unwrap(),
    }
    writeln!(
        s,
        "first_epoch_validation_error = {:?}",
        record.first_epoch_validation_error
    )
    .unwrap();
    writeln!(s, "time_to_best_ms = {:.3}", record.time_to_best_ms).unwrap();
    writeln!(s, "total_ms = {:.3}", record.total_ms()).unwrap();
    s
}

/// Writes `metrics.csv` and `record.txt` into `dir`.
pub fn write_record(dir: &Path, record: &RunRecord) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("metrics.csv"), export_metrics(record))?;
    std::fs::write(dir.join("record.txt"), record_text(record))?;
    Ok(())
}

/// Reads a run written by [`write_record`]. Epoch rows come from the CSV at
/// its printed precision; the summary fields come from `record.txt`.
pub fn read_record(dir: &Path) -> Result<RunRecord> {
    let rows = parse_metrics(&std::fs::read_to_string(dir.join("metrics.csv"))?)?;
    let mut kv = KeyValues::parse(&std::fs::read_to_string(dir.join("record.txt"))?)?;
    let label = kv.require("label", |s| Ok(s.to_string()))?;
    let seed = kv.require("seed", num::<u64>)?;
    let _ = kv.remove("epochs_run");
    let best_epoch = kv.require("best_epoch", num::<usize>)?;
    let best_validation_error = kv.require("best_validation_error", num::<f64>)?;
    let test_error_at_best = kv.require("test_error_at_best", |s| {
        if s == "none" {
            Ok(None)
        } else {
            num::<f64>(s).map(Some)
        }
    })?;
    let first_epoch_validation_error = kv.require("first_epoch_validation_error", num::<f64>)?;
    let time_to_best_ms = kv.require("time_to_best_ms", num::<f64>)?;
    let _ = kv.remove("total_ms");
    kv.finish()?;
    Ok(RunRecord {
        label,
        seed,
        rows,
        best_epoch,
        best_validation_error,
        test_error_at_best,
        first_epoch_validation_error,
        time_to_best_ms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(epoch: usize, val_err: f64, elapsed_ms: f64) -> EpochRow {
        EpochRow {
            epoch,
            train_loss: 0.5 / epoch as f64,
            val_err,
            elapsed_ms,
        }
    }

    #[test]
    fn single_epoch_csv_has_two_lines() {
        let r = RunRecord::from_rows("x", 1, vec![row(1, 0.0303, 12.5)], Some(0.04)).unwrap();
        let csv = export_metrics(&r);
        assert_eq!(csv.lines().count(), 2);
        assert_eq!(csv.lines().nth(1).unwrap(), "1,0.500000,0.0303,12.500");
    }

    #[test]
    fn best_epoch_is_earliest_minimum() {
        let rows = vec![
            row(1, 0.2, 1.0),
            row(2, 0.1, 2.0),
            row(3, 0.15, 3.0),
            row(4, 0.1, 4.0),
        ];
        let r = RunRecord::from_rows("x", 1, rows, None).unwrap();
        assert_eq!(r.best_epoch, 2);
        assert_eq!(r.best_validation_error, 0.1);
        assert_eq!(r.time_to_best_ms, 2.0);
        assert_eq!(r.first_epoch_validation_error, 0.2);
    }

    #[test]
    fn empty_record_rejected() {
        assert!(RunRecord::from_rows("x", 1, vec![], None).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![row(1, 0.125, 10.0), row(2, 0.0625, 20.25)];
        let r = RunRecord::from_rows("x", 3, rows, None).unwrap();
        let parsed = parse_metrics(&export_metrics(&r)).unwrap();
        assert_eq!(parsed, r.rows);
        assert!(parse_metrics("nope\n1,2,3,4").is_err());
        assert!(parse_metrics(&format!("{CSV_HEADER}\n1,2,3")).is_err());
    }

    #[test]
    fn record_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![row(1, 0.125, 10.0), row(2, 0.0625, 20.25)];
        let r = RunRecord::from_rows("mod-rprop", 3, rows, Some(0.07)).unwrap();
        write_record(dir.path(), &r).unwrap();
        assert_eq!(read_record(dir.path()).unwrap(), r);
    }
}
