//! Paired comparison of repeated runs and the summary table.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::stats::{wilcoxon_signed_rank, Alternative, WilcoxonResult};

use super::metrics::RunRecord;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricSummary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl MetricSummary {
    fn of(values: &[f64]) -> Self {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        MetricSummary { mean, min, max }
    }
}

/// Per-configuration means over repeated runs, one row of the summary table.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub label: String,
    pub runs: usize,
    pub best_validation_error: MetricSummary,
    pub best_epoch: MetricSummary,
    pub time_to_best_ms: MetricSummary,
    pub test_error: Option<MetricSummary>,
    pub first_epoch_error: MetricSummary,
}

impl SummaryRow {
    pub fn from_records(records: &[RunRecord]) -> Result<Self> {
        let first = records
            .first()
            .ok_or_else(|| Error::invalid("no runs to summarize"))?;
        let collect = |f: &dyn Fn(&RunRecord) -> f64| records.iter().map(f).collect::<Vec<_>>();
        let tests: Option<Vec<f64>> = records.iter().map(|r| r.test_error_at_best).collect();
        Ok(SummaryRow {
            label: first.label.clone(),
            runs: records.len(),
            best_validation_error: MetricSummary::of(&collect(&|r| r.best_validation_error)),
            best_epoch: MetricSummary::of(&collect(&|r| r.best_epoch as f64)),
            time_to_best_ms: MetricSummary::of(&collect(&|r| r.time_to_best_ms)),
            test_error: tests.map(|t| MetricSummary::of(&t)),
            first_epoch_error: MetricSummary::of(&collect(&|r| r.first_epoch_validation_error)),
        })
    }
}

/// Plain-text table: Method, Min Val Err, Epochs, Time, Test Err, 1st Epoch
/// (means over runs).
pub fn summary_table(rows: &[SummaryRow]) -> String {
    let mut s = String::new();
    writeln!(
        s,
        "{:<14} {:>5} {:>12} {:>8} {:>12} {:>10} {:>10}",
        "Method", "Runs", "Min Val Err", "Epochs", "Time", "Test Err", "1st Epoch"
    )
    .unwrap();
    for r in rows {
        let test = r
            .test_error
            .map_or_else(|| "-".to_string(), |t| format!("{:.2}%", t.mean * 100.0));
        writeln!(
            s,
            "{:<14} {:>5} {:>11.2}% {:>8.1} {:>10.1}s {:>10} {:>9.2}%",
            r.label,
            r.runs,
            r.best_validation_error.mean * 100.0,
            r.best_epoch.mean,
            r.time_to_best_ms.mean / 1e3,
            test,
            r.first_epoch_error.mean * 100.0
        )
        .unwrap();
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunComparison {
    pub a: SummaryRow,
    pub b: SummaryRow,
    /// Test on paired test errors `a - b`.
    pub wilcoxon: WilcoxonResult,
    pub confidence: f64,
    pub alternative: Alternative,
    pub significant: bool,
}

impl RunComparison {
    pub fn report(&self) -> String {
        let mut s = summary_table(&[self.a.clone(), self.b.clone()]);
        let w = &self.wilcoxon;
        writeln!(
            s,
            "\nWilcoxon signed-rank on paired test errors ({} pairs, {} zero differences dropped, {})",
            w.n + w.zeros_dropped,
            w.zeros_dropped,
            if w.exact { "exact" } else { "normal approximation" }
        )
        .unwrap();
        writeln!(s, "W+ = {}  W- = {}", w.w_plus, w.w_minus).unwrap();
        writeln!(
            s,
            "p ({}) = {:.6}  significant at {}% confidence: {}",
            self.alternative,
            w.p_value(self.alternative),
            self.confidence * 100.0,
            if self.significant { "yes" } else { "no" }
        )
        .unwrap();
        if let Some(floor) = w.min_attainable_p(self.alternative) {
            if floor > 1.0 - self.confidence {
                writeln!(
                    s,
                    "note: with {} non-zero pairs the smallest attainable p is {floor:.6}, \
                     so {}% confidence cannot be reached",
                    w.n,
                    self.confidence * 100.0
                )
                .unwrap();
            }
        }
        s
    }
}

/// Summaries of both run sets and a Wilcoxon test on their paired test
/// errors (pairs formed in the given order).
pub fn compare_runs(
    a: &[RunRecord],
    b: &[RunRecord],
    confidence: f64,
    alternative: Alternative,
) -> Result<RunComparison> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "cannot pair {} runs with {} runs",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::invalid("need at least two paired runs"));
    }
    if !(0.0..1.0).contains(&confidence) {
        return Err(Error::invalid(format!(
            "confidence {confidence} outside [0, 1)"
        )));
    }
    let test = |rs: &[RunRecord]| -> Result<Vec<f64>> {
        rs.iter()
            .map(|r| {
                r.test_error_at_best
                    .ok_or_else(|| Error::invalid(format!("run seed {} has no test error", r.seed)))
            })
            .collect()
    };
    let wilcoxon = wilcoxon_signed_rank(&test(a)?, &test(b)?)?;
    let significant = wilcoxon.significant(confidence, alternative);
    Ok(RunComparison {
        a: SummaryRow::from_records(a)?,
        b: SummaryRow::from_records(b)?,
        wilcoxon,
        confidence,
        alternative,
        significant,
    })
}
