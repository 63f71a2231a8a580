//! Wilcoxon signed-rank test for paired samples.
//!
//! Zero differences are dropped before ranking; tied absolute differences
//! share the average of their ranks. For up to [`EXACT_LIMIT`] nonzero pairs
//! the null distribution is exact: every one of the `2^n` sign assignments of
//! the observed ranks is counted (via a subset-sum table over doubled ranks,
//! which are integers even with ties). Above that a normal approximation with
//! tie correction and continuity correction is used.

use std::fmt;
use std::str::FromStr;

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

pub const EXACT_LIMIT: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Alternative {
    #[default]
    TwoSided,
    /// First sample tends to be larger.
    Greater,
    /// First sample tends to be smaller.
    Less,
}

impl FromStr for Alternative {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "two-sided" => Ok(Alternative::TwoSided),
            "greater" => Ok(Alternative::Greater),
            "less" => Ok(Alternative::Less),
            other => Err(Error::invalid(format!("unknown alternative `{other}`"))),
        }
    }
}

impl fmt::Display for Alternative {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Alternative::TwoSided => "two-sided",
            Alternative::Greater => "greater",
            Alternative::Less => "less",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WilcoxonResult {
    /// Pairs left after dropping zero differences.
    pub n: usize,
    pub zeros_dropped: usize,
    /// Sum of ranks of positive differences (the reported statistic).
    pub w_plus: f64,
    pub w_minus: f64,
    /// `P(W+ >= observed)` under the null.
    pub p_greater: f64,
    /// `P(W+ <= observed)` under the null.
    pub p_less: f64,
    pub p_two_sided: f64,
    pub exact: bool,
}

impl WilcoxonResult {
    pub fn p_value(&self, alternative: Alternative) -> f64 {
        match alternative {
            Alternative::TwoSided => self.p_two_sided,
            Alternative::Greater => self.p_greater,
            Alternative::Less => self.p_less,
        }
    }

    /// Whether the null is rejected at `confidence` (e.g. 0.98): `p <= 1 - confidence`.
    pub fn significant(&self, confidence: f64, alternative: Alternative) -> bool {
        self.n > 0 && self.p_value(alternative) <= 1.0 - confidence
    }

    /// Smallest p-value the exact null distribution can produce for this `n`:
    /// all differences sharing one sign. `None` for the normal approximation.
    pub fn min_attainable_p(&self, alternative: Alternative) -> Option<f64> {
        if !self.exact {
            return None;
        }
        let one_sided = 0.5f64.powi(self.n as i32);
        Some(match alternative {
            Alternative::TwoSided => (2.0 * one_sided).min(1.0),
            _ => one_sided,
        })
    }
}

/// Average ranks of `values` (1-based), doubled so they stay integral.
pub fn doubled_ranks(values: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0u64; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && values[order[end + 1]] == values[order[start]] {
            end += 1;
        }
        // Positions start+1 ..= end+1 share rank (start + end + 2) / 2.
        let doubled = (start + end + 2) as u64;
        for &i in &order[start..=end] {
            ranks[i] = doubled;
        }
        start = end + 1;
    }
    ranks
}

/// Number of sign assignments reaching each doubled rank sum.
fn subset_sum_counts(doubled: &[u64]) -> Vec<u64> {
    let total: u64 = doubled.iter().sum();
    let mut counts = vec![0u64; total as usize + 1];
    counts[0] = 1;
    let mut reach = 0usize;
    for &r in doubled {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] != 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    counts
}

/// Paired test on `a - b`.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "paired samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::invalid("non-finite paired difference"));
    }
    let nonzero: Vec<f64> = diffs.iter().copied().filter(|&d| d != 0.0).collect();
    let n = nonzero.len();
    let zeros_dropped = diffs.len() - n;
    if n == 0 {
        return Ok(WilcoxonResult {
            n,
            zeros_dropped,
            w_plus: 0.0,
            w_minus: 0.0,
            p_greater: 1.0,
            p_less: 1.0,
            p_two_sided: 1.0,
            exact: true,
        });
    }
    let abs: Vec<f64> = nonzero.iter().map(|d| d.abs()).collect();
    let ranks = doubled_ranks(&abs);
    let plus2: u64 = ranks
        .iter()
        .zip(&nonzero)
        .filter(|(_, &d)| d > 0.0)
        .map(|(r, _)| r)
        .sum();
    let total2: u64 = ranks.iter().sum();
    let w_plus = plus2 as f64 / 2.0;
    let w_minus = (total2 - plus2) as f64 / 2.0;

    let (p_greater, p_less, exact) = if n <= EXACT_LIMIT {
        let counts = subset_sum_counts(&ranks);
        let all = (1u64 << n) as f64;
        let ge: u64 = counts[plus2 as usize..].iter().sum();
        let le: u64 = counts[..=plus2 as usize].iter().sum();
        (ge as f64 / all, le as f64 / all, true)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let mut tie_term = 0.0;
        let mut sorted = ranks.clone();
        sorted.sort_unstable();
        for group in sorted.chunk_by(|x, y| x == y) {
            let t = group.len() as f64;
            tie_term += t * t * t - t;
        }
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
        let normal = Normal::new(0.0, 1.0).expect("standard normal");
        let sd = var.sqrt();
        let upper = 1.0 - normal.cdf((w_plus - mean - 0.5) / sd);
        let lower = normal.cdf((w_plus - mean + 0.5) / sd);
        (upper, lower, false)
    };
    let p_two_sided = (2.0 * p_greater.min(p_less)).min(1.0);
    Ok(WilcoxonResult {
        n,
        zeros_dropped,
        w_plus,
        w_minus,
        p_greater,
        p_less,
        p_two_sided,
        exact,
    })
}
