use serde::{Deserialize, Serialize};

use super::{StatMethod, StatResult, StatsError};

/// Relative slack used when comparing point probabilities against the
/// observed table's probability.
pub const FISHER_RELATIVE_SLACK: f64 = 1e-7;

/// A 2x2 table of counts. Row 1 is condition A (pass, fail), row 2 is
/// condition B (pass, fail).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ContingencyTable2x2 {
    pub a: u64,
    pub b: u64,
    pub c: u64,
    pub d: u64,
}

impl ContingencyTable2x2 {
    pub fn new(a: u64, b: u64, c: u64, d: u64) -> Self {
        Self { a, b, c, d }
    }

    pub fn total(&self) -> u64 {
        self.a + self.b + self.c + self.d
    }

    fn is_degenerate(&self) -> bool {
        let row1 = self.a + self.b;
        let row2 = self.c + self.d;
        let col1 = self.a + self.c;
        let col2 = self.b + self.d;
        row1 == 0 || row2 == 0 || col1 == 0 || col2 == 0
    }
}

/// Two-sided Fisher exact test using the point-probability rule: the
/// p-value sums the hypergeometric probabilities of every table with the
/// observed margins that is no more probable than the observed one.
pub fn fisher_exact_two_sided(t: ContingencyTable2x2) -> Result<StatResult, StatsError> {
    if t.total() == 0 {
        return Err(StatsError::EmptyTable);
    }
    if t.is_degenerate() {
        return Ok(StatResult {
            statistic: 1.0,
            p_value: 1.0,
            method: StatMethod::Exact,
            degenerate: true,
        });
    }

    let row1 = t.a + t.b;
    let row2 = t.c + t.d;
    let col1 = t.a + t.c;
    let n = row1 + row2;
    let lo = col1.saturating_sub(row2);
    let hi = row1.min(col1);

    // log-weights relative to the mode; the distribution is unimodal so
    // every weight is <= 1 and the normaliser is >= 1.
    let width = (hi - lo + 1) as usize;
    let mode = (((row1 + 1) * (col1 + 1)) / (n + 2)).clamp(lo, hi);
    let mut logw = vec![0.0f64; width];
    let ratio_up = |x: u64| -> f64 {
        // P(x + 1) / P(x)
        let num = (row1 - x) as f64 * (col1 - x) as f64;
        let den = (x + 1) as f64 * (row2 + x + 1 - col1) as f64;
        (num / den).ln()
    };
    for x in mode..hi {
        let i = (x - lo) as usize;
        logw[i + 1] = logw[i] + ratio_up(x);
    }
    for x in (lo..mode).rev() {
        let i = (x - lo) as usize;
        logw[i] = logw[i + 1] - ratio_up(x);
    }

    let observed = logw[(t.a - lo) as usize];
    let cutoff = observed + FISHER_RELATIVE_SLACK.ln_1p();
    let mut total = 0.0;
    let mut tail = 0.0;
    for &lw in &logw {
        let w = lw.exp();
        total += w;
        if lw <= cutoff {
            tail += w;
        }
    }

    Ok(StatResult {
        statistic: observed.exp() / total,
        p_value: (tail / total).clamp(0.0, 1.0),
        method: StatMethod::Exact,
        degenerate: false,
    })
}
