use serde::{Deserialize, Serialize};

use super::{StatMethod, StatResult, StatsError};

/// Largest per-sample size for which [`MwuMethod::Auto`] uses the exact
/// null distribution.
pub const EXACT_MAX_SAMPLE: usize = 7;

/// Largest combined sample size the exact distribution supports.
const EXACT_MAX_TOTAL: usize = 80;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MwuMethod {
    /// Exact when there are no ties and both samples have at most
    /// [`EXACT_MAX_SAMPLE`] values, normal approximation otherwise.
    #[default]
    Auto,
    Exact,
    NormalApprox,
}

/// One-sided Mann-Whitney U test of `xs > ys` with automatic method choice.
///
/// `U` counts pairs with `x > y` plus half the tied pairs. The p-value is
/// `P(U* >= U)` under random relabelling.
pub fn mann_whitney_u_greater(xs: &[f64], ys: &[f64]) -> Result<StatResult, StatsError> {
    mann_whitney_u_greater_with(xs, ys, MwuMethod::Auto)
}

/// As [`mann_whitney_u_greater`] with an explicit method. The normal
/// approximation is tie-corrected and uses a continuity correction.
pub fn mann_whitney_u_greater_with(
    xs: &[f64],
    ys: &[f64],
    method: MwuMethod,
) -> Result<StatResult, StatsError> {
    if xs.is_empty() || ys.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    if xs.iter().chain(ys).any(|v| v.is_nan()) {
        return Err(StatsError::InvalidInput("NaN in sample".into()));
    }

    let mut greater = 0usize;
    let mut ties = 0usize;
    for x in xs {
        for y in ys {
            if x > y {
                greater += 1;
            } else if x == y {
                ties += 1;
            }
        }
    }
    let u = greater as f64 + 0.5 * ties as f64;

    let has_ties = {
        let mut all: Vec<f64> = xs.iter().chain(ys).copied().collect();
        all.sort_by(f64::total_cmp);
        all.windows(2).any(|w| w[0] == w[1])
    };

    let exact = match method {
        MwuMethod::Auto => {
            !has_ties && xs.len() <= EXACT_MAX_SAMPLE && ys.len() <= EXACT_MAX_SAMPLE
        }
        MwuMethod::Exact => {
            if has_ties {
                return Err(StatsError::InvalidInput(
                    "exact Mann-Whitney requires untied values".into(),
                ));
            }
            if xs.len() + ys.len() > EXACT_MAX_TOTAL {
                return Err(StatsError::InvalidInput(format!(
                    "exact Mann-Whitney limited to {EXACT_MAX_TOTAL} values"
                )));
            }
            true
        }
        MwuMethod::NormalApprox => false,
    };

    if exact {
        let dist = u_distribution(xs.len(), ys.len());
        let total: u128 = dist.iter().sum();
        let tail: u128 = dist[greater..].iter().sum();
        return Ok(StatResult {
            statistic: u,
            p_value: tail as f64 / total as f64,
            method: StatMethod::Exact,
            degenerate: false,
        });
    }

    Ok(StatResult {
        statistic: u,
        p_value: normal_upper_tail(u, xs, ys),
        method: StatMethod::NormalApprox,
        degenerate: false,
    })
}

/// Number of orderings of `m` x-values and `n` y-values (no ties) giving
/// each value of U, indexed by U.
fn u_distribution(m: usize, n: usize) -> Vec<u128> {
    // counts[i][j] is the distribution for i x-values and j y-values.
    // Placing the largest element last: if it is an x it beats all j
    // y-values, otherwise it adds nothing.
    let mut counts: Vec<Vec<Vec<u128>>> = vec![vec![Vec::new(); n + 1]; m + 1];
    for i in 0..=m {
        for j in 0..=n {
            let mut d = vec![0u128; i * j + 1];
            if i == 0 || j == 0 {
                d[0] = 1;
            } else {
                for (u, c) in counts[i - 1][j].iter().enumerate() {
                    d[u + j] += c;
                }
                for (u, c) in counts[i][j - 1].iter().enumerate() {
                    d[u] += c;
                }
            }
            counts[i][j] = d;
        }
    }
    std::mem::take(&mut counts[m][n])
}

fn normal_upper_tail(u: f64, xs: &[f64], ys: &[f64]) -> f64 {
    let nx = xs.len() as f64;
    let ny = ys.len() as f64;
    let n = nx + ny;

    let mut all: Vec<f64> = xs.iter().chain(ys).copied().collect();
    all.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i + 1;
        while j < all.len() && all[j] == all[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }

    let mean = nx * ny / 2.0;
    let var = if n > 1.0 {
        nx * ny / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)))
    } else {
        0.0
    };
    if var <= 0.0 {
        return 1.0;
    }
    let z = (u - mean - 0.5) / var.sqrt();
    (0.5 * libm::erfc(z / std::f64::consts::SQRT_2)).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    const GROUP_I: [f64; 9] = [0.857, 0.830, 0.780, 0.763, 0.749, 0.741, 0.710, 0.706, 0.640];
    const GROUP_D: [f64; 9] = [0.761, 0.728, 0.698, 0.690, 0.684, 0.673, 0.658, 0.588, 0.584];

    #[test]
    fn nine_by_nine_groups() {
        let r = mann_whitney_u_greater(&GROUP_I, &GROUP_D).unwrap();
        assert_eq!(r.statistic, 68.0);
        assert_eq!(r.method, StatMethod::NormalApprox);
        assert!((r.p_value - 0.009).abs() <= 0.001, "p = {}", r.p_value);
    }

    #[test]
    fn nine_by_nine_groups_forced_exact() {
        let r = mann_whitney_u_greater_with(&GROUP_I, &GROUP_D, MwuMethod::Exact).unwrap();
        assert_eq!(r.statistic, 68.0);
        // 345 of the C(18, 9) = 48620 labelings reach U >= 68
        assert!((r.p_value - 345.0 / 48_620.0).abs() < 1e-15, "p = {}", r.p_value);
    }

    #[test]
    fn forced_exact_rejects_ties() {
        assert!(mann_whitney_u_greater_with(&[1.0, 2.0], &[2.0], MwuMethod::Exact).is_err());
    }

    #[test]
    fn two_by_two_enumerated() {
        let r = mann_whitney_u_greater(&[3.0, 4.0], &[1.0, 2.0]).unwrap();
        assert_eq!(r.statistic, 4.0);
        assert!((r.p_value - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn minimal_statistic_has_p_one() {
        let r = mann_whitney_u_greater(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_value - 1.0).abs() < 1e-15);
    }

    #[test]
    fn distribution_sums_to_binomial() {
        let d = u_distribution(9, 9);
        assert_eq!(d.iter().sum::<u128>(), 48_620);
        assert_eq!(d.len(), 82);
        // symmetric about mn/2
        for u in 0..d.len() {
            assert_eq!(d[u], d[d.len() - 1 - u]);
        }
    }

    #[test]
    fn ties_use_normal_approximation() {
        let xs = [0.7, 0.6, 0.5];
        let r = mann_whitney_u_greater(&xs, &xs).unwrap();
        assert_eq!(r.method, StatMethod::NormalApprox);
        assert_eq!(r.statistic, 4.5);
        assert!(r.p_value >= 0.5);
    }

    #[test]
    fn all_tied_gives_one() {
        let r = mann_whitney_u_greater(&[1.0, 1.0], &[1.0]).unwrap();
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn empty_rejected() {
        assert_eq!(mann_whitney_u_greater(&[], &[1.0]), Err(StatsError::EmptyInput));
    }
}
