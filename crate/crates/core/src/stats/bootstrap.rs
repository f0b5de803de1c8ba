use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::StatsError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapCi {
    pub lo: f64,
    pub hi: f64,
    pub half_width: f64,
}

/// The generator for one resample: ChaCha8 keyed by `seed`, stream
/// `resample_index`. Index draws are `random_range(0..n)` in order.
pub fn resample_rng(seed: u64, resample_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(resample_index);
    rng
}

/// Empirical quantile with linear interpolation between order statistics
/// (`h = (n - 1) q`). `sorted` must be ascending and non-empty.
pub fn quantile_linear(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile bootstrap CI of the mean.
pub fn percentile_bootstrap_ci(
    values: &[f64],
    n_resamples: usize,
    level: f64,
    seed: u64,
) -> Result<BootstrapCi, StatsError> {
    if values.is_empty() || n_resamples == 0 {
        return Err(StatsError::EmptyInput);
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(StatsError::InvalidInput(format!("level {level} not in (0,1)")));
    }
    let n = values.len();
    let mut means: Vec<f64> = (0..n_resamples as u64)
        .map(|r| {
            let mut rng = resample_rng(seed, r);
            let sum: f64 = (0..n).map(|_| values[rng.random_range(0..n)]).sum();
            sum / n as f64
        })
        .collect();
    means.sort_by(f64::total_cmp);

    let tail = (1.0 - level) / 2.0;
    let lo = quantile_linear(&means, tail);
    let hi = quantile_linear(&means, 1.0 - tail);
    Ok(BootstrapCi {
        lo,
        hi,
        half_width: (hi - lo) / 2.0,
    })
}
