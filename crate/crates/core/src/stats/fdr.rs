use super::StatsError;

#[derive(Debug, Clone, PartialEq)]
pub struct BhOutcome {
    /// In input order.
    pub rejected: Vec<bool>,
    /// BH-adjusted q-values in input order, capped at 1.
    pub q_values: Vec<f64>,
}

/// Benjamini-Hochberg step-up procedure.
pub fn benjamini_hochberg(p_values: &[f64], alpha: f64) -> Result<BhOutcome, StatsError> {
    if p_values.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(StatsError::InvalidInput(format!("alpha {alpha} not in (0,1)")));
    }
    if let Some(bad) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(StatsError::InvalidInput(format!("p-value {bad} not in [0,1]")));
    }

    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| p_values[i].total_cmp(&p_values[j]).then(i.cmp(&j)));

    let mf = m as f64;
    let cutoff_rank = order
        .iter()
        .enumerate()
        .filter(|(rank, &i)| p_values[i] <= (*rank as f64 + 1.0) * alpha / mf)
        .map(|(rank, _)| rank + 1)
        .next_back()
        .unwrap_or(0);

    let mut q_values = vec![0.0; m];
    let mut running = 1.0f64;
    for (rank, &i) in order.iter().enumerate().rev() {
        let q = mf * p_values[i] / (rank as f64 + 1.0);
        running = running.min(q);
        q_values[i] = running.min(1.0);
    }

    let mut rejected = vec![false; m];
    for &i in order.iter().take(cutoff_rank) {
        rejected[i] = true;
    }

    Ok(BhOutcome { rejected, q_values })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_below_their_thresholds() {
        let out = benjamini_hochberg(&[0.005, 0.01, 0.03, 0.04], 0.05).unwrap();
        assert_eq!(out.rejected, vec![true; 4]);
    }

    #[test]
    fn single_hypothesis_not_rejected() {
        let out = benjamini_hochberg(&[0.2], 0.05).unwrap();
        assert_eq!(out.rejected, vec![false]);
        assert!((out.q_values[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn step_up_from_largest() {
        let out = benjamini_hochberg(&[0.04; 4], 0.05).unwrap();
        assert_eq!(out.rejected, vec![true; 4]);
        for q in out.q_values {
            assert!((q - 0.04).abs() < 1e-15);
        }
    }

    #[test]
    fn output_follows_input_order() {
        let out = benjamini_hochberg(&[0.9, 0.001, 0.5], 0.05).unwrap();
        assert_eq!(out.rejected, vec![false, true, false]);
        assert!((out.q_values[1] - 0.003).abs() < 1e-15);
        assert!((out.q_values[2] - 0.75).abs() < 1e-15);
        assert!((out.q_values[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(benjamini_hochberg(&[], 0.05), Err(StatsError::EmptyInput));
        assert!(benjamini_hochberg(&[1.2], 0.05).is_err());
        assert!(benjamini_hochberg(&[0.1], 1.0).is_err());
        assert!(benjamini_hochberg(&[f64::NAN], 0.05).is_err());
    }
}
