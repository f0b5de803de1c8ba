use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::search::CellResult;
use super::{ProbeError, ProbeTarget};
use crate::stats::{
    mann_whitney_u_greater, mann_whitney_u_greater_with, percentile_bootstrap_ci, MwuMethod, StatResult,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Group {
    #[serde(rename = "I")]
    InputHandling,
    #[serde(rename = "D")]
    SecureDefaults,
}

/// CWE label to group, as read from `{"CWE-79": "I", ...}`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Grouping(pub BTreeMap<String, Group>);

impl Grouping {
    pub fn from_json(text: &str) -> Result<Self, ProbeError> {
        serde_json::from_str(text).map_err(|e| ProbeError::InvalidParameter(format!("grouping file: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, ProbeError> {
        let text = std::fs::read_to_string(path).map_err(|source| ProbeError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn group_of(&self, cwe: &str) -> Option<Group> {
        self.0.get(cwe).copied()
    }
}

/// Mean held-out AUC per CWE over the cells of `target`.
pub fn per_cwe_means(cells: &[CellResult], target: ProbeTarget) -> BTreeMap<String, f64> {
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for c in cells.iter().filter(|c| c.key.target == target) {
        let e = acc.entry(c.key.cwe.clone()).or_default();
        e.0 += c.test_auc;
        e.1 += 1;
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupStat {
    pub group: Group,
    pub cwes: Vec<String>,
    pub values: Vec<f64>,
    pub mean: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub half_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupReport {
    pub input_handling: GroupStat,
    pub secure_defaults: GroupStat,
    /// CWEs with a mean AUC but no group; excluded from the statistics.
    pub ungrouped: Vec<String>,
    /// One-sided `I > D`, automatic method.
    pub mann_whitney: StatResult,
    /// Exact null distribution, when the values are untied.
    pub mann_whitney_exact: Option<StatResult>,
}

fn stat(group: Group, items: Vec<(String, f64)>, n_resamples: usize, level: f64, seed: u64) -> Result<GroupStat, ProbeError> {
    let values: Vec<f64> = items.iter().map(|i| i.1).collect();
    let ci = percentile_bootstrap_ci(&values, n_resamples, level, seed)?;
    Ok(GroupStat {
        group,
        mean: values.iter().sum::<f64>() / values.len() as f64,
        cwes: items.into_iter().map(|i| i.0).collect(),
        values,
        ci_lo: ci.lo,
        ci_hi: ci.hi,
        half_width: ci.half_width,
    })
}

/// Group means with percentile bootstrap half-widths over the per-CWE
/// values and a one-sided Mann-Whitney test of Group I over Group D. The
/// Group D bootstrap uses `seed + 1`.
pub fn group_report(
    per_cwe: &BTreeMap<String, f64>,
    grouping: &Grouping,
    n_resamples: usize,
    level: f64,
    seed: u64,
) -> Result<GroupReport, ProbeError> {
    let mut i = Vec::new();
    let mut d = Vec::new();
    let mut ungrouped = Vec::new();
    for (cwe, &v) in per_cwe {
        match grouping.group_of(cwe) {
            Some(Group::InputHandling) => i.push((cwe.clone(), v)),
            Some(Group::SecureDefaults) => d.push((cwe.clone(), v)),
            None => ungrouped.push(cwe.clone()),
        }
    }
    if !ungrouped.is_empty() {
        tracing::warn!(?ungrouped, "CWEs missing from the grouping file are excluded");
    }
    let xs: Vec<f64> = i.iter().map(|p| p.1).collect();
    let ys: Vec<f64> = d.iter().map(|p| p.1).collect();
    let mann_whitney = mann_whitney_u_greater(&xs, &ys)?;
    let mann_whitney_exact = mann_whitney_u_greater_with(&xs, &ys, MwuMethod::Exact).ok();
    Ok(GroupReport {
        input_handling: stat(Group::InputHandling, i, n_resamples, level, seed)?,
        secure_defaults: stat(Group::SecureDefaults, d, n_resamples, level, seed.wrapping_add(1))?,
        ungrouped,
        mann_whitney,
        mann_whitney_exact,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const I: [f64; 9] = [0.857, 0.830, 0.780, 0.763, 0.749, 0.741, 0.710, 0.706, 0.640];
    const D: [f64; 9] = [0.761, 0.728, 0.698, 0.690, 0.684, 0.673, 0.658, 0.588, 0.584];

    fn table(i: &[f64], d: &[f64]) -> (BTreeMap<String, f64>, Grouping) {
        let mut m = BTreeMap::new();
        let mut g = Grouping::default();
        for (k, v) in i.iter().enumerate() {
            m.insert(format!("I{k}"), *v);
            g.0.insert(format!("I{k}"), Group::InputHandling);
        }
        for (k, v) in d.iter().enumerate() {
            m.insert(format!("D{k}"), *v);
            g.0.insert(format!("D{k}"), Group::SecureDefaults);
        }
        (m, g)
    }

    #[test]
    fn published_group_values() {
        let (m, g) = table(&I, &D);
        let r = group_report(&m, &g, 1000, 0.95, 1).unwrap();
        assert_eq!(r.mann_whitney.statistic, 68.0);
        assert!((0.008..=0.010).contains(&r.mann_whitney.p_value));
        assert!((r.input_handling.mean - 0.7529).abs() < 5e-4);
        assert!((r.secure_defaults.mean - 0.6738).abs() < 5e-4);
        assert!((r.input_handling.half_width - 0.038).abs() <= 0.01);
        assert!((r.secure_defaults.half_width - 0.037).abs() <= 0.01);
        assert_eq!(r.mann_whitney_exact.unwrap().p_value, 345.0 / 48620.0);
    }

    #[test]
    fn identical_groups_are_null() {
        let (m, g) = table(&I, &I);
        let r = group_report(&m, &g, 200, 0.95, 3).unwrap();
        assert_eq!(r.input_handling.mean, r.secure_defaults.mean);
        assert!(r.mann_whitney.p_value >= 0.5);
    }

    #[test]
    fn unknown_cwes_are_listed_and_excluded() {
        let (mut m, g) = table(&I, &D);
        m.insert("CWE-999".into(), 0.99);
        let r = group_report(&m, &g, 100, 0.95, 0).unwrap();
        assert_eq!(r.ungrouped, vec!["CWE-999".to_string()]);
        assert_eq!(r.input_handling.values.len(), 9);
    }

    #[test]
    fn grouping_json() {
        let g = Grouping::from_json(r#"{"CWE-79": "I", "CWE-327": "D"}"#).unwrap();
        assert_eq!(g.group_of("CWE-79"), Some(Group::InputHandling));
        assert_eq!(g.group_of("CWE-327"), Some(Group::SecureDefaults));
        assert!(Grouping::from_json(r#"{"CWE-79": "X"}"#).is_err());
    }
}
