//! Report bundle: one CSV per table or figure with fixed row order and
//! float formatting, plus a manifest of SHA-256 hashes.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::analysis::{
    AffectedFraction, BaselineRate, EffectSize, FlipSummary, HeatCell, Metric, PositionProfile, SignificanceRow,
    StabilityReport,
};
use crate::corpus::{LanguageId, TokenStat};
use crate::probe::{CellResult, Grouping, LayerPoint, ModelSearch, ProbeConfig, ProbeTarget, RankedConfig};

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

/// Six decimals; NaN and infinities never reach here.
pub fn fmt_f(x: f64) -> String {
    format!("{x:.6}")
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f).unwrap_or_default()
}

fn fmt_p(x: f64) -> String {
    format!("{x:.6e}")
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), ReportError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|source| ReportError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    let csv_err = |source| ReportError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    w.flush().map_err(|source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ReportError> {
    let mut text = serde_json::to_string_pretty(value).expect("report values serialize");
    text.push('\n');
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|source| ReportError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, text).map_err(|source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn sha256_file(path: &Path) -> Result<String, ReportError> {
    let io = |source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = fs::File::open(path).map_err(io)?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(io)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex(&h.finalize()))
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn hex(b: &[u8]) -> String {
    b.iter().map(|x| format!("{x:02x}")).collect()
}

/// Hashes of every regular file under `root`, keyed by `/`-separated
/// relative path, skipping names for which `skip` returns true.
pub fn hash_tree(root: &Path, skip: &dyn Fn(&Path) -> bool) -> Result<BTreeMap<String, String>, ReportError> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let entries = fs::read_dir(&dir).map_err(|source| ReportError::Io {
            path: dir.clone(),
            source,
        })?;
        for e in entries.flatten() {
            let p = e.path();
            if skip(&p) {
                continue;
            }
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap_or(&p);
                let key = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
                out.insert(key, sha256_file(&p)?);
            }
        }
    }
    Ok(out)
}

pub fn tokens_per_prompt_csv(path: &Path, rows: &[(String, LanguageId, TokenStat)]) -> Result<(), ReportError> {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(m, l, s)| vec![m.clone(), l.to_string(), s.n_tasks.to_string(), fmt_f(s.raw_mean), s.display.to_string()])
        .collect();
    write_csv(path, &["model_id", "language", "n_tasks", "mean_tokens", "mean_tokens_display"], &body)
}

pub fn baseline_csv(path: &Path, rows: &[BaselineRate]) -> Result<(), ReportError> {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.model_id.clone(),
                r.language.to_string(),
                r.n_tasks.to_string(),
                r.n_func.to_string(),
                r.n_func_sec.to_string(),
                fmt_f(r.func_pct()),
                fmt_f(r.func_sec_pct()),
            ]
        })
        .collect();
    write_csv(path, &["model_id", "language", "n_tasks", "n_func", "n_func_sec", "func_pct", "func_sec_pct"], &body)
}

pub fn flip_table_csv(path: &Path, rows: &[FlipSummary]) -> Result<(), ReportError> {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|s| {
            vec![
                s.key.model_id.clone(),
                s.key.language.to_string(),
                s.key.cwe.clone(),
                s.metric.to_string(),
                s.n_mutations.to_string(),
                s.n_flips_total.to_string(),
                s.n_improvements.to_string(),
                s.n_deteriorations.to_string(),
                s.n_security_driven.to_string(),
                s.n_mutations_original_pass.to_string(),
                s.n_mutations_original_fail.to_string(),
            ]
        })
        .collect();
    write_csv(
        path,
        &[
            "model_id",
            "language",
            "unit",
            "metric",
            "n_mutations",
            "n_flips",
            "n_improvements",
            "n_deteriorations",
            "n_security_driven",
            "n_original_pass",
            "n_original_fail",
        ],
        &body,
    )
}

pub fn affected_fraction_csv(path: &Path, rows: &[AffectedFraction]) -> Result<(), ReportError> {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.model_id.clone(),
                r.language.to_string(),
                r.panel.as_str().to_string(),
                r.tau.to_string(),
                r.n_affected.to_string(),
                r.n_units.to_string(),
                fmt_f(r.fraction()),
            ]
        })
        .collect();
    write_csv(path, &["model_id", "language", "panel", "tau", "n_affected", "n_units", "fraction"], &body)
}

pub fn effect_sizes_csv(path: &Path, rows: &[EffectSize]) -> Result<(), ReportError> {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.model_id.clone(),
                r.language.to_string(),
                r.metric.to_string(),
                fmt_opt(r.improvement_mean),
                r.n_improvement_units.to_string(),
                fmt_opt(r.deterioration_mean),
                r.n_deterioration_units.to_string(),
            ]
        })
        .collect();
    write_csv(
        path,
        &[
            "model_id",
            "language",
            "metric",
            "improvement_mean",
            "n_improvement_units",
            "deterioration_mean",
            "n_deterioration_units",
        ],
        &body,
    )
}

pub fn position_csv(path: &Path, profiles: &[PositionProfile]) -> Result<(), ReportError> {
    let mut body = Vec::new();
    for p in profiles {
        for b in &p.bins {
            body.push(vec![
                p.model_id.clone(),
                p.metric.to_string(),
                p.axis.as_str().to_string(),
                p.cap.map(|c| c.to_string()).unwrap_or_default(),
                p.n_beyond_cap.to_string(),
                b.index.to_string(),
                b.n_original_pass.to_string(),
                b.n_hurt.to_string(),
                fmt_opt(b.frac_hurt()),
                b.n_original_fail.to_string(),
                b.n_help.to_string(),
                fmt_opt(b.frac_help()),
            ]);
        }
    }
    write_csv(
        path,
        &[
            "model_id",
            "metric",
            "axis",
            "cap",
            "n_beyond_cap",
            "bin",
            "n_original_pass",
            "n_hurt",
            "frac_hurt",
            "n_original_fail",
            "n_help",
            "frac_help",
        ],
        &body,
    )
}

/// `fraction` is empty where a position had no mutations.
pub fn heatmap_csv(path: &Path, maps: &[(Metric, Vec<HeatCell>)]) -> Result<(), ReportError> {
    let mut body = Vec::new();
    for (metric, cells) in maps {
        for c in cells {
            body.push(vec![
                c.model_id.clone(),
                c.language.to_string(),
                c.unit.clone(),
                metric.to_string(),
                c.position.to_string(),
                c.n_mutations.to_string(),
                c.n_flips.to_string(),
                fmt_opt(c.fraction()),
            ]);
        }
    }
    write_csv(
        path,
        &["model_id", "language", "unit", "metric", "position", "n_mutations", "n_flips", "fraction"],
        &body,
    )
}

pub fn significance_csv(path: &Path, rows: &[SignificanceRow]) -> Result<(), ReportError> {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.model_id.clone(),
                r.language.to_string(),
                r.task_id.clone(),
                r.cwe.clone(),
                r.prompt_ref.to_string(),
                r.metric.to_string(),
                r.mutant_pass.to_string(),
                r.mutant_n.to_string(),
                r.baseline_pass.to_string(),
                r.baseline_n.to_string(),
                fmt_p(r.p_value),
                fmt_p(r.q_value),
                r.significant.to_string(),
            ]
        })
        .collect();
    write_csv(
        path,
        &[
            "model_id",
            "language",
            "task_id",
            "cwe",
            "prompt_ref",
            "metric",
            "mutant_pass",
            "mutant_n",
            "baseline_pass",
            "baseline_n",
            "p_value",
            "q_value",
            "significant",
        ],
        &body,
    )
}

pub fn stability_csv(path: &Path, rows: &[(String, f64, StabilityReport)]) -> Result<(), ReportError> {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(m, t, s)| {
            vec![
                m.clone(),
                t.to_string(),
                s.original_cells.to_string(),
                s.original_anomalies.to_string(),
                s.prompt_cells.to_string(),
                s.prompt_anomalies.to_string(),
            ]
        })
        .collect();
    write_csv(
        path,
        &["model_id", "temperature", "original_cells", "original_anomalies", "prompt_cells", "prompt_anomalies"],
        &body,
    )
}

fn config_columns(config: &ProbeConfig) -> [String; 6] {
    let family = config.family().to_string();
    match *config {
        ProbeConfig::LogisticL2 { layer, c } => [family, layer.to_string(), c.to_string(), String::new(), String::new(), String::new()],
        ProbeConfig::Mlp2Layer {
            layer,
            hidden,
            dropout,
            weight_decay,
        } => [
            family,
            layer.to_string(),
            String::new(),
            format!("{}x{}", hidden.0, hidden.1),
            dropout.to_string(),
            weight_decay.to_string(),
        ],
    }
}

const CONFIG_HEADER: [&str; 6] = ["family", "layer", "c", "hidden", "dropout", "weight_decay"];

pub fn probe_cells_csv(path: &Path, cells: &[CellResult]) -> Result<(), ReportError> {
    let body: Vec<Vec<String>> = cells
        .iter()
        .map(|c| {
            let mut row = vec![
                c.key.model_id.clone(),
                c.key.language.to_string(),
                c.key.cwe.clone(),
                c.key.target.to_string(),
            ];
            row.extend(config_columns(&c.config));
            row.extend([
                c.n.to_string(),
                c.n_dev.to_string(),
                c.n_test.to_string(),
                fmt_f(c.flip_rate),
                fmt_opt(c.cv_auc),
                fmt_f(c.test_auc),
                c.nonconverged.to_string(),
            ]);
            row
        })
        .collect();
    let mut header = vec!["model_id", "language", "cwe", "target"];
    header.extend(CONFIG_HEADER);
    header.extend(["n", "n_dev", "n_test", "flip_rate", "cv_auc", "test_auc", "nonconverged"]);
    write_csv(path, &header, &body)
}

fn ranked_rows(model: &str, n_blocks: usize, ranked: &[RankedConfig]) -> Vec<Vec<String>> {
    ranked
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut row = vec![model.to_string(), (i + 1).to_string()];
            row.extend(config_columns(&r.config));
            row.extend([
                fmt_f(crate::probe::relative_depth(r.config.layer(), n_blocks)),
                fmt_opt(r.mean_cv_auc),
                r.n_cells.to_string(),
            ]);
            row
        })
        .collect()
}

/// Phase-1 and phase-2 rankings, one row per configuration.
pub fn probe_search_csv(path: &Path, models: &[ModelSearch], phase: u8) -> Result<(), ReportError> {
    let mut body = Vec::new();
    for m in models {
        let list = if phase == 1 { &m.phase1 } else { &m.phase2 };
        body.extend(ranked_rows(&m.model_id, m.n_blocks, list));
    }
    let mut header = vec!["model_id", "rank"];
    header.extend(CONFIG_HEADER);
    header.extend(["relative_depth", "mean_cv_auc", "n_cells"]);
    write_csv(path, &header, &body)
}

pub fn layer_profile_csv(path: &Path, models: &[ModelSearch]) -> Result<(), ReportError> {
    let mut body = Vec::new();
    for m in models {
        let reference = m.phase1.first().map(|r| r.config);
        let family = reference.map(|c| c.family().to_string()).unwrap_or_default();
        for LayerPoint {
            layer,
            relative_depth,
            mean_cv_auc,
        } in &m.profile
        {
            body.push(vec![
                m.model_id.clone(),
                family.clone(),
                layer.to_string(),
                fmt_f(*relative_depth),
                fmt_opt(*mean_cv_auc),
            ]);
        }
    }
    write_csv(path, &["model_id", "family", "layer", "relative_depth", "mean_cv_auc"], &body)
}

pub fn per_cwe_csv(
    path: &Path,
    cells: &[CellResult],
    grouping: Option<&Grouping>,
) -> Result<(), ReportError> {
    let mut body = Vec::new();
    for target in ProbeTarget::ALL {
        let means = crate::probe::per_cwe_means(cells, target);
        for (cwe, mean) in means {
            let n = cells.iter().filter(|c| c.key.target == target && c.key.cwe == cwe).count();
            let group = match grouping.and_then(|g| g.group_of(&cwe)) {
                Some(crate::probe::Group::InputHandling) => "I",
                Some(crate::probe::Group::SecureDefaults) => "D",
                None => "",
            };
            body.push(vec![target.to_string(), cwe, group.to_string(), n.to_string(), fmt_f(mean)]);
        }
    }
    write_csv(path, &["target", "cwe", "group", "n_cells", "mean_test_auc"], &body)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::Panel;

    #[test]
    fn csv_is_deterministic_and_quoted() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x/a.csv");
        let rows = vec![vec!["a,b".to_string(), fmt_f(1.0 / 3.0)], vec!["c".into(), fmt_opt(None)]];
        write_csv(&p, &["k", "v"], &rows).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text, "k,v\n\"a,b\",0.333333\nc,\n");
        let h1 = sha256_file(&p).unwrap();
        write_csv(&p, &["k", "v"], &rows).unwrap();
        assert_eq!(h1, sha256_file(&p).unwrap());
        assert_eq!(h1, sha256_bytes(text.as_bytes()));
    }

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_bytes(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn affected_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        let rows = vec![AffectedFraction {
            model_id: "m".into(),
            language: LanguageId::C,
            panel: Panel::SecurityDriven,
            tau: 10,
            n_affected: 1,
            n_units: 3,
        }];
        affected_fraction_csv(&p, &rows).unwrap();
        assert_eq!(
            fs::read_to_string(&p).unwrap().lines().nth(1).unwrap(),
            "m,c,security_driven,10,1,3,0.333333"
        );
    }

    #[test]
    fn hash_tree_skips_and_recurses() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("a/b")).unwrap();
        fs::write(dir.path().join("a/b/x.txt"), "x").unwrap();
        fs::write(dir.path().join("skip.lock"), "").unwrap();
        let t = hash_tree(dir.path(), &|p| p.extension().is_some_and(|e| e == "lock")).unwrap();
        assert_eq!(t.keys().collect::<Vec<_>>(), vec!["a/b/x.txt"]);
    }
}
