use mutaprobe_core::mutator::{
    build_plan, mutate_single_char, mutate_three_char, MutationKind, PlanConfig, WhitespaceTokenizer, ASCII_LETTERS,
};
use mutaprobe_core::stats::{
    benjamini_hochberg, fisher_exact_two_sided, mann_whitney_u_greater_with, roc_auc, ContingencyTable2x2,
    MwuMethod,
};
use proptest::prelude::*;

fn word() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9,.;:_()]{1,12}"
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn fisher_is_symmetric(a in 0u64..15, b in 0u64..15, c in 0u64..15, d in 0u64..15) {
        prop_assume!(a + b + c + d > 0);
        let p = fisher_exact_two_sided(ContingencyTable2x2::new(a, b, c, d)).unwrap().p_value;
        let rows = fisher_exact_two_sided(ContingencyTable2x2::new(c, d, a, b)).unwrap().p_value;
        let cols = fisher_exact_two_sided(ContingencyTable2x2::new(b, a, d, c)).unwrap().p_value;
        let tr = fisher_exact_two_sided(ContingencyTable2x2::new(a, c, b, d)).unwrap().p_value;
        prop_assert!((0.0..=1.0).contains(&p));
        for q in [rows, cols, tr] {
            prop_assert!((p - q).abs() <= 1e-12 * p.max(1e-300) + 1e-15);
        }
    }

    #[test]
    fn bh_q_values_are_monotone_in_p(ps in prop::collection::vec(0.0f64..=1.0, 1..60)) {
        let out = benjamini_hochberg(&ps, 0.05).unwrap();
        for i in 0..ps.len() {
            prop_assert!(out.q_values[i] >= ps[i] - 1e-15);
            prop_assert!(out.q_values[i] <= 1.0);
            prop_assert_eq!(out.rejected[i], out.q_values[i] <= 0.05);
            for j in 0..ps.len() {
                if ps[i] < ps[j] {
                    prop_assert!(out.q_values[i] <= out.q_values[j]);
                }
            }
        }
    }

    #[test]
    fn auc_flips_with_labels(data in prop::collection::vec((any::<bool>(), 0u8..6), 2..40)) {
        let labels: Vec<bool> = data.iter().map(|d| d.0).collect();
        prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
        let scores: Vec<f64> = data.iter().map(|d| d.1 as f64).collect();
        let inv: Vec<bool> = labels.iter().map(|l| !l).collect();
        let a = roc_auc(&labels, &scores).unwrap();
        let b = roc_auc(&inv, &scores).unwrap();
        prop_assert!((a + b - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        prop_assert!((roc_auc(&labels, &neg).unwrap() - b).abs() < 1e-12);
    }

    #[test]
    fn mwu_statistics_complement(xs in prop::collection::vec(0u8..20, 1..9), ys in prop::collection::vec(0u8..20, 1..9)) {
        let xs: Vec<f64> = xs.into_iter().map(f64::from).collect();
        let ys: Vec<f64> = ys.into_iter().map(f64::from).collect();
        let u = mann_whitney_u_greater_with(&xs, &ys, MwuMethod::NormalApprox).unwrap().statistic;
        let v = mann_whitney_u_greater_with(&ys, &xs, MwuMethod::NormalApprox).unwrap().statistic;
        prop_assert_eq!(u + v, (xs.len() * ys.len()) as f64);
    }

    #[test]
    fn single_char_edits_one_letter(w in word(), seed in any::<u64>()) {
        let view = WhitespaceTokenizer::fit([w.as_str()]).tokenize("t", &w);
        let m = mutate_single_char(&view, 0, seed).unwrap();
        let a: Vec<char> = w.chars().collect();
        let b: Vec<char> = m.mutated_surface.chars().collect();
        prop_assert_eq!(a.len(), b.len());
        let diffs: Vec<usize> = (0..a.len()).filter(|&i| a[i] != b[i]).collect();
        prop_assert_eq!(&diffs, &m.char_positions);
        prop_assert_eq!(diffs.len(), 1);
        prop_assert!(ASCII_LETTERS.contains(&(b[diffs[0]] as u8)));
    }

    #[test]
    fn three_char_edits_three_letters(w in "[a-z0-9_]{3,12}", seed in any::<u64>()) {
        let text = format!("keep {w} this");
        let view = WhitespaceTokenizer::fit([text.as_str()]).tokenize("t", &text);
        let m = mutate_three_char(&view, 1, seed).unwrap();
        let a: Vec<char> = w.chars().collect();
        let b: Vec<char> = m.mutated_surface.chars().collect();
        prop_assert_eq!((0..a.len()).filter(|&i| a[i] != b[i]).count(), 3);
        prop_assert!(m.mutated_prompt.starts_with("keep "));
        prop_assert!(m.mutated_prompt.ends_with(" this"));
    }

    #[test]
    fn plans_restore_and_count(words in prop::collection::vec("[a-z]{1,6}", 1..8)) {
        let text = words.join(" ");
        let view = WhitespaceTokenizer::fit([text.as_str()]).tokenize("t", &text);
        let cfg = PlanConfig { kinds: vec![MutationKind::SingleChar, MutationKind::ThreeChar], ..PlanConfig::default() };
        let plan = build_plan(&view, None, &cfg).unwrap();
        let long = words.iter().filter(|w| w.len() >= 3).count();
        prop_assert_eq!(plan.len(), 6 * (words.len() + long));
        for r in &plan.records {
            prop_assert_eq!(r.restore(), text.clone());
            prop_assert_eq!(r.token_count, words.len());
        }
        prop_assert_eq!(build_plan(&view, None, &cfg).unwrap(), plan);
    }
}
