mod oracles;

use mortality_core::eval::{self, metrics, stratified_kfold, Candidate, GridSpec};
use mortality_core::preprocess::PipelineConfig;
use mortality_core::stats::{paired_t_test, t_cdf};
use mortality_core::tabular::{read_table, ColumnKind, ColumnSchema, DEFAULT_MISSING_TOKENS};
use mortality_core::{BinaryTarget, GbdtParams, Table};
use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn weighted_recall_is_accuracy(pairs in prop::collection::vec((any::<bool>(), prop::bool::weighted(0.2)), 1..200)) {
        let pred: Vec<u8> = pairs.iter().map(|p| u8::from(p.0)).collect();
        let truth = BinaryTarget::new(pairs.iter().map(|p| u8::from(p.1)).collect()).unwrap();
        let m = metrics(&pred, &truth).unwrap();
        prop_assert_eq!(m.weighted_recall, m.accuracy);
        prop_assert!((0.0..=1.0).contains(&m.weighted_f1));
        let (lo, hi) = (m.per_class[0].f1.min(m.per_class[1].f1), m.per_class[0].f1.max(m.per_class[1].f1));
        prop_assert!(m.weighted_f1 >= lo - 1e-15 && m.weighted_f1 <= hi + 1e-15);
    }
}

proptest! {
    #[test]
    fn t_test_is_antisymmetric(pairs in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 2..20)) {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let ab = paired_t_test(&a, &b).unwrap();
        let ba = paired_t_test(&b, &a).unwrap();
        prop_assert_eq!(ab.t_statistic, -ba.t_statistic);
        prop_assert_eq!(ab.p_value, ba.p_value);
        prop_assert!((0.0..=1.0).contains(&ab.p_value));
    }

    #[test]
    fn t_cdf_is_symmetric_and_monotone(t in -50.0f64..50.0, step in 0.0f64..5.0, df in 1.0f64..60.0) {
        prop_assert!((t_cdf(t, df) + t_cdf(-t, df) - 1.0).abs() <= 1e-10);
        prop_assert!(t_cdf(t + step, df) >= t_cdf(t, df));
    }

    #[test]
    fn kfold_parts_are_balanced(bits in prop::collection::vec(prop::bool::weighted(0.3), 20..300), k in 2usize..11, seed in any::<u64>()) {
        let target = BinaryTarget::new(bits.iter().map(|&b| u8::from(b)).collect()).unwrap();
        prop_assume!(target.class_counts().iter().all(|&c| c >= k));
        let p = stratified_kfold(&target, k, seed).unwrap();
        let folds = p.folds();
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for class in 0..2u8 {
            let counts: Vec<usize> = folds.iter().map(|f| f.iter().filter(|&&r| target.values[r] == class).count()).collect();
            prop_assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
        }
        prop_assert_eq!(p, stratified_kfold(&target, k, seed).unwrap());
    }
}

const T_GRID: [f64; 9] = [-6.0, -2.5, -1.0, -0.3, 0.0, 0.4, 1.7, 3.0, 8.0];
const DF_GRID: [f64; 6] = [1.0, 2.0, 3.0, 5.0, 9.0, 30.0];

#[test]
fn t_cdf_matches_quadrature_and_statrs() {
    for df in DF_GRID {
        let reference = StudentsT::new(0.0, 1.0, df).unwrap();
        for t in T_GRID {
            let ours = t_cdf(t, df);
            let quad = oracles::t_cdf_quadrature(t, df);
            assert!((ours - quad).abs() <= 1e-6, "t={t} df={df}: {ours} vs quadrature {quad}");
            assert!((ours - reference.cdf(t)).abs() <= 1e-6, "t={t} df={df}: statrs disagrees");
        }
    }
}

#[test]
fn paired_test_matches_quadrature() {
    let cases: [(&[f64], &[f64]); 4] = [
        (&[0.91, 0.88, 0.90, 0.93, 0.87], &[0.90, 0.89, 0.88, 0.92, 0.86]),
        (&[1.0, 2.0, 3.0, 4.0], &[1.5, 1.0, 3.5, 2.0]),
        (&[0.2, 0.4, 0.1, 0.9, 0.5, 0.3, 0.7, 0.6, 0.8, 0.55], &[0.25, 0.3, 0.2, 0.7, 0.5, 0.35, 0.6, 0.5, 0.9, 0.5]),
        (&[10.0, 12.0], &[9.0, 9.5]),
    ];
    for (a, b) in cases {
        let ours = paired_t_test(a, b).unwrap();
        let (t, p) = oracles::paired_t_quadrature(a, b);
        assert!((ours.t_statistic - t).abs() <= 1e-9 * t.abs().max(1.0));
        assert!((ours.p_value - p).abs() <= 1e-6, "{} vs {p}", ours.p_value);
    }
    let zero = paired_t_test(&[1.0, -1.0, 0.5], &[0.0, 0.0, 0.5]).unwrap();
    assert_eq!(zero.t_statistic, 0.0);
    assert_eq!(zero.p_value, 1.0);
}

fn tiny_table(n: usize) -> (Table, BinaryTarget) {
    let schema = vec![
        ColumnSchema::new("ID", ColumnKind::Id),
        ColumnSchema::new("A", ColumnKind::Numeric),
        ColumnSchema::new("B", ColumnKind::Binary),
        ColumnSchema::new("LET_IS", ColumnKind::Target),
    ];
    let mut r = mortality_core::rng::substream(4, "tiny");
    let mut text = String::from("ID,A,B,LET_IS\n");
    for i in 0..n {
        let a = (oracles::unit(&mut r) * 100.0).round();
        let b = u8::from(oracles::unit(&mut r) < 0.5);
        let dead = u8::from(a + 30.0 * b as f64 > 95.0 + 20.0 * oracles::unit(&mut r));
        text.push_str(&format!("{},{a},{b},{dead}\n", i + 1));
    }
    let table = read_table(text.as_bytes(), &schema, &DEFAULT_MISSING_TOKENS).unwrap();
    let y = mortality_core::tabular::binarize_target(&table, "LET_IS").unwrap();
    (table, y)
}

fn candidates() -> Vec<Candidate> {
    let mut out = Vec::new();
    for (n_trees, max_leaves) in [(3, 2), (5, 4), (3, 2), (8, 3)] {
        out.push(Candidate {
            params: GbdtParams { n_trees, max_leaves, min_samples_leaf: 3, ..GbdtParams::default() },
            pipeline: PipelineConfig::raw(1),
        });
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn grid_winner_score_ignores_candidate_order(order in Just((0..4).collect::<Vec<usize>>()).prop_shuffle()) {
        let (table, y) = tiny_table(120);
        let base = candidates();
        let shuffled: Vec<Candidate> = order.iter().map(|&i| base[i].clone()).collect();
        let a = eval::grid_search(&table, &y, &GridSpec { candidates: base, cv_folds: 3 }, 9).unwrap();
        let b = eval::grid_search(&table, &y, &GridSpec { candidates: shuffled, cv_folds: 3 }, 9).unwrap();
        prop_assert_eq!(a.best_score, b.best_score);
    }
}

#[test]
fn identical_pipelines_compare_as_equal() {
    let (table, y) = tiny_table(150);
    let c = &candidates()[1];
    let cmp = eval::compare(&y, ("a", &table, c), ("b", &table, c), 5, 3).unwrap();
    assert!(cmp.t_test.zero_variance);
    assert_eq!(cmp.t_test.p_value, 1.0);
    assert_eq!(cmp.runs[0].cv.fold_f1(), cmp.runs[1].cv.fold_f1());
}
