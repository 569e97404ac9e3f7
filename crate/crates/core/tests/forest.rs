use persona_sense::forest::*;
use persona_sense::matrix::FeatureMatrix;
use persona_sense::types::ClassLabel;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `d` uniform noise columns; column 0 carries the label with `flip` noise.
fn planted(n: usize, d: usize, flip: f64, seed: u64) -> (FeatureMatrix, Vec<ClassLabel>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cols = vec![Vec::with_capacity(n); d];
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let high = i % 2 == 1;
        y.push(if high { ClassLabel::High } else { ClassLabel::Low });
        let shown = if rng.random::<f64>() < flip { !high } else { high };
        cols[0].push(if shown { 1.0 } else { 0.0 } + rng.random::<f64>() * 0.8);
        for c in cols.iter_mut().skip(1) {
            c.push(rng.random::<f64>());
        }
    }
    let names = (0..d).map(|j| format!("x{j}")).collect();
    (FeatureMatrix::from_columns(names, cols).unwrap(), y)
}

fn params(n_trees: usize, seed: u64) -> ForestParams {
    ForestParams { n_trees, seed, ..ForestParams::default() }
}

fn train_accuracy(m: &ForestModel, x: &FeatureMatrix, y: &[ClassLabel]) -> f64 {
    let p = m.predict(x).unwrap();
    p.labels.iter().zip(y).filter(|(a, b)| a == b).count() as f64 / y.len() as f64
}

#[test]
fn constant_labels_are_single_class() {
    let (x, _) = planted(10, 2, 0.0, 1);
    assert!(matches!(fit(&x, &[ClassLabel::Low; 10], &params(5, 0)), Err(ForestError::SingleClass)));
}

#[test]
fn separable_line_is_learned_exactly() {
    let xs: Vec<f64> = (0..40).map(f64::from).collect();
    let y: Vec<ClassLabel> = xs.iter().map(|&v| if v < 17.0 { ClassLabel::Low } else { ClassLabel::High }).collect();
    let x = FeatureMatrix::from_columns(vec!["x".into()], vec![xs]).unwrap();
    let m = fit(&x, &y, &params(25, 3)).unwrap();
    assert_eq!(train_accuracy(&m, &x, &y), 1.0);
    assert_eq!(m.predict(&x).unwrap().labels, y);
}

#[test]
fn planted_feature_wins_importance_in_most_repeats() {
    let wins = (0..20)
        .filter(|&s| {
            let (x, y) = planted(80, 3, 0.1, 100 + s);
            let m = fit(&x, &y, &params(50, s)).unwrap();
            let imp = m.importances();
            imp[0] > imp[1] && imp[0] > imp[2]
        })
        .count();
    assert!(wins >= 11, "{wins}/20");
}

#[test]
fn rfe_keeps_planted_feature_in_nine_of_ten_runs() {
    let kept = (0..20)
        .filter(|&s| {
            let (x, y) = planted(60, 30, 0.1, 200 + s);
            let r = rfe(&x, &y, &params(30, s), &RfeParams { target_k: 5, drop_frac: 0.10 }).unwrap();
            assert_eq!(r.selected.len(), 5);
            r.selected_names.iter().any(|n| n == "x0")
        })
        .count();
    assert!(kept >= 18, "{kept}/20");
}

#[test]
fn rfe_rejects_zero_drop_fraction() {
    let (x, y) = planted(20, 4, 0.0, 1);
    let err = rfe(&x, &y, &params(5, 0), &RfeParams { target_k: 2, drop_frac: 0.0 });
    assert!(matches!(err, Err(ForestError::InvalidParam(_))));
}

#[test]
fn rfe_one_over_target_takes_one_round() {
    let (x, y) = planted(30, 6, 0.0, 4);
    let r = rfe(&x, &y, &params(10, 0), &RfeParams { target_k: 5, drop_frac: 0.10 }).unwrap();
    assert_eq!(r.rounds, 1);
    assert_eq!(r.selected.len(), 5);
}

#[test]
fn even_forest_tie_votes_low() {
    // Two single-split stumps that disagree on every row.
    let x = FeatureMatrix::from_columns(vec!["a".into()], vec![vec![0.0, 1.0]]).unwrap();
    let y = vec![ClassLabel::Low, ClassLabel::High];
    for seed in 0..200 {
        let m = fit(&x, &y, &params(2, seed)).unwrap();
        let p = m.predict(&x).unwrap();
        for (label, frac) in p.labels.iter().zip(&p.high_fraction) {
            if *frac == 0.5 {
                assert_eq!(*label, ClassLabel::Low);
                return;
            }
        }
    }
    panic!("no tied vote constructed");
}

#[test]
fn missing_column_is_schema_mismatch() {
    let (x, y) = planted(20, 3, 0.0, 9);
    let m = fit(&x, &y, &params(5, 0)).unwrap();
    let fewer = x.select_columns(&[0, 1]);
    assert!(matches!(m.predict(&fewer), Err(ForestError::SchemaMismatch(n)) if n == "x2"));
}

#[test]
fn results_identical_across_worker_counts() {
    let (x, y) = planted(60, 12, 0.2, 5);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let m = fit(&x, &y, &params(40, 77)).unwrap();
            let p = m.predict(&x).unwrap();
            let r = rfe(&x, &y, &params(20, 77), &RfeParams { target_k: 4, drop_frac: 0.2 }).unwrap();
            (m.export_text(), p, r.selected, r.model.export_text())
        })
    };
    let one = run(1);
    assert_eq!(one, run(3));
    assert_eq!(one, run(8));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn importances_nonnegative_and_normalized(seed in 0u64..10_000, flip in 0.0f64..0.5) {
        let (x, y) = planted(30, 5, flip, seed);
        let m = fit(&x, &y, &params(10, seed)).unwrap();
        let imp = m.importances();
        prop_assert!(imp.iter().all(|&v| v >= 0.0));
        let any_split = m.trees().iter().any(|t| !t.thresholds().is_empty());
        if any_split {
            prop_assert!((imp.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn thresholds_strictly_between_observed_values(seed in 0u64..10_000) {
        let (x, y) = planted(25, 4, 0.3, seed);
        let m = fit(&x, &y, &params(8, seed)).unwrap();
        for tree in m.trees() {
            for (f, t) in tree.thresholds() {
                let col = x.column(f);
                let below = col.iter().any(|&v| v < t);
                let above = col.iter().any(|&v| v > t);
                prop_assert!(below && above, "feature {} threshold {}", f, t);
                prop_assert!(col.iter().all(|&v| v != t));
            }
        }
    }

    #[test]
    fn prediction_follows_columns_by_name(seed in 0u64..10_000, rot in 1usize..5) {
        let (x, y) = planted(30, 5, 0.2, seed);
        let m = fit(&x, &y, &params(15, seed)).unwrap();
        let order: Vec<usize> = (0..5).map(|j| (j + rot) % 5).collect();
        let permuted = x.select_columns(&order);
        prop_assert_eq!(m.predict(&x).unwrap(), m.predict(&permuted).unwrap());
    }

    #[test]
    fn doubled_rows_keep_training_accuracy(seed in 0u64..10_000) {
        let (x, y) = planted(24, 3, 0.0, seed);
        let rows: Vec<usize> = (0..24).chain(0..24).collect();
        let (x2, y2) = (x.select_rows(&rows), rows.iter().map(|&i| y[i]).collect::<Vec<_>>());
        let full = ForestParams { bootstrap: false, ..params(15, seed) };
        let m = fit(&x, &y, &full).unwrap();
        let m2 = fit(&x2, &y2, &full).unwrap();
        prop_assert_eq!(train_accuracy(&m, &x2, &y2), train_accuracy(&m, &x, &y));
        prop_assert_eq!(train_accuracy(&m2, &x2, &y2), train_accuracy(&m, &x, &y));
    }
}
