use std::collections::BTreeMap;

use approx::assert_abs_diff_eq;
use persona_sense::impute::*;
use persona_sense::types::*;
use proptest::prelude::*;

fn person(id: &str, country: Country) -> Participant {
    Participant {
        id: id.into(),
        country,
        gender: Gender::Male,
        age_range: AgeRange::From26To34,
        education: Education::Bachelor,
        employment: Employment::Employed,
        tz_offset_minutes: 0,
        responses: Responses::new(&[3; ITEM_COUNT]).unwrap(),
    }
}

fn cohort(rows: Vec<Vec<Option<f64>>>) -> CohortMatrix {
    let p = rows[0].len();
    let people = (0..rows.len()).map(|i| person(&format!("p{i:02}"), Country::ALL[i % 5])).collect();
    CohortMatrix::new(people, (0..p).map(|j| format!("f{j}")).collect(), rows).unwrap()
}

#[test]
fn forty_percent_missing_is_dropped_thirty_kept() {
    let mut rows = vec![vec![Some(1.0); 10]; 3];
    rows[0][..4].iter_mut().for_each(|v| *v = None);
    rows[1][..3].iter_mut().for_each(|v| *v = None);
    let (kept, report) = filter_missingness(&cohort(rows), 0.30).unwrap();
    assert_eq!(kept.n_rows(), 2);
    assert_eq!(report.dropped, vec!["p00".to_string()]);
    assert_eq!(report.per_country[&Country::UK], (0, 1));
    assert_eq!(report.per_country[&Country::ES], (1, 1));
}

#[test]
fn nobody_surviving_is_an_error() {
    let rows = vec![vec![None, None, Some(1.0)]; 2];
    assert!(matches!(filter_missingness(&cohort(rows.clone()), 0.30), Err(ImputeError::EmptyCohort)));
    assert!(matches!(filter_missingness(&cohort(rows), 1.0), Err(ImputeError::BadThreshold(_))));
}

#[test]
fn complete_matrix_passes_through() {
    let rows: Vec<Vec<Option<f64>>> = (0..6).map(|i| vec![Some(i as f64), Some((i * i) as f64)]).collect();
    let out = iterative_impute(&cohort(rows.clone()), &ImputeParams::default()).unwrap();
    for (i, r) in rows.iter().enumerate() {
        for (j, v) in r.iter().enumerate() {
            assert_eq!(out.features.value(i, j), v.unwrap());
        }
    }
    assert!(out.report.converged);
    assert_eq!(out.report.sweeps, 0);
}

#[test]
fn linear_relation_recovers_missing_value() {
    let xs = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0];
    let rows: Vec<Vec<Option<f64>>> =
        xs.iter().map(|&x| vec![Some(x), if x == 3.0 { None } else { Some(2.0 * x) }]).collect();
    let out = iterative_impute(&cohort(rows), &ImputeParams::default()).unwrap();
    assert!((out.features.value(2, 1) - 6.0).abs() < 0.01, "{}", out.features.value(2, 1));
}

#[test]
fn fully_missing_column_is_rejected() {
    let rows = vec![vec![Some(1.0), None], vec![Some(2.0), None]];
    assert!(matches!(iterative_impute(&cohort(rows), &ImputeParams::default()), Err(ImputeError::AllMissingColumn(c)) if c == "f1"));
}

#[test]
fn csv_round_trip_keeps_missing_cells() {
    let m = cohort(vec![vec![Some(1.5), None], vec![None, Some(-2.25)]]);
    assert_eq!(CohortMatrix::from_csv(&m.to_csv(), &m.participants).unwrap(), m);
}

fn grid() -> impl Strategy<Value = Vec<Vec<Option<f64>>>> {
    (3usize..12, 2usize..6).prop_flat_map(|(n, p)| {
        prop::collection::vec(
            prop::collection::vec(prop::option::weighted(0.8, -50.0f64..50.0), p),
            n,
        )
    })
}

fn has_observed_columns(rows: &[Vec<Option<f64>>]) -> bool {
    (0..rows[0].len()).all(|j| rows.iter().any(|r| r[j].is_some()))
}

proptest! {
    #[test]
    fn observed_cells_untouched_and_report_consistent(rows in grid()) {
        prop_assume!(has_observed_columns(&rows));
        let params = ImputeParams::default();
        let out = iterative_impute(&cohort(rows.clone()), &params).unwrap();
        for (i, r) in rows.iter().enumerate() {
            for (j, v) in r.iter().enumerate() {
                let got = out.features.value(i, j);
                prop_assert!(got.is_finite());
                if let Some(v) = v {
                    prop_assert_eq!(got, *v);
                }
            }
        }
        let rep = &out.report;
        prop_assert_eq!(rep.sweeps, rep.max_changes.len());
        prop_assert!(rep.sweeps <= params.max_sweeps);
        prop_assert!(rep.max_changes.iter().all(|c| c.is_finite()));
        if rep.converged && rep.sweeps > 0 {
            prop_assert!(*rep.max_changes.last().unwrap() < params.tol);
        }
        if !rep.converged {
            prop_assert_eq!(rep.sweeps, params.max_sweeps);
        }
        let missing: BTreeMap<String, usize> = rep.missing_per_column.iter().cloned().collect();
        for j in 0..rows[0].len() {
            prop_assert_eq!(missing[&format!("f{j}")], rows.iter().filter(|r| r[j].is_none()).count());
        }
    }

    #[test]
    fn row_shuffle_commutes_with_imputation(rows in grid(), shift in 1usize..11) {
        prop_assume!(has_observed_columns(&rows));
        let m = cohort(rows);
        let n = m.n_rows();
        let perm: Vec<usize> = (0..n).map(|i| (i + shift) % n).rev().collect();
        let a = iterative_impute(&m, &ImputeParams::default()).unwrap();
        let b = iterative_impute(&m.select_rows(&perm), &ImputeParams::default()).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            for j in 0..m.names.len() {
                let (x, y) = (a.features.value(i, j), b.features.value(k, j));
                prop_assert!((x - y).abs() <= 1e-6 * (1.0 + x.abs()), "row {} col {}: {} vs {}", i, j, x, y);
            }
        }
    }
}

#[test]
fn ridge_shrinks_toward_column_mean_without_signal() {
    // A constant predictor carries no signal, so the imputed value is the observed mean.
    let rows = vec![
        vec![Some(1.0), Some(10.0)],
        vec![Some(1.0), Some(20.0)],
        vec![Some(1.0), None],
        vec![Some(1.0), Some(30.0)],
    ];
    let out = iterative_impute(&cohort(rows), &ImputeParams::default()).unwrap();
    assert_abs_diff_eq!(out.features.value(2, 1), 20.0, epsilon = 1e-6);
}
