//! Invariants that must hold for any input, checked on random tables.

use approx::assert_abs_diff_eq;
use ndarray::{Array1, Array2};
use proptest::prelude::*;

use locimp::baselines::{explain_iml_style, uniform_metric};
use locimp::data::{DataTable, Synthetic};
use locimp::evalx::{mse_coefficients, pearson};
use locimp::forest::{local_importance, train_forest, ForestParams, ImportanceMatrix};
use locimp::varimp::{self, LocalFitParams};

fn small_forest() -> ForestParams {
    ForestParams {
        n_trees: 15,
        ..ForestParams::default()
    }
}

fn table_from(values: &[f64], n: usize, d: usize, target: &[f64]) -> DataTable {
    let x = Array2::from_shape_vec((n, d), values.to_vec()).unwrap();
    let names = (1..=d).map(|j| format!("x{j}")).collect();
    DataTable::new(x, Array1::from(target.to_vec()), names).unwrap()
}

fn table_strategy() -> impl Strategy<Value = DataTable> {
    (8usize..24, 1usize..5).prop_flat_map(|(n, d)| {
        (
            prop::collection::vec(0.0f64..1.0, n * d),
            prop::collection::vec(-10.0f64..10.0, n),
        )
            .prop_map(move |(x, y)| table_from(&x, n, d, &y))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn importance_rows_are_distributions(table in table_strategy(), seed in any::<u64>()) {
        let forest = train_forest(&table, &small_forest(), seed).unwrap();
        let imp = local_importance(&forest, &table, seed).unwrap();
        for row in imp.normalized.rows() {
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn local_prediction_is_intercept_plus_effects(table in table_strategy(), h in 0.05f64..4.0) {
        let params = LocalFitParams::new(table.d()).with_bandwidth(h);
        let imp = ImportanceMatrix::uniform(table.n(), table.d());
        let (ex, b) = varimp::explain_all(&table, &imp, &params).unwrap();
        for e in &ex {
            let x = table.row(e.index);
            let g = e.intercept + e.effects.iter().sum::<f64>();
            prop_assert!((e.local_prediction - g).abs() < 1e-10);
            for j in 0..table.d() {
                prop_assert_eq!(e.effects[j], e.coefficients[j] * x[j]);
            }
        }
        prop_assert_eq!(b.slopes().nrows(), table.n());
    }

    #[test]
    fn uniform_importance_matches_the_unweighted_baseline(table in table_strategy(), h in 0.1f64..2.0) {
        let params = LocalFitParams::new(table.d()).with_bandwidth(h);
        let imp = ImportanceMatrix::from_raw(Array2::from_elem((table.n(), table.d()), 3.0));
        prop_assert_eq!(imp.normalized.row(0).to_vec(), uniform_metric(table.d()));
        let i = table.n() / 2;
        let a = varimp::explain_instance(&table, &imp, i, &params).unwrap();
        let b = explain_iml_style(&table, i, &params).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn coefficient_mse_is_symmetric_and_zero_on_itself(
        a in prop::collection::vec(-50.0f64..50.0, 12),
        b in prop::collection::vec(-50.0f64..50.0, 12),
    ) {
        let a = Array2::from_shape_vec((4, 3), a).unwrap();
        let b = Array2::from_shape_vec((4, 3), b).unwrap();
        let ab = mse_coefficients(&a, &b).unwrap();
        let ba = mse_coefficients(&b, &a).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(mse_coefficients(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn correlation_stays_in_range(
        a in prop::collection::vec(-1e3f64..1e3, 5..40),
        shift in -10.0f64..10.0,
    ) {
        let b: Vec<f64> = a.iter().enumerate().map(|(i, v)| v * 0.5 + shift * (i as f64).sin()).collect();
        if let Ok(c) = pearson(&a, &b) {
            prop_assert!((-1.0..=1.0).contains(&c.r));
            prop_assert!(c.ci_low <= c.r && c.r <= c.ci_high);
        }
    }

    #[test]
    fn generation_is_deterministic(id in 1u32..=6, seed in any::<u64>()) {
        let s = Synthetic::from_id(id).unwrap();
        let (t1, g1) = s.generate(30, 4, seed).unwrap();
        let (t2, g2) = s.generate(30, 4, seed).unwrap();
        prop_assert_eq!(t1.features(), t2.features());
        prop_assert_eq!(t1.target(), t2.target());
        prop_assert_eq!(g1, g2);
    }
}

#[test]
fn constant_black_box_gets_zero_effects() {
    let (table, _) = Synthetic::AlternatingContinuous.generate(80, 5, 3).unwrap();
    let table = table.with_target(Array1::from_elem(80, 2.5)).unwrap();
    let forest = train_forest(&table, &small_forest(), 1).unwrap();
    let imp = local_importance(&forest, &table, 2).unwrap();
    for row in imp.normalized.rows() {
        for &v in row {
            assert_abs_diff_eq!(v, 0.2, epsilon = 1e-15);
        }
    }
    let (ex, _) = varimp::explain_all(&table, &imp, &LocalFitParams::new(5)).unwrap();
    for e in ex {
        assert_abs_diff_eq!(e.intercept, 2.5, epsilon = 1e-12);
        assert!(e.coefficients.iter().all(|&b| b.abs() < 1e-12));
        assert_abs_diff_eq!(e.local_prediction, 2.5, epsilon = 1e-12);
    }
}
