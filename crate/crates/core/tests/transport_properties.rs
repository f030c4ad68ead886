use proptest::prelude::*;

use stable_mckean::empirical::{
    coupling_upper_bound, wasserstein_1d, wasserstein_exact, EmpiricalMeasure,
};

fn clouds(
    dim: usize,
) -> impl Strategy<Value = (EmpiricalMeasure, EmpiricalMeasure, EmpiricalMeasure)> {
    (1usize..12).prop_flat_map(move |n| {
        let pts = || prop::collection::vec(-5.0f64..5.0, n * dim);
        (pts(), pts(), pts()).prop_map(move |(a, b, c)| {
            (
                EmpiricalMeasure::new(dim, a).unwrap(),
                EmpiricalMeasure::new(dim, b).unwrap(),
                EmpiricalMeasure::new(dim, c).unwrap(),
            )
        })
    })
}

fn reversed(m: &EmpiricalMeasure) -> EmpiricalMeasure {
    let mut pts: Vec<Vec<f64>> = m.points().map(<[f64]>::to_vec).collect();
    pts.reverse();
    EmpiricalMeasure::from_points(&pts).unwrap()
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metric_axioms((a, b, c) in (1usize..4).prop_flat_map(clouds), p in 1.0f64..3.0) {
        let ab = wasserstein_exact(p, &a, &b).unwrap();
        prop_assert_eq!(wasserstein_exact(p, &a, &a).unwrap(), 0.0);
        prop_assert!(close(ab, wasserstein_exact(p, &b, &a).unwrap(), 1e-12));
        let bc = wasserstein_exact(p, &b, &c).unwrap();
        let ac = wasserstein_exact(p, &a, &c).unwrap();
        prop_assert!(ac <= ab + bc + 1e-9);
    }

    #[test]
    fn invariant_under_relabelling((a, b, _) in clouds(2), p in 1.0f64..2.5) {
        let base = wasserstein_exact(p, &a, &b).unwrap();
        prop_assert!(close(base, wasserstein_exact(p, &reversed(&a), &b).unwrap(), 1e-12));
        prop_assert!(close(base, wasserstein_exact(p, &a, &reversed(&b)).unwrap(), 1e-12));
    }

    #[test]
    fn monotone_in_order((a, b, _) in clouds(2), q in 1.0f64..2.0, dp in 0.0f64..1.5) {
        let p = q + dp;
        prop_assert!(wasserstein_exact(q, &a, &b).unwrap() <= wasserstein_exact(p, &a, &b).unwrap() * (1.0 + 1e-12));
    }

    #[test]
    fn aligned_coupling_bounds_exact((a, b, _) in clouds(3), p in 1.0f64..3.0) {
        prop_assert!(coupling_upper_bound(p, &a, &b).unwrap() >= wasserstein_exact(p, &a, &b).unwrap() * (1.0 - 1e-12));
    }

    #[test]
    fn sorted_matching_is_optimal_in_1d((a, b, _) in clouds(1), p in 1.0f64..3.0) {
        prop_assert!(close(wasserstein_1d(p, &a, &b).unwrap(), wasserstein_exact(p, &a, &b).unwrap(), 1e-9));
    }
}
