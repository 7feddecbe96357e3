mod common;

use proptest::prelude::*;
use wvm_core::transport::{w2_squared, wasserstein_variance, QuantileView};
use wvm_core::Weights;

fn views_strategy() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
    (2usize..=4).prop_flat_map(|e| {
        (
            prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 1..=8), e),
            prop::collection::vec(0.05f64..1.0, e),
        )
    })
}

fn to_views(raw: &[Vec<f64>]) -> Vec<QuantileView> {
    raw.iter().map(|v| QuantileView::from_unsorted(v.clone())).collect()
}

proptest! {
    #[test]
    fn nonnegative_and_matches_dense_grid((raw, w) in views_strategy()) {
        let views = to_views(&raw);
        let w = Weights::new(w).unwrap();
        let v = wasserstein_variance(&views, &w).unwrap();
        prop_assert!(v >= 0.0);
        let oracle = common::dense_grid_variance(&views, w.as_slice());
        prop_assert!((v - oracle).abs() <= 1e-6 * oracle.abs() + 1e-9);
    }

    #[test]
    fn shift_invariant((raw, w) in views_strategy(), c in -100.0f64..100.0) {
        let w = Weights::new(w).unwrap();
        let base = wasserstein_variance(&to_views(&raw), &w).unwrap();
        let shifted: Vec<Vec<f64>> = raw.iter().map(|v| v.iter().map(|x| x + c).collect()).collect();
        let moved = wasserstein_variance(&to_views(&shifted), &w).unwrap();
        prop_assert!((base - moved).abs() <= 1e-8 * (1.0 + base));
    }

    #[test]
    fn scale_equivariant((raw, w) in views_strategy(), lambda in -5.0f64..5.0) {
        let w = Weights::new(w).unwrap();
        let base = wasserstein_variance(&to_views(&raw), &w).unwrap();
        let scaled: Vec<Vec<f64>> = raw.iter().map(|v| v.iter().map(|x| x * lambda).collect()).collect();
        let moved = wasserstein_variance(&to_views(&scaled), &w).unwrap();
        prop_assert!((moved - lambda * lambda * base).abs() <= 1e-9 * (1.0 + moved));
    }

    #[test]
    fn zero_iff_same_step_function(base in prop::collection::vec(-10.0f64..10.0, 1..=4), reps in prop::collection::vec(1usize..=3, 2..=4)) {
        // replicating every atom r times leaves the quantile function unchanged
        let raw: Vec<Vec<f64>> = reps
            .iter()
            .map(|&r| base.iter().flat_map(|&x| std::iter::repeat_n(x, r)).collect())
            .collect();
        let w = Weights::uniform(raw.len());
        // the barycenter is a weighted sum, so equality holds up to roundoff
        prop_assert!(wasserstein_variance(&to_views(&raw), &w).unwrap() < 1e-24);

        let mut bumped = raw.clone();
        bumped[0][0] += 1.0;
        prop_assert!(wasserstein_variance(&to_views(&bumped), &w).unwrap() > 0.0);
    }

    #[test]
    fn equal_size_w2_is_mean_squared_sorted_difference(
        pair in (1usize..=20).prop_flat_map(|n| (
            prop::collection::vec(-10.0f64..10.0, n),
            prop::collection::vec(-10.0f64..10.0, n),
        ))
    ) {
        let (a, b) = pair;
        let (va, vb) = (QuantileView::from_unsorted(a), QuantileView::from_unsorted(b));
        let n = va.len() as f64;
        let direct: f64 = va.values().iter().zip(vb.values()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n;
        prop_assert_eq!(w2_squared(&va, &vb), direct);
    }

    #[test]
    fn two_env_variance_is_quarter_w2(
        raw in (prop::collection::vec(-10.0f64..10.0, 1..=8), prop::collection::vec(-10.0f64..10.0, 1..=8))
    ) {
        // equal weights: each quantile sits half the gap from the barycenter
        let views = to_views(&[raw.0, raw.1]);
        let wv = wasserstein_variance(&views, &Weights::uniform(2)).unwrap();
        let d = w2_squared(&views[0], &views[1]);
        prop_assert!((wv - 0.25 * d).abs() <= 1e-12 * (1.0 + d));
    }
}
