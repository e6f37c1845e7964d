mod common;

use bwgan_core::spaces::{Geometry, GridSignal, SpaceSpec};
use bwgan_core::transport::{solve_transport, wasserstein_p_exact, DiscreteMeasure};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn measure(seed: u64, n: usize, dim: usize) -> DiscreteMeasure {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts = (0..n)
        .map(|_| common::normal_signal(Geometry::flat(dim), &mut rng))
        .collect();
    DiscreteMeasure::new(pts, common::random_weights(n, &mut rng)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn simplex_matches_vertex_enumeration(seed in any::<u64>(), m in 1usize..=4, n in 1usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = common::random_weights(m, &mut rng);
        let b = common::random_weights(n, &mut rng);
        let cost: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..n).map(|_| rand::Rng::random_range(&mut rng, 0.0..10.0)).collect())
            .collect();
        let (value, plan) = solve_transport(&a, &b, &cost).unwrap();
        let oracle = common::vertex_enumeration(&a, &b, &cost);
        prop_assert!((value - oracle).abs() < 1e-9, "{value} vs {oracle}");
        for (got, want) in plan.row_sums().iter().zip(&a) {
            prop_assert!((got - want).abs() < 1e-12);
        }
        for (got, want) in plan.col_sums().iter().zip(&b) {
            prop_assert!((got - want).abs() < 1e-12);
        }
        prop_assert!(plan.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn metric_axioms(s1 in any::<u64>(), s2 in any::<u64>(), s3 in any::<u64>(), p in 1.0f64..3.0) {
        let space = SpaceSpec::lp(1.5);
        let (a, b, c) = (measure(s1, 3, 2), measure(s2, 4, 2), measure(s3, 2, 2));
        let w = |x: &DiscreteMeasure, y: &DiscreteMeasure| wasserstein_p_exact(x, y, &space, p).unwrap().distance;
        prop_assert!(w(&a, &a).abs() < 1e-9);
        prop_assert!((w(&a, &b) - w(&b, &a)).abs() < 1e-9);
        prop_assert!(w(&a, &c) <= w(&a, &b) + w(&b, &c) + 1e-9);
    }

    #[test]
    fn monotone_in_exponent(s1 in any::<u64>(), s2 in any::<u64>()) {
        let space = SpaceSpec::l2();
        let (a, b) = (measure(s1, 4, 3), measure(s2, 3, 3));
        let mut last = 0.0;
        for p in [1.0, 1.5, 2.0, 3.0] {
            let d = wasserstein_p_exact(&a, &b, &space, p).unwrap().distance;
            prop_assert!(d >= last - 1e-9);
            last = d;
        }
    }
}

#[test]
fn diracs_are_at_their_distance() {
    let x = GridSignal::flat(vec![0.0, 0.0]);
    let y = GridSignal::flat(vec![3.0, 4.0]);
    for p in [1.0, 2.0, 5.0] {
        let d = wasserstein_p_exact(
            &DiscreteMeasure::dirac(x.clone()),
            &DiscreteMeasure::dirac(y.clone()),
            &SpaceSpec::l2(),
            p,
        )
        .unwrap()
        .distance;
        assert!((d - 5.0).abs() < 1e-12);
    }
}

#[test]
fn translation_moves_every_point() {
    let a = measure(7, 5, 2);
    let shift = GridSignal::flat(vec![1.0, -2.0]);
    let moved = DiscreteMeasure::new(a.points().iter().map(|x| x.add(&shift)).collect(), a.weights().to_vec()).unwrap();
    let d = wasserstein_p_exact(&a, &moved, &SpaceSpec::lp(1.0), 1.0)
        .unwrap()
        .distance;
    assert!((d - 3.0).abs() < 1e-9, "{d}");
}
