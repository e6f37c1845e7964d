mod common;

use bwgan_core::spaces::{dual_exponent, Factor, Geometry, Measure, SpaceSpec};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn grid() -> Geometry {
    Geometry::new(1, 4, 4).unwrap()
}

fn spaces() -> impl Strategy<Value = SpaceSpec> {
    prop_oneof![
        (1.0f64..8.0).prop_map(SpaceSpec::lp),
        (1.1f64..6.0, -1.5f64..1.5).prop_map(|(p, s)| SpaceSpec::sobolev(s, p)),
        (1.1f64..4.0).prop_map(|p| SpaceSpec::lp(p).with_measure(Measure::Normalized)),
        (1.2f64..4.0, 1.1f64..3.0).prop_map(|(p, r)| {
            let half = Geometry::new(1, 2, 4).unwrap();
            SpaceSpec::product(
                r,
                vec![
                    Factor {
                        space: SpaceSpec::lp(p),
                        geometry: half,
                    },
                    Factor {
                        space: SpaceSpec::sobolev(0.5, p),
                        geometry: half,
                    },
                ],
            )
            .unwrap()
        }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn norm_axioms(space in spaces(), seed in any::<u64>(), alpha in -5.0f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = common::normal_signal(grid(), &mut rng);
        let y = common::normal_signal(grid(), &mut rng);
        let nx = space.norm(&x).unwrap();
        prop_assert!(nx > 0.0);
        let scaled = space.norm(&x.scaled(alpha)).unwrap();
        prop_assert!((scaled - alpha.abs() * nx).abs() <= 1e-9 * (1.0 + nx));
        let sum = space.norm(&x.add(&y)).unwrap();
        prop_assert!(sum <= nx + space.norm(&y).unwrap() + 1e-9);
    }

    #[test]
    fn holder_inequality_and_equality(space in spaces(), seed in any::<u64>()) {
        prop_assume!(space.exponent() > 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = common::normal_signal(grid(), &mut rng);
        let h = common::normal_signal(grid(), &mut rng);
        let dual = space.dual_norm(&g).unwrap();
        prop_assert!(g.dot(&h) <= dual * space.norm(&h).unwrap() * (1.0 + 1e-10) + 1e-12);
        let star = space.dual_maximizer(&g).unwrap();
        let attained = g.dot(&star) / space.norm(&star).unwrap();
        prop_assert!((attained - dual).abs() <= 1e-10 * dual.max(1.0));
    }

    #[test]
    fn bidual_is_the_original(space in spaces(), seed in any::<u64>()) {
        prop_assume!(space.exponent() > 1.0);
        let x = common::normal_signal(grid(), &mut ChaCha8Rng::seed_from_u64(seed));
        let back = space.dual_space().unwrap().dual_space().unwrap();
        let (a, b) = (space.norm(&x).unwrap(), back.norm(&x).unwrap());
        prop_assert!((a - b).abs() <= 1e-9 * a);
    }

    #[test]
    fn zero_smoothness_is_lebesgue(p in 1.0f64..8.0, seed in any::<u64>()) {
        let x = common::normal_signal(Geometry::new(1, 16, 16).unwrap(), &mut ChaCha8Rng::seed_from_u64(seed));
        let a = SpaceSpec::sobolev(0.0, p).norm(&x).unwrap();
        let b = SpaceSpec::lp(p).norm(&x).unwrap();
        prop_assert!((a - b).abs() <= 1e-8 * b);
    }

    #[test]
    fn conjugate_exponents(p in 1.01f64..50.0) {
        let q = dual_exponent(p).unwrap();
        prop_assert!((1.0 / p + 1.0 / q - 1.0).abs() < 1e-12);
        prop_assert!((dual_exponent(q).unwrap() - p).abs() <= 1e-9 * p);
    }
}

#[test]
fn constant_image_has_lebesgue_sobolev_norm() {
    let g = Geometry::new(1, 8, 8).unwrap();
    let x = bwgan_core::spaces::GridSignal::new(g, vec![0.7; 64]).unwrap();
    for s in [-1.0, 0.5, 1.5] {
        let a = SpaceSpec::sobolev(s, 2.0).norm(&x).unwrap();
        let b = SpaceSpec::lp(2.0).norm(&x).unwrap();
        assert!((a - b).abs() < 1e-10, "s={s}: {a} vs {b}");
    }
}

#[test]
fn l1_has_no_dual() {
    assert!(SpaceSpec::lp(1.0).dual_space().is_err());
    assert!(dual_exponent(1.0).is_err());
}
