mod common;

use bwgan_core::autodiff::Tensor;
use bwgan_core::bwgan::{
    constant_objective, critic_loss, critic_loss_terms, generator_loss, generator_loss_and_grad,
    gradient_penalty_and_grad, heuristic_gamma, heuristic_lambda, interpolate, optimal_constant_c, Setting,
    TrainConfig, Trainer,
};
use bwgan_core::nn::Activation;
use bwgan_core::spaces::{Geometry, GridSignal, SpaceSpec};
use bwgan_core::verify::random_critic;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn batch(rng: &mut ChaCha8Rng, n: usize, geometry: Geometry) -> Vec<GridSignal> {
    (0..n).map(|_| common::normal_signal(geometry, rng)).collect()
}

/// Classic WGAN-GP loss built from first-order gradients and a hand-written
/// Euclidean norm.
fn wgan_gp_reference(
    critic: &bwgan_core::nn::CriticHandle,
    real: &[GridSignal],
    fake: &[GridSignal],
    xhat: &[GridSignal],
    lambda: f64,
) -> f64 {
    let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    let dr = mean(critic.values(real).unwrap());
    let df = mean(critic.values(fake).unwrap());
    let (_, grads) = critic.values_and_gradients(xhat).unwrap();
    let pen = (0..xhat.len())
        .map(|i| {
            let n = grads.row(i).iter().map(|g| g * g).sum::<f64>().sqrt();
            (n - 1.0).powi(2)
        })
        .sum::<f64>()
        / xhat.len() as f64;
    df - dr + lambda * pen
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn l2_penalty_is_wgan_gp(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Geometry::flat(6);
        let critic = random_critic(vec![6, 16, 1], Activation::Tanh, &mut rng).unwrap();
        let (real, fake) = (batch(&mut rng, 8, g), batch(&mut rng, 8, g));
        let u: Vec<f64> = (0..8).map(|_| rng.random()).collect();
        let xhat = interpolate(&real, &fake, &u).unwrap();
        let ours = critic_loss(&critic, &real, &fake, &xhat, &SpaceSpec::l2(), 10.0, 1.0, 0.0).unwrap();
        let reference = wgan_gp_reference(&critic, &real, &fake, &xhat, 10.0);
        prop_assert!((ours - reference).abs() < 1e-12, "{ours} vs {reference}");
    }

    #[test]
    fn penalty_is_scale_invariant(seed in any::<u64>(), p in 1.2f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Geometry::flat(5);
        let critic = random_critic(vec![5, 8, 1], Activation::Softplus, &mut rng).unwrap();
        let xhat = batch(&mut rng, 6, g);
        let space = SpaceSpec::lp(p);
        let (a, _) = gradient_penalty_and_grad(&critic, &xhat, &space, 1.5).unwrap();
        let (b, _) = gradient_penalty_and_grad(&critic.scaled(2.0), &xhat, &space, 3.0).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }

    #[test]
    fn heuristics_follow_duality(seed in any::<u64>(), p in 1.2f64..6.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sample = batch(&mut rng, 32, Geometry::flat(7));
        let l2 = SpaceSpec::l2();
        prop_assert_eq!(heuristic_lambda(&sample, &l2).unwrap(), heuristic_gamma(&sample, &l2).unwrap());
        let space = SpaceSpec::lp(p);
        let dual = space.dual_space().unwrap();
        let g = heuristic_gamma(&sample, &space).unwrap();
        let l = heuristic_lambda(&sample, &dual).unwrap();
        prop_assert!((g - l).abs() <= 1e-12 * g);
    }

    #[test]
    fn optimal_c_beats_a_grid(gamma in 0.1f64..10.0, lambda in 0.1f64..10.0, m in 0.0f64..20.0) {
        let c = optimal_constant_c(gamma, lambda, m).unwrap();
        let best = constant_objective(c, gamma, lambda, m);
        let hi = 2.0 * c.abs() + 10.0;
        for k in 0..=2000 {
            let t = -hi + 2.0 * hi * k as f64 / 2000.0;
            prop_assert!(best <= constant_objective(t, gamma, lambda, m) + 1e-12 * (1.0 + best.abs()));
        }
    }
}

#[test]
fn critic_steps_decrease_their_own_loss() {
    let config = TrainConfig {
        critic_hidden: vec![32, 32],
        generator_hidden: vec![32, 32],
        latent_dim: 4,
        batch_size: 32,
        total_iterations: 1000,
        monitor_every: 0,
        heuristic_samples: 256,
        seed: 11,
        ..TrainConfig::default()
    };
    let mut t = Trainer::new(config).unwrap();
    for _ in 0..20 {
        t.critic_step().unwrap();
    }
    let trials = 40;
    let mut decreased = 0;
    for _ in 0..trials {
        let b = t.sample_critic_batch().unwrap();
        let before = t.critic_step_on(&b).unwrap().loss;
        let after = t.evaluate_critic(&b).unwrap().loss;
        decreased += usize::from(after < before);
    }
    assert!(decreased * 5 >= trials * 4, "{decreased}/{trials}");
}

#[test]
fn generator_gradient_matches_finite_differences() {
    let config = TrainConfig {
        critic_hidden: vec![16],
        generator_hidden: vec![12],
        activation: Activation::Softplus,
        latent_dim: 3,
        total_iterations: 1,
        lambda: Setting::Fixed(1.0),
        gamma: Setting::Fixed(1.3),
        seed: 5,
        ..TrainConfig::default()
    };
    let t = Trainer::new(config).unwrap();
    let critic = t.critic().clone();
    let generator = t.generator().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let z = Tensor::matrix(10, 3, (0..30).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let (_, grads) = generator_loss_and_grad(&critic, &generator, &z, 1.3).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (k, grad) in grads.iter().enumerate() {
        for idx in (0..grad.len()).step_by(3) {
            let mut plus = generator.clone();
            plus.params_mut()[k].data_mut()[idx] += h;
            let mut minus = generator.clone();
            minus.params_mut()[k].data_mut()[idx] -= h;
            let fd = (generator_loss(&critic, &plus, &z, 1.3).unwrap()
                - generator_loss(&critic, &minus, &z, 1.3).unwrap())
                / (2.0 * h);
            let a = grad.data()[idx];
            worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-6));
        }
    }
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn drift_and_terms_add_up() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g = Geometry::flat(4);
    let critic = random_critic(vec![4, 8, 1], Activation::Tanh, &mut rng).unwrap();
    let (real, fake, xhat) = (batch(&mut rng, 5, g), batch(&mut rng, 5, g), batch(&mut rng, 5, g));
    let e = critic_loss_terms(&critic, &real, &fake, &xhat, &SpaceSpec::lp(3.0), 2.0, 0.7, 0.1).unwrap();
    let sum = e.wasserstein_term + 2.0 * e.penalty_mean + e.drift_term;
    assert!((e.loss - sum).abs() < 1e-12, "{} vs {sum}", e.loss);
    let dr = critic.values(&real).unwrap();
    let drift = 0.1 * dr.iter().map(|v| v * v).sum::<f64>() / 5.0;
    assert!((e.drift_term - drift).abs() < 1e-14);
}
