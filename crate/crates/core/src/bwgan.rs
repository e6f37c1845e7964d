//! Wasserstein GAN objectives over Banach spaces and the training loop.

use std::sync::Arc;
use std::time::Instant;

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{gradient_of_gradient_functional, Graph, NodeId, Tensor};
use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::lipschitz::diff_quotient_hinge_rows;
use crate::nn::{param_inputs, Activation, Adam, CriticHandle, GeneratorHandle, Mlp};
use crate::spaces::{batch_tensor, diff, Geometry, GridSignal, SpaceSpec};
use crate::transport::{dual_estimate, wasserstein_p_exact, DiscreteMeasure, DualEstimate, SUPPORT_CAP};

/// A hyperparameter that is either fixed or estimated from data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Setting {
    Auto,
    Fixed(f64),
}

/// Which Lipschitz regularizer the critic is trained with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PenaltyKind {
    /// `((‖∂D(X̂)‖_{B*}/γ − 1)²` on interpolates (two-sided).
    #[default]
    Gradient,
    /// `((|D(X)−D(Y)|/(γ d_B(X,Y)) − 1)₊)²` on (real, generated) pairs.
    DifferenceQuotient,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamSettings {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decay the rate linearly to zero over the run.
    pub linear_decay: bool,
}

impl Default for AdamSettings {
    fn default() -> Self {
        AdamSettings {
            lr: 2e-4,
            beta1: 0.0,
            beta2: 0.9,
            eps: 1e-8,
            linear_decay: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub space: SpaceSpec,
    pub lambda: Setting,
    pub gamma: Setting,
    pub latent_dim: usize,
    pub generator_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub activation: Activation,
    pub n_critic: usize,
    pub batch_size: usize,
    pub total_iterations: usize,
    pub adam: AdamSettings,
    pub drift_coefficient: f64,
    pub seed: u64,
    pub dataset: Dataset,
    pub penalty: PenaltyKind,
    /// Exact minibatch W₁ is logged every this many iterations (and on the
    /// last one); 0 disables monitoring.
    pub monitor_every: usize,
    /// Samples drawn when λ or γ is [`Setting::Auto`].
    pub heuristic_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            space: SpaceSpec::l2(),
            lambda: Setting::Auto,
            gamma: Setting::Auto,
            latent_dim: 32,
            generator_hidden: vec![128; 3],
            critic_hidden: vec![128; 3],
            activation: Activation::Relu,
            n_critic: 5,
            batch_size: 64,
            total_iterations: 3000,
            adam: AdamSettings::default(),
            drift_coefficient: 1e-5,
            seed: 0,
            dataset: Dataset::EightGaussians,
            penalty: PenaltyKind::Gradient,
            monitor_every: 50,
            heuristic_samples: 1024,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: usize| {
            if v == 0 {
                Err(Error::invalid(format!("{name} must be positive")))
            } else {
                Ok(())
            }
        };
        positive("latent_dim", self.latent_dim)?;
        positive("n_critic", self.n_critic)?;
        positive("batch_size", self.batch_size)?;
        if self.generator_hidden.contains(&0) || self.critic_hidden.contains(&0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        for (name, s) in [("lambda", self.lambda), ("gamma", self.gamma)] {
            if let Setting::Fixed(v) = s {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::invalid(format!("{name} must be positive, got {v}")));
                }
            }
        }
        if (self.lambda == Setting::Auto || self.gamma == Setting::Auto) && self.heuristic_samples == 0 {
            return Err(Error::invalid("heuristic_samples must be positive"));
        }
        let a = &self.adam;
        if !(a.lr > 0.0 && a.lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", a.lr)));
        }
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2)) {
            return Err(Error::invalid("Adam betas must lie in [0, 1)"));
        }
        if !(a.eps > 0.0) {
            return Err(Error::invalid("Adam eps must be positive"));
        }
        if !(self.drift_coefficient >= 0.0 && self.drift_coefficient.is_finite()) {
            return Err(Error::invalid("drift_coefficient must be >= 0"));
        }
        self.dataset.validate()?;
        self.space.validate(self.dataset.geometry())?;
        if self.space.exponent() <= 1.0 {
            return Err(Error::DualUndefined(self.space.exponent()));
        }
        Ok(())
    }
}

/// Monte-Carlo estimates of `E‖X‖_B` and `E‖X‖_{B*}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeuristicEstimates {
    pub lambda: f64,
    pub gamma: f64,
    pub lambda_stderr: f64,
    pub gamma_stderr: f64,
    pub samples: usize,
}

fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// `λ ≈ E‖X‖_B`.
pub fn heuristic_lambda(sample: &[GridSignal], space: &SpaceSpec) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    let norms = sample.iter().map(|x| space.norm(x)).collect::<Result<Vec<_>>>()?;
    Ok(mean_and_stderr(&norms).0)
}

/// `γ ≈ E‖X‖_{B*}`, the dual norm applied to the same coordinates.
pub fn heuristic_gamma(sample: &[GridSignal], space: &SpaceSpec) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    let norms = sample.iter().map(|x| space.dual_norm(x)).collect::<Result<Vec<_>>>()?;
    Ok(mean_and_stderr(&norms).0)
}

pub fn heuristics(sample: &[GridSignal], space: &SpaceSpec) -> Result<HeuristicEstimates> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    let norms = sample.iter().map(|x| space.norm(x)).collect::<Result<Vec<_>>>()?;
    let duals = sample.iter().map(|x| space.dual_norm(x)).collect::<Result<Vec<_>>>()?;
    let (lambda, lambda_stderr) = mean_and_stderr(&norms);
    let (gamma, gamma_stderr) = mean_and_stderr(&duals);
    Ok(HeuristicEstimates {
        lambda,
        gamma,
        lambda_stderr,
        gamma_stderr,
        samples: sample.len(),
    })
}

/// Minimizer `c = γ(1 + m/(2λ))` of [`constant_objective`].
pub fn optimal_constant_c(gamma: f64, lambda: f64, mean_norm: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
    }
    Ok(gamma * (1.0 + mean_norm / (2.0 * lambda)))
}

/// `−c·m/γ + λ(c − γ)²/γ²`: the critic loss of `D(x) = c‖x‖` on symmetric
/// data with mean norm `m`.
pub fn constant_objective(c: f64, gamma: f64, lambda: f64, mean_norm: f64) -> f64 {
    -c * mean_norm / gamma + lambda * (c - gamma).powi(2) / (gamma * gamma)
}

/// `X̂_k = u_k·real_k + (1 − u_k)·fake_k`.
pub fn interpolate(real: &[GridSignal], fake: &[GridSignal], u: &[f64]) -> Result<Vec<GridSignal>> {
    if real.len() != fake.len() || real.len() != u.len() {
        return Err(Error::shape(
            "interpolate",
            format!("batch sizes {}, {}, {}", real.len(), fake.len(), u.len()),
        ));
    }
    real.iter()
        .zip(fake)
        .zip(u)
        .map(|((r, f), &t)| {
            if r.geometry() != f.geometry() {
                return Err(Error::shape("interpolate", "real and fake geometries differ"));
            }
            Ok(r.combine(t, f, 1.0 - t))
        })
        .collect()
}

/// Terms of the critic objective on one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticEval {
    pub loss: f64,
    /// `(mean D(fake) − mean D(real)) / γ`.
    pub wasserstein_term: f64,
    /// Mean penalty before multiplying by λ.
    pub penalty_mean: f64,
    pub penalty_variance: f64,
    /// Mean `‖∂D(X̂)‖_{B*}` over the interpolates.
    pub grad_dual_norm_mean: f64,
    /// `drift · mean D(real)²`.
    pub drift_term: f64,
}

impl CriticEval {
    fn is_finite(&self) -> bool {
        [
            self.loss,
            self.wasserstein_term,
            self.penalty_mean,
            self.penalty_variance,
            self.grad_dual_norm_mean,
            self.drift_term,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy)]
struct Objective {
    lambda: f64,
    gamma: f64,
    drift: f64,
    penalty: PenaltyKind,
}

/// The critic objective compiled for a fixed batch size. Inputs are
/// `real, fake, xhat` followed by the critic parameters.
struct CriticProgram {
    graph: Graph,
    outputs: [NodeId; 7],
    param_grads: Vec<NodeId>,
}

impl CriticProgram {
    fn build(
        critic: &CriticHandle,
        space: &SpaceSpec,
        geometry: Geometry,
        batch: usize,
        obj: Objective,
    ) -> Result<Self> {
        let n = geometry.len();
        let mut g = Graph::new();
        let real = g.input("real", &[batch, n]);
        let fake = g.input("fake", &[batch, n]);
        let xhat = g.input("xhat", &[batch, n]);
        let params = param_inputs(&mut g, critic.network().as_ref(), "theta");
        let s_real = critic.build_scores(&mut g, real, &params)?;
        let s_fake = critic.build_scores(&mut g, fake, &params)?;
        let s_hat = critic.build_scores(&mut g, xhat, &params)?;

        let m_real = g.mean(s_real);
        let m_fake = g.mean(s_fake);
        let diff_means = g.sub(m_fake, m_real)?;
        let w_term = g.scale(diff_means, 1.0 / obj.gamma);

        let total_hat = g.sum(s_hat);
        let grad_x = g.grad(total_hat, &[xhat])?[0];
        let dual = diff::dual_norm_rows(&mut g, grad_x, space, geometry)?;
        let dual_mean = g.mean(dual);

        let rows = match obj.penalty {
            PenaltyKind::Gradient => {
                let r = g.affine(dual, 1.0 / obj.gamma, -1.0);
                g.square(r)
            }
            PenaltyKind::DifferenceQuotient => {
                let a = g.scale(s_real, 1.0 / obj.gamma);
                let b = g.scale(s_fake, 1.0 / obj.gamma);
                diff_quotient_hinge_rows(&mut g, real, fake, a, b, space, geometry)?
            }
        };
        let pen_mean = g.mean(rows);
        let rows_sq = g.square(rows);
        let pen_sq_mean = g.mean(rows_sq);

        let sq_real = g.square(s_real);
        let drift_mean = g.mean(sq_real);
        let drift = g.scale(drift_mean, obj.drift);

        let pen = g.scale(pen_mean, obj.lambda);
        let partial = g.add(w_term, pen)?;
        let loss = g.add(partial, drift)?;
        let param_grads = g.grad(loss, &params)?;
        Ok(CriticProgram {
            graph: g,
            outputs: [loss, w_term, pen_mean, pen_sq_mean, dual_mean, drift, m_real],
            param_grads,
        })
    }

    fn run(
        &self,
        real: &Tensor,
        fake: &Tensor,
        xhat: &Tensor,
        params: &[Tensor],
        with_grads: bool,
    ) -> Result<(CriticEval, Vec<Tensor>)> {
        let feeds: Vec<&Tensor> = [real, fake, xhat].into_iter().chain(params).collect();
        let mut wanted = self.outputs.to_vec();
        if with_grads {
            wanted.extend(&self.param_grads);
        }
        let mut out = self.graph.eval(&feeds, &wanted)?;
        let grads = out.split_off(self.outputs.len());
        let v: Vec<f64> = out.iter().map(|t| t.item().expect("scalar output")).collect();
        let eval = CriticEval {
            loss: v[0],
            wasserstein_term: v[1],
            penalty_mean: v[2],
            penalty_variance: (v[3] - v[2] * v[2]).max(0.0),
            grad_dual_norm_mean: v[4],
            drift_term: v[5],
        };
        Ok((eval, grads))
    }
}

/// Generator objective `−mean D(G(z)) / γ` compiled for a fixed batch.
/// Inputs are `z`, the generator parameters, then the critic parameters.
struct GeneratorProgram {
    graph: Graph,
    loss: NodeId,
    param_grads: Vec<NodeId>,
}

impl GeneratorProgram {
    fn build(critic: &CriticHandle, generator: &GeneratorHandle, batch: usize, gamma: f64) -> Result<Self> {
        let mut g = Graph::new();
        let z = g.input("z", &[batch, generator.latent_dim()]);
        let gen_params = param_inputs(&mut g, generator.network().as_ref(), "phi");
        let critic_params = param_inputs(&mut g, critic.network().as_ref(), "theta");
        let fake = generator.network().build(&mut g, z, &gen_params)?;
        let scores = critic.build_scores(&mut g, fake, &critic_params)?;
        let m = g.mean(scores);
        let loss = g.scale(m, -1.0 / gamma);
        let param_grads = g.grad(loss, &gen_params)?;
        Ok(GeneratorProgram {
            graph: g,
            loss,
            param_grads,
        })
    }

    fn run(
        &self,
        z: &Tensor,
        generator: &GeneratorHandle,
        critic: &CriticHandle,
        with_grads: bool,
    ) -> Result<(f64, Vec<Tensor>)> {
        let feeds: Vec<&Tensor> = std::iter::once(z)
            .chain(generator.params())
            .chain(critic.params())
            .collect();
        let mut wanted = vec![self.loss];
        if with_grads {
            wanted.extend(&self.param_grads);
        }
        let mut out = self.graph.eval(&feeds, &wanted)?;
        let grads = out.split_off(1);
        Ok((out[0].item().expect("scalar loss"), grads))
    }
}

fn critic_batches(real: &[GridSignal], fake: &[GridSignal], xhat: &[GridSignal]) -> Result<(Geometry, [Tensor; 3])> {
    let b = real.len();
    if b == 0 {
        return Err(Error::EmptySample);
    }
    if fake.len() != b || xhat.len() != b {
        return Err(Error::shape(
            "critic batch",
            format!("batch sizes {b}, {}, {}", fake.len(), xhat.len()),
        ));
    }
    let geometry = real[0].geometry();
    Ok((
        geometry,
        [batch_tensor(real)?, batch_tensor(fake)?, batch_tensor(xhat)?],
    ))
}

/// All terms of the critic objective on one batch.
#[allow(clippy::too_many_arguments)]
pub fn critic_loss_terms(
    critic: &CriticHandle,
    real: &[GridSignal],
    fake: &[GridSignal],
    xhat: &[GridSignal],
    space: &SpaceSpec,
    lambda: f64,
    gamma: f64,
    drift_coefficient: f64,
) -> Result<CriticEval> {
    Ok(critic_loss_and_grad(critic, real, fake, xhat, space, lambda, gamma, drift_coefficient)?.0)
}

/// `(mean D(fake) − mean D(real))/γ + λ·mean((‖∂D(X̂)‖_{B*}/γ − 1)²) + drift·mean D(real)²`.
#[allow(clippy::too_many_arguments)]
pub fn critic_loss(
    critic: &CriticHandle,
    real: &[GridSignal],
    fake: &[GridSignal],
    xhat: &[GridSignal],
    space: &SpaceSpec,
    lambda: f64,
    gamma: f64,
    drift_coefficient: f64,
) -> Result<f64> {
    Ok(critic_loss_terms(critic, real, fake, xhat, space, lambda, gamma, drift_coefficient)?.loss)
}

/// Critic loss terms and the gradient of the loss with respect to every
/// critic parameter (double backpropagation through the penalty).
#[allow(clippy::too_many_arguments)]
pub fn critic_loss_and_grad(
    critic: &CriticHandle,
    real: &[GridSignal],
    fake: &[GridSignal],
    xhat: &[GridSignal],
    space: &SpaceSpec,
    lambda: f64,
    gamma: f64,
    drift_coefficient: f64,
) -> Result<(CriticEval, Vec<Tensor>)> {
    if !(gamma > 0.0 && lambda > 0.0) {
        return Err(Error::invalid("lambda and gamma must be positive"));
    }
    let (geometry, [r, f, x]) = critic_batches(real, fake, xhat)?;
    let obj = Objective {
        lambda,
        gamma,
        drift: drift_coefficient,
        penalty: PenaltyKind::Gradient,
    };
    let prog = CriticProgram::build(critic, space, geometry, real.len(), obj)?;
    prog.run(&r, &f, &x, critic.params(), true)
}

/// `mean((‖∂D(X̂)‖_{B*}/γ − 1)²)` alone, with its gradient with respect to the
/// critic parameters.
pub fn gradient_penalty_and_grad(
    critic: &CriticHandle,
    xhat: &[GridSignal],
    space: &SpaceSpec,
    gamma: f64,
) -> Result<(f64, Vec<Tensor>)> {
    if !(gamma > 0.0) {
        return Err(Error::invalid("gamma must be positive"));
    }
    let first = xhat.first().ok_or(Error::EmptySample)?;
    let geometry = first.geometry();
    let batch = batch_tensor(xhat)?;
    let mut g = Graph::new();
    let x = g.input("xhat", batch.shape());
    let params = param_inputs(&mut g, critic.network().as_ref(), "theta");
    let scores = critic.build_scores(&mut g, x, &params)?;
    let total = g.sum(scores);
    let mut penalty = None;
    let grads = gradient_of_gradient_functional(&mut g, total, x, &params, |g, gx| {
        let dual = diff::dual_norm_rows(g, gx, space, geometry)?;
        let r = g.affine(dual, 1.0 / gamma, -1.0);
        let sq = g.square(r);
        let m = g.mean(sq);
        penalty = Some(m);
        Ok(m)
    })?;
    let penalty = penalty.expect("functional ran");
    let wanted: Vec<NodeId> = std::iter::once(penalty).chain(grads).collect();
    let feeds: Vec<&Tensor> = std::iter::once(&batch).chain(critic.params()).collect();
    let mut out = g.eval(&feeds, &wanted)?;
    let grads = out.split_off(1);
    Ok((out[0].item().expect("scalar penalty"), grads))
}

/// `−mean D(G(z)) / γ` for the latents given as rows of `latents`.
pub fn generator_loss(critic: &CriticHandle, generator: &GeneratorHandle, latents: &Tensor, gamma: f64) -> Result<f64> {
    Ok(generator_loss_and_grad(critic, generator, latents, gamma)?.0)
}

/// Generator loss and its gradient with respect to the generator parameters.
pub fn generator_loss_and_grad(
    critic: &CriticHandle,
    generator: &GeneratorHandle,
    latents: &Tensor,
    gamma: f64,
) -> Result<(f64, Vec<Tensor>)> {
    if !(gamma > 0.0) {
        return Err(Error::invalid("gamma must be positive"));
    }
    if latents.shape().len() != 2 || latents.cols() != generator.latent_dim() {
        return Err(Error::shape(
            "latents",
            format!(
                "expected [batch, {}], got {:?}",
                generator.latent_dim(),
                latents.shape()
            ),
        ));
    }
    let prog = GeneratorProgram::build(critic, generator, latents.rows(), gamma)?;
    prog.run(latents, generator, critic, true)
}

/// One logged generator iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecord {
    pub iter: usize,
    /// Critic loss averaged over the iteration's critic steps.
    pub critic_loss: f64,
    pub gen_loss: f64,
    pub penalty_mean: f64,
    pub penalty_variance: f64,
    pub grad_dual_norm_mean: f64,
    pub drift_term: f64,
    /// Exact W₁ between 64-point generated and data minibatches, measured
    /// before this iteration's updates.
    pub exact_w1: Option<f64>,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainMetrics {
    pub records: Vec<TrainRecord>,
    /// Seconds since the start of training, one entry per record.
    pub wall_time: Vec<f64>,
    pub lambda: f64,
    pub gamma: f64,
    /// Present when λ or γ was estimated.
    pub heuristics: Option<HeuristicEstimates>,
}

impl TrainMetrics {
    /// Records with a W₁ measurement, as `(iteration, w1)`.
    pub fn w1_series(&self) -> Vec<(usize, f64)> {
        self.records
            .iter()
            .filter_map(|r| r.exact_w1.map(|w| (r.iter, w)))
            .collect()
    }
}

#[derive(Debug)]
pub struct TrainOutput {
    pub generator: GeneratorHandle,
    pub critic: CriticHandle,
    pub metrics: TrainMetrics,
}

/// Step-by-step training state; [`train`] drives it to completion.
pub struct Trainer {
    config: TrainConfig,
    generator: GeneratorHandle,
    critic: CriticHandle,
    critic_opt: Adam,
    gen_opt: Adam,
    rng: ChaCha8Rng,
    monitor_rng: ChaCha8Rng,
    critic_prog: CriticProgram,
    gen_prog: GeneratorProgram,
    iteration: usize,
    metrics: TrainMetrics,
    started: Instant,
}

/// A critic minibatch.
#[derive(Debug, Clone)]
pub struct CriticBatch {
    pub real: Vec<GridSignal>,
    pub fake: Vec<GridSignal>,
    pub xhat: Vec<GridSignal>,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let geometry = config.dataset.geometry();
        let seeded = |stream: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(config.seed);
            r.set_stream(stream);
            r
        };
        let mut rng = seeded(0);
        let monitor_rng = seeded(1);

        let heuristics = if config.lambda == Setting::Auto || config.gamma == Setting::Auto {
            let sample = config.dataset.sample(config.heuristic_samples, &mut seeded(2));
            Some(heuristics(&sample, &config.space)?)
        } else {
            None
        };
        let resolve = |s: Setting, auto: fn(&HeuristicEstimates) -> f64, name: &str| match s {
            Setting::Fixed(v) => Ok(v),
            Setting::Auto => {
                let v = auto(heuristics.as_ref().expect("estimated"));
                if v > 0.0 && v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::invalid(format!(
                        "heuristic {name} is {v}; dataset is degenerate"
                    )))
                }
            }
        };
        let lambda = resolve(config.lambda, |h| h.lambda, "lambda")?;
        let gamma = resolve(config.gamma, |h| h.gamma, "gamma")?;

        let n = geometry.len();
        let gen_sizes: Vec<usize> = std::iter::once(config.latent_dim)
            .chain(config.generator_hidden.iter().copied())
            .chain(std::iter::once(n))
            .collect();
        let critic_sizes: Vec<usize> = std::iter::once(n)
            .chain(config.critic_hidden.iter().copied())
            .chain(std::iter::once(1))
            .collect();
        let gen_net = Mlp::new(gen_sizes, config.activation)?;
        let critic_net = Mlp::new(critic_sizes, config.activation)?;
        let gen_params = gen_net.init(&mut rng);
        let critic_params = critic_net.init(&mut rng);
        let generator = GeneratorHandle::new(Arc::new(gen_net), gen_params, geometry)?;
        let critic = CriticHandle::new(Arc::new(critic_net), critic_params)?;

        let a = &config.adam;
        let critic_opt = Adam::new(critic.params(), a.beta1, a.beta2, a.eps);
        let gen_opt = Adam::new(generator.params(), a.beta1, a.beta2, a.eps);
        let obj = Objective {
            lambda,
            gamma,
            drift: config.drift_coefficient,
            penalty: config.penalty,
        };
        let critic_prog = CriticProgram::build(&critic, &config.space, geometry, config.batch_size, obj)?;
        let gen_prog = GeneratorProgram::build(&critic, &generator, config.batch_size, gamma)?;
        Ok(Trainer {
            generator,
            critic,
            critic_opt,
            gen_opt,
            rng,
            monitor_rng,
            critic_prog,
            gen_prog,
            iteration: 0,
            metrics: TrainMetrics {
                lambda,
                gamma,
                heuristics,
                ..Default::default()
            },
            started: Instant::now(),
            config,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn lambda(&self) -> f64 {
        self.metrics.lambda
    }

    pub fn gamma(&self) -> f64 {
        self.metrics.gamma
    }

    pub fn generator(&self) -> &GeneratorHandle {
        &self.generator
    }

    pub fn critic(&self) -> &CriticHandle {
        &self.critic
    }

    pub fn metrics(&self) -> &TrainMetrics {
        &self.metrics
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn is_finished(&self) -> bool {
        self.iteration >= self.config.total_iterations
    }

    /// Learning rate used during generator iteration `iter`.
    pub fn learning_rate(&self, iter: usize) -> f64 {
        let a = &self.config.adam;
        if a.linear_decay && self.config.total_iterations > 0 {
            a.lr * (1.0 - iter as f64 / self.config.total_iterations as f64)
        } else {
            a.lr
        }
    }

    fn latents(rng: &mut ChaCha8Rng, batch: usize, dim: usize) -> Tensor {
        let data = (0..batch * dim).map(|_| StandardNormal.sample(rng)).collect();
        Tensor::matrix(batch, dim, data).expect("latent shape")
    }

    /// Fresh real, generated and interpolated batches from the training
    /// stream.
    pub fn sample_critic_batch(&mut self) -> Result<CriticBatch> {
        let b = self.config.batch_size;
        let real = self.config.dataset.sample(b, &mut self.rng);
        let z = Self::latents(&mut self.rng, b, self.config.latent_dim);
        let fake = self.generator.generate(&z)?;
        let u: Vec<f64> = (0..b).map(|_| self.rng.random::<f64>()).collect();
        let xhat = interpolate(&real, &fake, &u)?;
        Ok(CriticBatch { real, fake, xhat })
    }

    fn run_critic(&self, batch: &CriticBatch, with_grads: bool) -> Result<(CriticEval, Vec<Tensor>)> {
        let (_, [r, f, x]) = critic_batches(&batch.real, &batch.fake, &batch.xhat)?;
        self.critic_prog.run(&r, &f, &x, self.critic.params(), with_grads)
    }

    /// Critic objective on `batch` at the current parameters.
    pub fn evaluate_critic(&self, batch: &CriticBatch) -> Result<CriticEval> {
        Ok(self.run_critic(batch, false)?.0)
    }

    /// One Adam step of the critic on `batch`; returns the terms evaluated
    /// before the update.
    pub fn critic_step_on(&mut self, batch: &CriticBatch) -> Result<CriticEval> {
        let (eval, grads) = self.run_critic(batch, true)?;
        if !eval.is_finite() {
            return Ok(eval);
        }
        let lr = self.learning_rate(self.iteration);
        self.critic_opt.step(self.critic.params_mut(), &grads, lr);
        Ok(eval)
    }

    pub fn critic_step(&mut self) -> Result<CriticEval> {
        let batch = self.sample_critic_batch()?;
        self.critic_step_on(&batch)
    }

    /// One Adam step of the generator; returns the loss before the update.
    pub fn generator_step(&mut self) -> Result<f64> {
        let z = Self::latents(&mut self.rng, self.config.batch_size, self.config.latent_dim);
        let (loss, grads) = self.gen_prog.run(&z, &self.generator, &self.critic, true)?;
        if loss.is_finite() {
            let lr = self.learning_rate(self.iteration);
            self.gen_opt.step(self.generator.params_mut(), &grads, lr);
        }
        Ok(loss)
    }

    /// Exact W₁ between fresh 64-point data and generated minibatches, drawn
    /// from a stream separate from training.
    pub fn monitor_w1(&mut self) -> Result<f64> {
        let k = SUPPORT_CAP;
        let real = self.config.dataset.sample(k, &mut self.monitor_rng);
        let z = Self::latents(&mut self.monitor_rng, k, self.config.latent_dim);
        let fake = self.generator.generate(&z)?;
        let mu = DiscreteMeasure::uniform(real)?;
        let nu = DiscreteMeasure::uniform(fake)?;
        Ok(wasserstein_p_exact(&mu, &nu, &self.config.space, 1.0)?.distance)
    }

    fn monitors(&self, iter: usize) -> bool {
        let every = self.config.monitor_every;
        every > 0 && (iter.is_multiple_of(every) || iter + 1 == self.config.total_iterations)
    }

    /// Runs one generator iteration with its critic steps and logs it.
    pub fn step(&mut self) -> Result<&TrainRecord> {
        let iter = self.iteration;
        let exact_w1 = if self.monitors(iter) {
            Some(self.monitor_w1()?)
        } else {
            None
        };
        let k = self.config.n_critic as f64;
        let mut acc = [0.0; 5];
        for _ in 0..self.config.n_critic {
            let e = self.critic_step()?;
            for (a, v) in acc.iter_mut().zip([
                e.loss,
                e.penalty_mean,
                e.penalty_variance,
                e.grad_dual_norm_mean,
                e.drift_term,
            ]) {
                *a += v / k;
            }
        }
        let gen_loss = self.generator_step()?;
        let record = TrainRecord {
            iter,
            critic_loss: acc[0],
            gen_loss,
            penalty_mean: acc[1],
            penalty_variance: acc[2],
            grad_dual_norm_mean: acc[3],
            drift_term: acc[4],
            exact_w1,
            lr: self.learning_rate(iter),
        };
        let finite = [
            record.critic_loss,
            record.gen_loss,
            record.penalty_mean,
            record.grad_dual_norm_mean,
            record.drift_term,
        ]
        .iter()
        .all(|v| v.is_finite());
        self.metrics.records.push(record);
        self.metrics.wall_time.push(self.started.elapsed().as_secs_f64());
        self.iteration += 1;
        if !finite {
            return Err(Error::Divergence {
                iteration: iter,
                metrics: Box::new(self.metrics.clone()),
            });
        }
        Ok(self.metrics.records.last().expect("just pushed"))
    }

    pub fn finish(self) -> TrainOutput {
        TrainOutput {
            generator: self.generator,
            critic: self.critic,
            metrics: self.metrics,
        }
    }
}

/// Trains a generator and critic for `config.total_iterations` iterations.
pub fn train(config: TrainConfig) -> Result<TrainOutput> {
    let mut trainer = Trainer::new(config)?;
    while !trainer.is_finished() {
        trainer.step()?;
    }
    Ok(trainer.finish())
}

/// Settings for fitting a critic between two fixed discrete measures.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticFitConfig {
    pub space: SpaceSpec,
    pub gamma: f64,
    pub lambda: Setting,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub steps: usize,
    pub batch_size: usize,
    pub adam: AdamSettings,
    pub drift_coefficient: f64,
    pub seed: u64,
}

impl Default for CriticFitConfig {
    fn default() -> Self {
        CriticFitConfig {
            space: SpaceSpec::l2(),
            gamma: 1.0,
            lambda: Setting::Auto,
            hidden: vec![128; 3],
            activation: Activation::Relu,
            steps: 2000,
            batch_size: 64,
            adam: AdamSettings::default(),
            drift_coefficient: 1e-5,
            seed: 0,
        }
    }
}

#[derive(Debug)]
pub struct CriticFit {
    pub critic: CriticHandle,
    pub lambda: f64,
    /// `(E_real D − E_fake D) / γ` on the full supports.
    pub estimate: f64,
    /// The same critic rescaled by its Lipschitz constant on the supports.
    pub dual: DualEstimate,
}

/// Trains only a critic with `real = mu`, `fake = nu`. The resulting
/// estimate approximates `W₁(mu, nu)` from below when the critic is
/// `γ`-Lipschitz.
pub fn fit_critic(mu: &DiscreteMeasure, nu: &DiscreteMeasure, config: &CriticFitConfig) -> Result<CriticFit> {
    if mu.is_empty() || nu.is_empty() {
        return Err(Error::EmptySample);
    }
    let geometry = mu.points()[0].geometry();
    let lambda = match config.lambda {
        Setting::Fixed(v) => v,
        Setting::Auto => {
            let norms = mu
                .points()
                .iter()
                .map(|x| config.space.norm(x))
                .collect::<Result<Vec<_>>>()?;
            mu.expect(&norms)
        }
    };
    if !(lambda > 0.0 && config.gamma > 0.0) {
        return Err(Error::invalid("lambda and gamma must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let sizes: Vec<usize> = std::iter::once(geometry.len())
        .chain(config.hidden.iter().copied())
        .chain(std::iter::once(1))
        .collect();
    let net = Mlp::new(sizes, config.activation)?;
    let params = net.init(&mut rng);
    let mut critic = CriticHandle::new(Arc::new(net), params)?;
    let a = &config.adam;
    let mut opt = Adam::new(critic.params(), a.beta1, a.beta2, a.eps);
    let obj = Objective {
        lambda,
        gamma: config.gamma,
        drift: config.drift_coefficient,
        penalty: PenaltyKind::Gradient,
    };
    let prog = CriticProgram::build(&critic, &config.space, geometry, config.batch_size, obj)?;
    let pick_mu = WeightedIndex::new(mu.weights()).map_err(|e| Error::invalid(e.to_string()))?;
    let pick_nu = WeightedIndex::new(nu.weights()).map_err(|e| Error::invalid(e.to_string()))?;
    for step in 0..config.steps {
        let b = config.batch_size;
        let real: Vec<GridSignal> = (0..b).map(|_| mu.points()[pick_mu.sample(&mut rng)].clone()).collect();
        let fake: Vec<GridSignal> = (0..b).map(|_| nu.points()[pick_nu.sample(&mut rng)].clone()).collect();
        let u: Vec<f64> = (0..b).map(|_| rng.random::<f64>()).collect();
        let xhat = interpolate(&real, &fake, &u)?;
        let (_, [r, f, x]) = critic_batches(&real, &fake, &xhat)?;
        let (eval, grads) = prog.run(&r, &f, &x, critic.params(), true)?;
        if !eval.is_finite() {
            return Err(Error::invalid(format!("critic fit diverged at step {step}")));
        }
        let lr = if a.linear_decay {
            a.lr * (1.0 - step as f64 / config.steps as f64)
        } else {
            a.lr
        };
        opt.step(critic.params_mut(), &grads, lr);
    }
    let dual = dual_estimate(&critic, mu, nu, &config.space)?;
    Ok(CriticFit {
        estimate: dual.mean_difference / config.gamma,
        dual,
        critic,
        lambda,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{ConstantField, LinearFunctional};

    fn small_config() -> TrainConfig {
        TrainConfig {
            latent_dim: 4,
            generator_hidden: vec![16],
            critic_hidden: vec![16],
            batch_size: 16,
            total_iterations: 6,
            monitor_every: 3,
            heuristic_samples: 128,
            ..Default::default()
        }
    }

    #[test]
    fn optimal_c_examples() {
        assert_eq!(optimal_constant_c(2.0, 5.0, 0.0).unwrap(), 2.0);
        assert_eq!(optimal_constant_c(2.0, 5.0, 5.0).unwrap(), 3.0);
        assert_eq!(optimal_constant_c(2.0, 5.0, 10.0).unwrap(), 4.0);
        assert!(optimal_constant_c(1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn interpolation_endpoints() {
        let real = vec![GridSignal::flat(vec![1.0, 2.0])];
        let fake = vec![GridSignal::flat(vec![-1.0, -2.0])];
        assert_eq!(interpolate(&real, &fake, &[1.0]).unwrap(), real);
        assert_eq!(interpolate(&real, &fake, &[0.0]).unwrap(), fake);
        assert_eq!(interpolate(&real, &fake, &[0.5]).unwrap()[0].values(), &[0.0, 0.0]);
        assert!(interpolate(&real, &fake, &[0.5, 0.5]).is_err());
    }

    #[test]
    fn zero_critic_loss_is_lambda() {
        let critic = ConstantField::handle(2, 0.0);
        let b = vec![GridSignal::flat(vec![0.3, 0.1]); 3];
        let loss = critic_loss(&critic, &b, &b, &b, &SpaceSpec::l2(), 7.0, 2.0, 1e-5).unwrap();
        assert_eq!(loss, 7.0);
    }

    #[test]
    fn generator_loss_of_linear_critic() {
        let a = vec![1.0, -2.0];
        let critic = LinearFunctional::handle(a);
        // zero weights and bias (1, 1) make G(z) = (1, 1) for every z
        let net = Mlp::new(vec![3, 2], Activation::Relu).unwrap();
        let params = vec![Tensor::zeros(&[3, 2]), Tensor::vector(vec![1.0, 1.0])];
        let generator = GeneratorHandle::new(Arc::new(net), params, Geometry::flat(2)).unwrap();
        let z = Tensor::matrix(2, 3, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let loss = generator_loss(&critic, &generator, &z, 4.0).unwrap();
        assert!((loss - 0.25).abs() < 1e-15);
        let zero = ConstantField::handle(2, 0.0);
        assert_eq!(generator_loss(&zero, &generator, &z, 4.0).unwrap(), 0.0);
    }

    #[test]
    fn training_is_deterministic() {
        let a = train(small_config()).unwrap();
        let b = train(small_config()).unwrap();
        assert_eq!(a.metrics.records, b.metrics.records);
        assert_eq!(a.metrics.records.len(), 6);
        let monitored: Vec<usize> = a.metrics.w1_series().iter().map(|p| p.0).collect();
        assert_eq!(monitored, vec![0, 3, 5]);
    }

    #[test]
    fn zero_iterations_return_initial_networks() {
        let out = train(TrainConfig {
            total_iterations: 0,
            ..small_config()
        })
        .unwrap();
        assert!(out.metrics.records.is_empty());
    }

    #[test]
    fn l2_heuristics_coincide() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let sample = Dataset::UniformCube { dim: 5 }.sample(50, &mut rng);
        let h = heuristics(&sample, &SpaceSpec::l2()).unwrap();
        assert_eq!(h.lambda, h.gamma);
        assert!(heuristic_lambda(&[], &SpaceSpec::l2()).is_err());
    }

    #[test]
    fn rejects_invalid_config() {
        let bad = TrainConfig {
            n_critic: 0,
            ..small_config()
        };
        assert!(Trainer::new(bad).is_err());
        let p1 = TrainConfig {
            space: SpaceSpec::lp(1.0),
            ..small_config()
        };
        assert!(matches!(Trainer::new(p1), Err(Error::DualUndefined(_))));
    }
}
