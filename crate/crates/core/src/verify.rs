//! Self-checking property suites behind `bwgan verify`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Deserialize;

use crate::autodiff::Tensor;
use crate::bwgan::gradient_penalty_and_grad;
use crate::error::{Error, Result};
use crate::lipschitz::{difference_quotient, segment_max_grad_dual_norm, SEGMENT_INTERIOR_POINTS};
use crate::nn::{Activation, CriticHandle, Mlp};
use crate::spaces::{lp_norm, Factor, Geometry, GridSignal, Measure, SpaceSpec, SpectralMultiplier};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Suite {
    Lemma1,
    Holder,
    Sobolev,
    DoubleBackprop,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Lemma1, Suite::Holder, Suite::Sobolev, Suite::DoubleBackprop];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Lemma1 => "lemma1",
            Suite::Holder => "holder",
            Suite::Sobolev => "sobolev",
            Suite::DoubleBackprop => "double-backprop",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|suite| suite.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown suite {s:?}")))
    }
}

/// Sizes and tolerances of the suites. Deserializes from a strict JSON object.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub seed: u64,
    /// Pairs per space in the Lipschitz suite.
    pub lemma1_pairs: usize,
    /// Random dual vectors per space in the Hölder suite.
    pub holder_vectors: usize,
    /// Random directions per dual vector.
    pub holder_directions: usize,
    pub sobolev_signals: usize,
    /// Parameters probed by finite differences.
    pub fd_probes: usize,
    /// Multiplies every analytic dual norm by `1 + perturb_dual_norm`; used
    /// to confirm the Hölder suite detects faults.
    pub perturb_dual_norm: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            seed: 0,
            lemma1_pairs: 40,
            holder_vectors: 10,
            holder_directions: 1000,
            sobolev_signals: 100,
            fd_probes: 40,
            perturb_dual_norm: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub suite: Suite,
    pub passed: usize,
    pub total: usize,
    /// Largest observed violation or error, for display.
    pub worst: f64,
}

impl SuiteReport {
    pub fn ok(&self) -> bool {
        self.total > 0 && self.passed == self.total
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: {}/{} checks passed (worst {:.3e})",
            if self.ok() { "PASS" } else { "FAIL" },
            self.suite,
            self.passed,
            self.total,
            self.worst
        )
    }
}

pub fn run_suite(suite: Suite, config: &VerifyConfig) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    match suite {
        Suite::Lemma1 => lemma1(config, &mut rng),
        Suite::Holder => holder(config, &mut rng),
        Suite::Sobolev => sobolev(config, &mut rng),
        Suite::DoubleBackprop => double_backprop(config, &mut rng),
    }
}

pub fn gaussian_signal<R: Rng>(geometry: Geometry, rng: &mut R) -> GridSignal {
    let v = (0..geometry.len()).map(|_| rng.sample(StandardNormal)).collect();
    GridSignal::new(geometry, v).expect("geometry length")
}

/// Smooth random MLP critic.
pub fn random_critic<R: Rng>(sizes: Vec<usize>, activation: Activation, rng: &mut R) -> Result<CriticHandle> {
    let mlp = Mlp::new(sizes, activation)?;
    let mut params = mlp.init(rng);
    // nonzero biases so activations are not centred at the origin
    for t in params.iter_mut().skip(1).step_by(2) {
        for v in t.data_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
    }
    CriticHandle::new(Arc::new(mlp), params)
}

/// The seven spaces exercised by the Lipschitz checks on an 8×8 grid.
pub fn lipschitz_spaces(geometry: Geometry) -> Result<Vec<SpaceSpec>> {
    let n = geometry.len();
    let half = Geometry::new(1, geometry.height / 2, geometry.width)?;
    Ok(vec![
        SpaceSpec::lp(1.3),
        SpaceSpec::l2(),
        SpaceSpec::lp(10.0),
        SpaceSpec::sobolev(-1.0, 2.0),
        SpaceSpec::sobolev(1.0, 2.0),
        SpaceSpec::weighted(SpaceSpec::lp(3.0), (0..n).map(|i| 0.5 + (i % 7) as f64 / 4.0).collect())?,
        SpaceSpec::product(
            2.0,
            vec![
                Factor {
                    space: SpaceSpec::lp(1.5),
                    geometry: half,
                },
                Factor {
                    space: SpaceSpec::sobolev(0.5, 3.0),
                    geometry: half,
                },
            ],
        )?,
    ])
}

fn lemma1(config: &VerifyConfig, rng: &mut ChaCha8Rng) -> Result<SuiteReport> {
    let geometry = Geometry::new(1, 8, 8)?;
    let mut report = SuiteReport {
        suite: Suite::Lemma1,
        passed: 0,
        total: 0,
        worst: 0.0,
    };
    for space in lipschitz_spaces(geometry)? {
        let critic = random_critic(vec![geometry.len(), 32, 1], Activation::Tanh, rng)?;
        for _ in 0..config.lemma1_pairs {
            let x = gaussian_signal(geometry, rng);
            let scale = rng.random_range(0.05..1.0);
            let y = x.add(&gaussian_signal(geometry, rng).scaled(scale));
            let q = difference_quotient(&critic, &space, &x, &y)?;
            let g = segment_max_grad_dual_norm(&critic, &space, &x, &y, SEGMENT_INTERIOR_POINTS)?;
            report.total += 1;
            report.worst = report.worst.max(q - g);
            if q <= g + 1e-6 {
                report.passed += 1;
            }
        }
    }
    Ok(report)
}

fn holder_spaces() -> Result<(Geometry, Vec<SpaceSpec>)> {
    let geometry = Geometry::new(1, 4, 4)?;
    Ok((
        geometry,
        vec![
            SpaceSpec::lp(1.5),
            SpaceSpec::l2(),
            SpaceSpec::lp(4.0).with_measure(Measure::Normalized),
            SpaceSpec::sobolev(1.0, 2.0),
            SpaceSpec::sobolev(-0.5, 3.0),
        ],
    ))
}

fn holder(config: &VerifyConfig, rng: &mut ChaCha8Rng) -> Result<SuiteReport> {
    let (geometry, spaces) = holder_spaces()?;
    let mut report = SuiteReport {
        suite: Suite::Holder,
        passed: 0,
        total: 0,
        worst: 0.0,
    };
    for space in &spaces {
        for _ in 0..config.holder_vectors {
            let g = gaussian_signal(geometry, rng);
            let dual = space.dual_norm(&g)? * (1.0 + config.perturb_dual_norm);
            // every direction is a lower bound on the supremum
            let mut sup = 0.0f64;
            for _ in 0..config.holder_directions {
                let h = gaussian_signal(geometry, rng);
                sup = sup.max(g.dot(&h) / space.norm(&h)?);
            }
            report.total += 1;
            report.worst = report.worst.max((sup - dual) / dual);
            if sup <= dual * (1.0 + 1e-12) {
                report.passed += 1;
            }
            // the maximizer attains it
            let x = space.dual_maximizer(&g)?;
            let attained = g.dot(&x) / space.norm(&x)?;
            let err = (attained - dual).abs() / dual;
            report.total += 1;
            report.worst = report.worst.max(err);
            if err <= 1e-10 {
                report.passed += 1;
            }
        }
    }
    Ok(report)
}

fn sobolev(config: &VerifyConfig, rng: &mut ChaCha8Rng) -> Result<SuiteReport> {
    let geometry = Geometry::new(1, 16, 16)?;
    let mut report = SuiteReport {
        suite: Suite::Sobolev,
        passed: 0,
        total: 0,
        worst: 0.0,
    };
    let identity = SpectralMultiplier::new(geometry, 0.0, crate::spaces::DEFAULT_FREQUENCY_SCALE)?;
    for _ in 0..config.sobolev_signals {
        let x = gaussian_signal(geometry, rng);
        for p in [1.3, 2.0, 4.0] {
            let lp = lp_norm(x.values(), p, Measure::Counting)?;
            let direct = SpaceSpec::sobolev(0.0, p).norm(&x)?;
            let (y, _) = identity.apply_via_fft(x.values());
            let via_fft = lp_norm(&y, p, Measure::Counting)?;
            let err = ((direct - lp).abs()).max((via_fft - lp).abs()) / lp;
            report.total += 1;
            report.worst = report.worst.max(err);
            if err < 1e-8 {
                report.passed += 1;
            }
        }
    }
    Ok(report)
}

fn double_backprop(config: &VerifyConfig, rng: &mut ChaCha8Rng) -> Result<SuiteReport> {
    let geometry = Geometry::flat(16);
    let space = SpaceSpec::lp(3.0);
    let critic = random_critic(vec![16, 12, 1], Activation::Softplus, rng)?;
    let xhat: Vec<GridSignal> = (0..8).map(|_| gaussian_signal(geometry, rng)).collect();
    let gamma = 1.0;
    let (_, grads) = gradient_penalty_and_grad(&critic, &xhat, &space, gamma)?;
    let mut report = SuiteReport {
        suite: Suite::DoubleBackprop,
        passed: 0,
        total: 0,
        worst: 0.0,
    };
    let sizes: Vec<usize> = critic.params().iter().map(Tensor::len).collect();
    let total: usize = sizes.iter().sum();
    for _ in 0..config.fd_probes {
        let flat = rng.random_range(0..total);
        let (mut k, mut i) = (0, flat);
        while i >= sizes[k] {
            i -= sizes[k];
            k += 1;
        }
        let h = 1e-5;
        let mut plus = critic.clone();
        plus.params_mut()[k].data_mut()[i] += h;
        let mut minus = critic.clone();
        minus.params_mut()[k].data_mut()[i] -= h;
        let fp = gradient_penalty_and_grad(&plus, &xhat, &space, gamma)?.0;
        let fm = gradient_penalty_and_grad(&minus, &xhat, &space, gamma)?.0;
        let fd = (fp - fm) / (2.0 * h);
        let an = grads[k].data()[i];
        let err = (an - fd).abs() / fd.abs().max(1e-3);
        report.total += 1;
        report.worst = report.worst.max(err);
        if err < 1e-4 {
            report.passed += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> VerifyConfig {
        VerifyConfig {
            lemma1_pairs: 3,
            holder_vectors: 2,
            holder_directions: 200,
            sobolev_signals: 5,
            fd_probes: 10,
            ..Default::default()
        }
    }

    #[test]
    fn all_suites_pass_by_default() {
        for suite in Suite::ALL {
            let r = run_suite(suite, &quick()).unwrap();
            assert!(r.ok(), "{r}");
        }
    }

    #[test]
    fn perturbed_dual_norm_fails_holder() {
        let cfg = VerifyConfig {
            perturb_dual_norm: 0.01,
            ..quick()
        };
        assert!(!run_suite(Suite::Holder, &cfg).unwrap().ok());
    }

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
        assert!("nope".parse::<Suite>().is_err());
    }
}
