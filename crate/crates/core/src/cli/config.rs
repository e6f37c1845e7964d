//! Strict JSON run configuration.

use std::path::PathBuf;

use serde::Deserialize;

use crate::bwgan::{AdamSettings, PenaltyKind, Setting, TrainConfig};
use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::nn::Activation;
use crate::spaces::{Measure, SpaceSpec, DEFAULT_FREQUENCY_SCALE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Lp,
    Sobolev,
}

/// `space` section. Defaults: `lp`, `p = 2`, `s = 0`, `frequency_scale = 5`,
/// counting measure.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpaceSection {
    pub family: Family,
    pub p: f64,
    pub s: f64,
    pub frequency_scale: f64,
    pub measure: Measure,
}

impl Default for SpaceSection {
    fn default() -> Self {
        SpaceSection {
            family: Family::Lp,
            p: 2.0,
            s: 0.0,
            frequency_scale: DEFAULT_FREQUENCY_SCALE,
            measure: Measure::Counting,
        }
    }
}

impl SpaceSection {
    pub fn to_space(&self) -> Result<SpaceSpec> {
        if !(self.p >= 1.0) {
            return Err(Error::invalid(format!("p must be >= 1, got {}", self.p)));
        }
        Ok(match self.family {
            Family::Lp => {
                if self.s != 0.0 {
                    return Err(Error::invalid("s is only meaningful for the sobolev family"));
                }
                SpaceSpec::Lp {
                    p: self.p,
                    measure: self.measure,
                }
            }
            Family::Sobolev => SpaceSpec::Sobolev {
                p: self.p,
                s: self.s,
                frequency_scale: self.frequency_scale,
                measure: self.measure,
            },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
enum AutoKeyword {
    #[serde(rename = "auto")]
    Auto,
}

/// Either the string `"auto"` or a number.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum AutoOr {
    #[allow(private_interfaces)]
    Auto(AutoKeyword),
    Value(f64),
}

impl From<AutoOr> for Setting {
    fn from(v: AutoOr) -> Self {
        match v {
            AutoOr::Auto(_) => Setting::Auto,
            AutoOr::Value(x) => Setting::Fixed(x),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    EightGaussians,
    SwissRoll,
    Rectangles,
    UniformCube,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub kind: DatasetKind,
    /// Only for `uniform_cube`.
    pub dim: Option<usize>,
}

impl DatasetSection {
    pub fn to_dataset(&self) -> Result<Dataset> {
        match (self.kind, self.dim) {
            (DatasetKind::UniformCube, Some(dim)) => Ok(Dataset::UniformCube { dim }),
            (DatasetKind::UniformCube, None) => Err(Error::invalid("uniform_cube needs dim")),
            (_, Some(_)) => Err(Error::invalid("dim is only valid for uniform_cube")),
            (DatasetKind::EightGaussians, None) => Ok(Dataset::EightGaussians),
            (DatasetKind::SwissRoll, None) => Ok(Dataset::SwissRoll),
            (DatasetKind::Rectangles, None) => Ok(Dataset::Rectangles),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamSection {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub linear_decay: bool,
}

impl Default for AdamSection {
    fn default() -> Self {
        let a = AdamSettings::default();
        AdamSection {
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            linear_decay: a.linear_decay,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltySection {
    Gradient,
    DifferenceQuotient,
}

/// `train` section; absent keys take the [`TrainConfig`] defaults.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lambda: AutoOr,
    pub gamma: AutoOr,
    pub latent_dim: usize,
    pub generator_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub activation: Activation,
    pub n_critic: usize,
    pub batch_size: usize,
    pub total_iterations: usize,
    pub adam: AdamSection,
    pub drift_coefficient: f64,
    pub seed: u64,
    pub dataset: DatasetSection,
    pub penalty: PenaltySection,
    pub monitor_every: usize,
    pub heuristic_samples: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            lambda: AutoOr::Auto(AutoKeyword::Auto),
            gamma: AutoOr::Auto(AutoKeyword::Auto),
            latent_dim: d.latent_dim,
            generator_hidden: d.generator_hidden,
            critic_hidden: d.critic_hidden,
            activation: d.activation,
            n_critic: d.n_critic,
            batch_size: d.batch_size,
            total_iterations: d.total_iterations,
            adam: AdamSection::default(),
            drift_coefficient: d.drift_coefficient,
            seed: d.seed,
            dataset: DatasetSection {
                kind: DatasetKind::EightGaussians,
                dim: None,
            },
            penalty: PenaltySection::Gradient,
            monitor_every: d.monitor_every,
            heuristic_samples: d.heuristic_samples,
        }
    }
}

/// `output` section. Defaults: directory `bwgan-run`, every iteration logged.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub directory: PathBuf,
    pub log_every: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            directory: PathBuf::from("bwgan-run"),
            log_every: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfigFile {
    pub space: SpaceSection,
    pub train: TrainSection,
    pub output: OutputSection,
}

impl RunConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfigFile = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        if cfg.output.log_every == 0 {
            return Err(Error::invalid("output.log_every must be positive"));
        }
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.train;
        let cfg = TrainConfig {
            space: self.space.to_space()?,
            lambda: t.lambda.into(),
            gamma: t.gamma.into(),
            latent_dim: t.latent_dim,
            generator_hidden: t.generator_hidden.clone(),
            critic_hidden: t.critic_hidden.clone(),
            activation: t.activation,
            n_critic: t.n_critic,
            batch_size: t.batch_size,
            total_iterations: t.total_iterations,
            adam: AdamSettings {
                lr: t.adam.lr,
                beta1: t.adam.beta1,
                beta2: t.adam.beta2,
                eps: t.adam.eps,
                linear_decay: t.adam.linear_decay,
            },
            drift_coefficient: t.drift_coefficient,
            seed: t.seed,
            dataset: t.dataset.to_dataset()?,
            penalty: match t.penalty {
                PenaltySection::Gradient => PenaltyKind::Gradient,
                PenaltySection::DifferenceQuotient => PenaltyKind::DifferenceQuotient,
            },
            monitor_every: t.monitor_every,
            heuristic_samples: t.heuristic_samples,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
