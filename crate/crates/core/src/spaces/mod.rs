//! Norms on discretized Banach spaces and their dual norms.
//!
//! Four families are supported: `L^p`, Sobolev `W^{s,p}` (through a Fourier
//! multiplier), diagonally weighted spaces and finite products. Every family
//! with `1 < p < ∞` has a closed-form dual, exposed as [`SpaceSpec::dual_space`];
//! [`SpaceSpec::dual_norm`] evaluates it on the coordinates of a gradient.
//!
//! The pairing between a space and its dual is always the plain coordinate
//! dot product. Under the normalized measure (`dt = 1/N`) this moves a
//! factor `N^{1/p}` into the dual norm, which is carried by
//! [`Measure::Conjugate`] (`dt = N^{p-1}` for the dual exponent).

pub mod diff;
mod spectral;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use spectral::{axis_frequency, sobolev_multiplier, SpectralMultiplier, DEFAULT_FREQUENCY_SCALE};

use crate::autodiff::{pow_abs, sign_pow, Tensor};
use crate::error::{Error, Result};

/// Channel × height × width layout of one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Geometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Geometry {
    pub fn new(channels: usize, height: usize, width: usize) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::invalid(format!(
                "geometry dimensions must be positive, got {channels}x{height}x{width}"
            )));
        }
        Ok(Geometry {
            channels,
            height,
            width,
        })
    }

    /// A flat vector of `n` entries (`1 × 1 × n`).
    pub fn flat(n: usize) -> Self {
        Geometry {
            channels: 1,
            height: 1,
            width: n,
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Geometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// One sample `x ∈ B` in pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSignal {
    geometry: Geometry,
    values: Vec<f64>,
}

impl GridSignal {
    pub fn new(geometry: Geometry, values: Vec<f64>) -> Result<Self> {
        if values.len() != geometry.len() {
            return Err(Error::shape(
                "signal",
                format!("{} values do not fill geometry {geometry}", values.len()),
            ));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("signal entry {i} is not finite")));
        }
        Ok(GridSignal { geometry, values })
    }

    pub fn flat(values: Vec<f64>) -> Self {
        GridSignal {
            geometry: Geometry::flat(values.len()),
            values,
        }
    }

    pub fn zeros(geometry: Geometry) -> Self {
        GridSignal {
            geometry,
            values: vec![0.0; geometry.len()],
        }
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dot(&self, other: &GridSignal) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    pub fn scaled(&self, alpha: f64) -> GridSignal {
        self.map(|v| alpha * v)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridSignal {
        GridSignal {
            geometry: self.geometry,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `alpha · self + beta · other`.
    pub fn combine(&self, alpha: f64, other: &GridSignal, beta: f64) -> GridSignal {
        debug_assert_eq!(self.len(), other.len());
        GridSignal {
            geometry: self.geometry,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| alpha * a + beta * b)
                .collect(),
        }
    }

    pub fn sub(&self, other: &GridSignal) -> GridSignal {
        self.combine(1.0, other, -1.0)
    }

    pub fn add(&self, other: &GridSignal) -> GridSignal {
        self.combine(1.0, other, 1.0)
    }
}

/// Stacks signals as the rows of a `[batch, len]` tensor.
pub fn batch_tensor(signals: &[GridSignal]) -> Result<Tensor> {
    let rows: Vec<&[f64]> = signals.iter().map(GridSignal::values).collect();
    Tensor::from_rows(&rows)
}

/// Splits the rows of a `[batch, len]` tensor into signals.
pub fn signals_from_tensor(t: &Tensor, geometry: Geometry) -> Result<Vec<GridSignal>> {
    if t.cols() != geometry.len() {
        return Err(Error::shape(
            "batch",
            format!("rows of {} entries for geometry {geometry}", t.cols()),
        ));
    }
    Ok((0..t.rows())
        .map(|i| GridSignal {
            geometry,
            values: t.row(i).to_vec(),
        })
        .collect())
}

/// Discretization measure: the mass `dt` each entry carries in `∫ |x|^p dt`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    /// `dt = 1`.
    #[default]
    Counting,
    /// `dt = 1/N`.
    Normalized,
    /// `dt = N^{p-1}`; the measure under which the dual of a normalized
    /// `L^p` norm is again an `L^q` norm.
    Conjugate,
}

impl Measure {
    /// `dt^{1/p}` for `N` entries.
    pub fn norm_factor(self, n: usize, p: f64) -> f64 {
        match self {
            Measure::Counting => 1.0,
            Measure::Normalized => (n as f64).powf(-1.0 / p),
            Measure::Conjugate => (n as f64).powf(1.0 - 1.0 / p),
        }
    }

    pub fn dual(self) -> Measure {
        match self {
            Measure::Counting => Measure::Counting,
            Measure::Normalized => Measure::Conjugate,
            Measure::Conjugate => Measure::Normalized,
        }
    }
}

/// Hölder conjugate `q` with `1/p + 1/q = 1`.
pub fn dual_exponent(p: f64) -> Result<f64> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::DualUndefined(p));
    }
    Ok(p / (p - 1.0))
}

/// `(dt Σ |x_i|^p)^{1/p}`, or `max |x_i|` for `p = ∞`.
pub fn lp_norm(values: &[f64], p: f64, measure: Measure) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::invalid(format!("L^p needs p >= 1, got {p}")));
    }
    let max = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if p == f64::INFINITY {
        return Ok(max);
    }
    let factor = measure.norm_factor(values.len(), p);
    let raw = if p == 1.0 {
        values.iter().map(|v| v.abs()).sum()
    } else if p == 2.0 {
        values.iter().map(|v| v * v).sum::<f64>().sqrt()
    } else if max == 0.0 {
        0.0
    } else {
        // rescaled so |x|^p neither overflows nor underflows for large p
        let s: f64 = values.iter().map(|v| pow_abs(v / max, p)).sum();
        max * s.powf(1.0 / p)
    };
    Ok(raw * factor)
}

/// One block of a product space.
#[derive(Debug, Clone, PartialEq)]
pub struct Factor {
    pub space: SpaceSpec,
    pub geometry: Geometry,
}

/// Descriptor of a finite-dimensional Banach space.
#[derive(Debug, Clone, PartialEq)]
pub enum SpaceSpec {
    Lp {
        p: f64,
        measure: Measure,
    },
    Sobolev {
        p: f64,
        s: f64,
        frequency_scale: f64,
        measure: Measure,
    },
    /// `‖x‖ = ‖w ⊙ x‖_base` with a diagonal, invertible weight.
    Weighted {
        base: Box<SpaceSpec>,
        weights: Vec<f64>,
    },
    /// `(Σ ‖x_i‖_{B_i}^p)^{1/p}` over consecutive coordinate blocks.
    Product {
        p: f64,
        factors: Vec<Factor>,
    },
}

impl SpaceSpec {
    pub fn lp(p: f64) -> Self {
        SpaceSpec::Lp {
            p,
            measure: Measure::Counting,
        }
    }

    pub fn l2() -> Self {
        SpaceSpec::lp(2.0)
    }

    pub fn sobolev(s: f64, p: f64) -> Self {
        SpaceSpec::Sobolev {
            p,
            s,
            frequency_scale: DEFAULT_FREQUENCY_SCALE,
            measure: Measure::Counting,
        }
    }

    pub fn weighted(base: SpaceSpec, weights: Vec<f64>) -> Result<Self> {
        if let Some(i) = weights.iter().position(|w| *w == 0.0 || !w.is_finite()) {
            return Err(Error::invalid(format!(
                "weight {i} is {}; weights must be finite and nonzero",
                weights[i]
            )));
        }
        Ok(SpaceSpec::Weighted {
            base: Box::new(base),
            weights,
        })
    }

    pub fn product(p: f64, factors: Vec<Factor>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::invalid("product space needs at least one factor"));
        }
        if !(p >= 1.0) {
            return Err(Error::invalid(format!("product exponent must be >= 1, got {p}")));
        }
        Ok(SpaceSpec::Product { p, factors })
    }

    /// Replaces the measure of `L^p` and Sobolev spaces.
    pub fn with_measure(self, measure: Measure) -> Self {
        match self {
            SpaceSpec::Lp { p, .. } => SpaceSpec::Lp { p, measure },
            SpaceSpec::Sobolev {
                p, s, frequency_scale, ..
            } => SpaceSpec::Sobolev {
                p,
                s,
                frequency_scale,
                measure,
            },
            other => other,
        }
    }

    /// The top-level exponent `p`.
    pub fn exponent(&self) -> f64 {
        match self {
            SpaceSpec::Lp { p, .. } | SpaceSpec::Sobolev { p, .. } | SpaceSpec::Product { p, .. } => *p,
            SpaceSpec::Weighted { base, .. } => base.exponent(),
        }
    }

    /// Checks parameters and compatibility with signals of `geometry`.
    pub fn validate(&self, geometry: Geometry) -> Result<()> {
        match self {
            SpaceSpec::Lp { p, .. } => check_exponent(*p),
            SpaceSpec::Sobolev {
                p, s, frequency_scale, ..
            } => {
                check_exponent(*p)?;
                if !s.is_finite() {
                    return Err(Error::invalid(format!("smoothness must be finite, got {s}")));
                }
                if !(*frequency_scale > 0.0 && frequency_scale.is_finite()) {
                    return Err(Error::invalid(format!(
                        "frequency_scale must be positive, got {frequency_scale}"
                    )));
                }
                for n in [geometry.height, geometry.width] {
                    if !n.is_power_of_two() {
                        return Err(Error::NotPowerOfTwo(n));
                    }
                }
                Ok(())
            }
            SpaceSpec::Weighted { base, weights } => {
                if weights.len() != geometry.len() {
                    return Err(Error::shape(
                        "weighted space",
                        format!("{} weights for geometry {geometry}", weights.len()),
                    ));
                }
                base.validate(geometry)
            }
            SpaceSpec::Product { p, factors } => {
                check_exponent(*p)?;
                let total: usize = factors.iter().map(|f| f.geometry.len()).sum();
                if total != geometry.len() {
                    return Err(Error::shape(
                        "product space",
                        format!("factors cover {total} entries, signal has {}", geometry.len()),
                    ));
                }
                factors.iter().try_for_each(|f| f.space.validate(f.geometry))
            }
        }
    }

    /// The space whose norm is the dual norm of this one (under the
    /// coordinate pairing). Requires `1 < p < ∞` throughout.
    pub fn dual_space(&self) -> Result<SpaceSpec> {
        Ok(match self {
            SpaceSpec::Lp { p, measure } => SpaceSpec::Lp {
                p: dual_exponent(*p)?,
                measure: measure.dual(),
            },
            SpaceSpec::Sobolev {
                p,
                s,
                frequency_scale,
                measure,
            } => SpaceSpec::Sobolev {
                p: dual_exponent(*p)?,
                s: -s,
                frequency_scale: *frequency_scale,
                measure: measure.dual(),
            },
            SpaceSpec::Weighted { base, weights } => SpaceSpec::Weighted {
                base: Box::new(base.dual_space()?),
                weights: weights.iter().map(|w| 1.0 / w).collect(),
            },
            SpaceSpec::Product { p, factors } => SpaceSpec::Product {
                p: dual_exponent(*p)?,
                factors: factors
                    .iter()
                    .map(|f| {
                        Ok(Factor {
                            space: f.space.dual_space()?,
                            geometry: f.geometry,
                        })
                    })
                    .collect::<Result<_>>()?,
            },
        })
    }

    /// `‖x‖_B`.
    pub fn norm(&self, x: &GridSignal) -> Result<f64> {
        self.validate(x.geometry())?;
        self.norm_unchecked(x.values(), x.geometry())
    }

    fn norm_unchecked(&self, values: &[f64], geometry: Geometry) -> Result<f64> {
        match self {
            SpaceSpec::Lp { p, measure } => lp_norm(values, *p, *measure),
            SpaceSpec::Sobolev {
                p,
                s,
                frequency_scale,
                measure,
            } => {
                let y = sobolev_multiplier(values, geometry, *s, *frequency_scale)?;
                lp_norm(&y, *p, *measure)
            }
            SpaceSpec::Weighted { base, weights } => {
                let y: Vec<f64> = values.iter().zip(weights).map(|(v, w)| v * w).collect();
                base.norm_unchecked(&y, geometry)
            }
            SpaceSpec::Product { p, factors } => {
                let mut offset = 0;
                let mut parts = Vec::with_capacity(factors.len());
                for f in factors {
                    let n = f.geometry.len();
                    parts.push(f.space.norm_unchecked(&values[offset..offset + n], f.geometry)?);
                    offset += n;
                }
                lp_norm(&parts, *p, Measure::Counting)
            }
        }
    }

    /// `‖g‖_{B*}` for the coordinates `g` of a dual element.
    pub fn dual_norm(&self, g: &GridSignal) -> Result<f64> {
        self.validate(g.geometry())?;
        self.dual_space()?.norm_unchecked(g.values(), g.geometry())
    }

    /// An `h` attaining `⟨g, h⟩ = ‖g‖_{B*} ‖h‖_B` (Hölder's equality case).
    pub fn dual_maximizer(&self, g: &GridSignal) -> Result<GridSignal> {
        self.validate(g.geometry())?;
        let h = self.maximizer_unchecked(g.values(), g.geometry())?;
        Ok(GridSignal {
            geometry: g.geometry(),
            values: h,
        })
    }

    fn maximizer_unchecked(&self, g: &[f64], geometry: Geometry) -> Result<Vec<f64>> {
        match self {
            SpaceSpec::Lp { p, .. } => {
                let q = dual_exponent(*p)?;
                Ok(g.iter().map(|&v| sign_pow(v, q - 1.0)).collect())
            }
            SpaceSpec::Sobolev {
                p, s, frequency_scale, ..
            } => {
                let q = dual_exponent(*p)?;
                let y = sobolev_multiplier(g, geometry, -s, *frequency_scale)?;
                let v: Vec<f64> = y.iter().map(|&e| sign_pow(e, q - 1.0)).collect();
                sobolev_multiplier(&v, geometry, -s, *frequency_scale)
            }
            SpaceSpec::Weighted { base, weights } => {
                let scaled: Vec<f64> = g.iter().zip(weights).map(|(v, w)| v / w).collect();
                let h = base.maximizer_unchecked(&scaled, geometry)?;
                Ok(h.iter().zip(weights).map(|(v, w)| v / w).collect())
            }
            SpaceSpec::Product { p, factors } => {
                let q = dual_exponent(*p)?;
                let mut out = Vec::with_capacity(g.len());
                let mut offset = 0;
                for f in factors {
                    let n = f.geometry.len();
                    let gi = &g[offset..offset + n];
                    let dual_i = f.space.dual_space()?.norm_unchecked(gi, f.geometry)?;
                    let hi = f.space.maximizer_unchecked(gi, f.geometry)?;
                    let norm_hi = f.space.norm_unchecked(&hi, f.geometry)?;
                    let scale = if norm_hi > 0.0 {
                        dual_i.powf(q - 1.0) / norm_hi
                    } else {
                        0.0
                    };
                    out.extend(hi.iter().map(|v| v * scale));
                    offset += n;
                }
                Ok(out)
            }
        }
    }
}

fn check_exponent(p: f64) -> Result<()> {
    if p >= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("exponent must be >= 1, got {p}")))
    }
}

/// An element of `B*` in coordinates, tagged with the space `B`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualElement {
    values: GridSignal,
    space: SpaceSpec,
}

impl DualElement {
    pub fn values(&self) -> &GridSignal {
        &self.values
    }

    pub fn space(&self) -> &SpaceSpec {
        &self.space
    }

    /// `x*(h)` through the coordinate pairing.
    pub fn apply(&self, h: &GridSignal) -> f64 {
        self.values.dot(h)
    }
}

/// Reads an autodiff gradient (coordinates of `∂g`) as an element of `B*`.
/// The identification is the identity on coordinates.
pub fn iota_star(gradient: &Tensor, geometry: Geometry, space: &SpaceSpec) -> Result<DualElement> {
    if gradient.len() != geometry.len() {
        return Err(Error::shape(
            "gradient",
            format!("{} entries for geometry {geometry}", gradient.len()),
        ));
    }
    space.validate(geometry)?;
    Ok(DualElement {
        values: GridSignal::new(geometry, gradient.data().to_vec())?,
        space: space.clone(),
    })
}

pub fn norm(space: &SpaceSpec, x: &GridSignal) -> Result<f64> {
    space.norm(x)
}

pub fn dual_norm(space: &SpaceSpec, g: &DualElement) -> Result<f64> {
    if g.space != *space {
        return Err(Error::invalid("dual element belongs to a different space"));
    }
    space.dual_norm(&g.values)
}
