//! Synthetic datasets for small-scale experiments.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::spaces::{Geometry, GridSignal};

#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    /// Eight isotropic Gaussians (σ = 0.02) evenly spaced on a circle of
    /// radius 2.
    EightGaussians,
    /// Planar swiss roll scaled to roughly the unit disc.
    SwissRoll,
    /// Single-channel 16×16 images of one axis-aligned rectangle with a
    /// linear intensity ramp on a zero background.
    Rectangles,
    /// Uniform on `[-1, 1]^dim`.
    UniformCube { dim: usize },
}

impl Dataset {
    pub fn geometry(&self) -> Geometry {
        match self {
            Dataset::EightGaussians | Dataset::SwissRoll => Geometry::flat(2),
            Dataset::Rectangles => Geometry {
                channels: 1,
                height: 16,
                width: 16,
            },
            Dataset::UniformCube { dim } => Geometry::flat(*dim),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Dataset::UniformCube { dim: 0 } => Err(Error::invalid("uniform cube needs dim >= 1")),
            _ => Ok(()),
        }
    }

    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<GridSignal> {
        (0..n).map(|_| self.sample_one(rng)).collect()
    }

    pub fn sample_one<R: Rng>(&self, rng: &mut R) -> GridSignal {
        let geometry = self.geometry();
        let values = match self {
            Dataset::EightGaussians => {
                let k = rng.random_range(0..8) as f64;
                let noise = Normal::new(0.0, 0.02).expect("valid sigma");
                let (s, c) = (k * PI / 4.0).sin_cos();
                vec![2.0 * c + noise.sample(rng), 2.0 * s + noise.sample(rng)]
            }
            Dataset::SwissRoll => {
                let t = 1.5 * PI * (1.0 + 2.0 * rng.random::<f64>());
                let noise = Normal::new(0.0, 0.25).expect("valid sigma");
                vec![
                    (t * t.cos() + noise.sample(rng)) / 7.5,
                    (t * t.sin() + noise.sample(rng)) / 7.5,
                ]
            }
            Dataset::Rectangles => rectangle(rng),
            Dataset::UniformCube { dim } => (0..*dim).map(|_| rng.random_range(-1.0..=1.0)).collect(),
        };
        GridSignal::new(geometry, values).expect("dataset geometry")
    }
}

fn rectangle<R: Rng>(rng: &mut R) -> Vec<f64> {
    const N: usize = 16;
    let mut span = || {
        let a = rng.random_range(0..N - 2);
        let b = rng.random_range(a + 2..=N);
        (a, b)
    };
    let (r0, r1) = span();
    let (c0, c1) = span();
    let base = rng.random_range(0.2..1.0);
    let slope_r = rng.random_range(-0.5..0.5);
    let slope_c = rng.random_range(-0.5..0.5);
    let mut img = vec![0.0; N * N];
    for r in r0..r1 {
        for c in c0..c1 {
            let fr = (r - r0) as f64 / (r1 - r0) as f64;
            let fc = (c - c0) as f64 / (c1 - c0) as f64;
            img[r * N + c] = base + slope_r * fr + slope_c * fc;
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn eight_gaussians_sit_on_the_ring() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for x in Dataset::EightGaussians.sample(200, &mut rng) {
            let r = x.values()[0].hypot(x.values()[1]);
            assert!((r - 2.0).abs() < 0.15, "{r}");
        }
    }

    #[test]
    fn rectangles_have_nontrivial_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for x in Dataset::Rectangles.sample(50, &mut rng) {
            let nz = x.values().iter().filter(|v| **v != 0.0).count();
            assert!((4..=256).contains(&nz));
        }
    }
}
