use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex, OnceLock};

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::Geometry;
use crate::error::{Error, Result};

/// Default bound on per-axis |ξ|.
pub const DEFAULT_FREQUENCY_SCALE: f64 = 5.0;

/// The Fourier multiplier `x ↦ ℱ⁻¹[(1 + |ξ|²)^{s/2} ℱx]`, applied per channel
/// on a `height × width` grid.
///
/// Integer frequency `k ∈ {-N/2, …, N/2-1}` on an axis of length `N` maps to
/// `ξ = frequency_scale · k / (N/2)`, so every axis satisfies
/// `|ξ| ≤ frequency_scale`. The symbol is real and even in `k`, which makes the
/// operator real-valued and self-adjoint for the plain dot product.
pub struct SpectralMultiplier {
    geometry: Geometry,
    s: f64,
    frequency_scale: f64,
    /// Symbol on the (row, col) frequency grid, already divided by `h·w`
    /// (the product of the two unitary normalizations).
    symbol: Vec<f64>,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for SpectralMultiplier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpectralMultiplier")
            .field("geometry", &self.geometry)
            .field("s", &self.s)
            .field("frequency_scale", &self.frequency_scale)
            .finish()
    }
}

/// Maps an FFT bin index to its signed frequency `ξ` on an axis of length `n`.
pub fn axis_frequency(index: usize, n: usize, frequency_scale: f64) -> f64 {
    // n = 1 only has the DC bin
    if n == 1 {
        return 0.0;
    }
    let k = if index < n / 2 {
        index as f64
    } else {
        index as f64 - n as f64
    };
    frequency_scale * k / (n as f64 / 2.0)
}

impl SpectralMultiplier {
    pub fn new(geometry: Geometry, s: f64, frequency_scale: f64) -> Result<Self> {
        for n in [geometry.height, geometry.width] {
            if !n.is_power_of_two() {
                return Err(Error::NotPowerOfTwo(n));
            }
        }
        if !(frequency_scale > 0.0 && frequency_scale.is_finite()) {
            return Err(Error::invalid(format!(
                "frequency_scale must be positive, got {frequency_scale}"
            )));
        }
        if !s.is_finite() {
            return Err(Error::invalid(format!("smoothness s must be finite, got {s}")));
        }
        let (h, w) = (geometry.height, geometry.width);
        let norm = 1.0 / (h * w) as f64;
        let mut symbol = Vec::with_capacity(h * w);
        for r in 0..h {
            let xr = axis_frequency(r, h, frequency_scale);
            for c in 0..w {
                let xc = axis_frequency(c, w, frequency_scale);
                symbol.push((1.0 + xr * xr + xc * xc).powf(s / 2.0) * norm);
            }
        }
        let mut planner = FftPlanner::new();
        Ok(SpectralMultiplier {
            geometry,
            s,
            frequency_scale,
            symbol,
            row_fwd: planner.plan_fft_forward(w),
            row_inv: planner.plan_fft_inverse(w),
            col_fwd: planner.plan_fft_forward(h),
            col_inv: planner.plan_fft_inverse(h),
        })
    }

    /// Shared instance for the given parameters; FFT plans are built once per
    /// process and reused across threads.
    pub fn cached(geometry: Geometry, s: f64, frequency_scale: f64) -> Result<Arc<Self>> {
        type Key = (Geometry, u64, u64);
        static CACHE: OnceLock<Mutex<HashMap<Key, Arc<SpectralMultiplier>>>> = OnceLock::new();
        let key = (geometry, s.to_bits(), frequency_scale.to_bits());
        let cache = CACHE.get_or_init(Default::default);
        if let Some(m) = cache.lock().expect("multiplier cache").get(&key) {
            return Ok(Arc::clone(m));
        }
        let m = Arc::new(SpectralMultiplier::new(geometry, s, frequency_scale)?);
        cache.lock().expect("multiplier cache").insert(key, Arc::clone(&m));
        Ok(m)
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn smoothness(&self) -> f64 {
        self.s
    }

    pub fn frequency_scale(&self) -> f64 {
        self.frequency_scale
    }

    /// Number of entries one application acts on.
    pub fn len(&self) -> usize {
        self.geometry.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Symbol value `(1 + |ξ|²)^{s/2}` at bin `(row, col)`.
    pub fn symbol(&self, row: usize, col: usize) -> f64 {
        let (h, w) = (self.geometry.height, self.geometry.width);
        self.symbol[row * w + col] * (h * w) as f64
    }

    /// Applies the multiplier; `s = 0` is the identity and returns the input
    /// unchanged.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.apply_into(x, &mut out);
        out
    }

    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        if self.s == 0.0 {
            out.copy_from_slice(x);
        } else {
            self.transform_into(x, out);
        }
    }

    /// Always takes the FFT route, even when the symbol is identically 1.
    /// Returns the output together with the largest discarded imaginary part.
    pub fn apply_via_fft(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let mut out = vec![0.0; x.len()];
        let residue = self.transform_into(x, &mut out);
        (out, residue)
    }

    fn transform_into(&self, x: &[f64], out: &mut [f64]) -> f64 {
        debug_assert_eq!(x.len(), self.len());
        let (h, w) = (self.geometry.height, self.geometry.width);
        let plane = h * w;
        let mut rows = vec![Complex::new(0.0, 0.0); plane];
        let mut cols = vec![Complex::new(0.0, 0.0); plane];
        let mut residue = 0.0f64;
        for (src, dst) in x.chunks(plane).zip(out.chunks_mut(plane)) {
            for (c, &v) in rows.iter_mut().zip(src) {
                *c = Complex::new(v, 0.0);
            }
            self.row_fwd.process(&mut rows);
            for r in 0..h {
                for c in 0..w {
                    cols[c * h + r] = rows[r * w + c];
                }
            }
            self.col_fwd.process(&mut cols);
            for c in 0..w {
                for r in 0..h {
                    cols[c * h + r] *= self.symbol[r * w + c];
                }
            }
            self.col_inv.process(&mut cols);
            for r in 0..h {
                for c in 0..w {
                    rows[r * w + c] = cols[c * h + r];
                }
            }
            self.row_inv.process(&mut rows);
            for (d, c) in dst.iter_mut().zip(&rows) {
                *d = c.re;
                residue = residue.max(c.im.abs());
            }
        }
        residue
    }
}

/// Applies `(1 + |ξ|²)^{s/2}` to every channel of `values`, verifying that the
/// discarded imaginary part is negligible.
pub fn sobolev_multiplier(values: &[f64], geometry: Geometry, s: f64, frequency_scale: f64) -> Result<Vec<f64>> {
    if values.len() != geometry.len() {
        return Err(Error::shape(
            "signal",
            format!("{} values for geometry {geometry}", values.len()),
        ));
    }
    let m = SpectralMultiplier::cached(geometry, s, frequency_scale)?;
    if s == 0.0 {
        return Ok(values.to_vec());
    }
    let (out, residue) = m.apply_via_fft(values);
    let scale = out.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    if residue > 1e-10 * scale {
        return Err(Error::ImaginaryResidue(residue));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(c: usize, h: usize, w: usize) -> Geometry {
        Geometry::new(c, h, w).unwrap()
    }

    #[test]
    fn frequency_grid_is_bounded_per_axis() {
        let n = 16;
        let xs: Vec<f64> = (0..n).map(|i| axis_frequency(i, n, 5.0)).collect();
        assert_eq!(xs[0], 0.0);
        assert_eq!(xs[8], -5.0);
        assert!(xs.iter().all(|x| x.abs() <= 5.0));
        assert_eq!(axis_frequency(0, 1, 5.0), 0.0);
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert!(matches!(
            SpectralMultiplier::new(geom(1, 6, 8), 1.0, 5.0),
            Err(Error::NotPowerOfTwo(6))
        ));
    }

    #[test]
    fn zero_smoothness_is_exact_identity() {
        let g = geom(2, 4, 4);
        let x: Vec<f64> = (0..g.len()).map(|i| (i as f64 * 0.37).sin()).collect();
        assert_eq!(sobolev_multiplier(&x, g, 0.0, 5.0).unwrap(), x);
        let m = SpectralMultiplier::new(g, 0.0, 5.0).unwrap();
        let (y, residue) = m.apply_via_fft(&x);
        assert!(residue < 1e-14);
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn constant_signal_is_unchanged() {
        let g = geom(1, 8, 8);
        let x = vec![2.5; g.len()];
        let y = sobolev_multiplier(&x, g, 1.5, 5.0).unwrap();
        for v in y {
            assert!((v - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn inverse_order_round_trips() {
        let g = geom(3, 8, 4);
        let x: Vec<f64> = (0..g.len()).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
        let y = sobolev_multiplier(&x, g, 1.3, 5.0).unwrap();
        let z = sobolev_multiplier(&y, g, -1.3, 5.0).unwrap();
        for (a, b) in x.iter().zip(&z) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn nyquist_mode_scales_by_symbol() {
        // alternating ±1 along the width is the pure k = -N/2 mode
        let g = geom(1, 1, 8);
        let x: Vec<f64> = (0..8).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let y = sobolev_multiplier(&x, g, 2.0, 5.0).unwrap();
        for (a, b) in x.iter().zip(&y) {
            assert!((b - 26.0 * a).abs() < 1e-10);
        }
    }
}
