//! Gaussian line shapes with analytic partial derivatives.
//!
//! Parameters are laid out as consecutive `(amplitude, center, sigma)`
//! triples, except for [`DetunedGaussians`], which replaces the centers of
//! all but the first component with detunings below it.

use crate::lsq::Model;

/// `A · exp(−(x − μ)² / 2σ²)`.
#[inline]
pub fn gaussian(amplitude: f64, center: f64, sigma: f64, x: f64) -> f64 {
    let z = (x - center) / sigma;
    amplitude * (-0.5 * z * z).exp()
}

/// Writes `(∂/∂A, ∂/∂μ, ∂/∂σ)` of [`gaussian`] into `out`.
#[inline]
fn gaussian_partials(amplitude: f64, center: f64, sigma: f64, x: f64, out: &mut [f64]) {
    let d = x - center;
    let z = d / sigma;
    let e = (-0.5 * z * z).exp();
    out[0] = e;
    out[1] = amplitude * e * d / (sigma * sigma);
    out[2] = amplitude * e * d * d / (sigma * sigma * sigma);
}

/// Single Gaussian, parameters `[A, μ, σ]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Gaussian;

impl Model for Gaussian {
    fn n_params(&self) -> usize {
        3
    }

    fn eval(&self, p: &[f64], x: f64) -> f64 {
        gaussian(p[0], p[1], p[2], x)
    }

    fn partials(&self, p: &[f64], x: f64, out: &mut [f64]) -> bool {
        gaussian_partials(p[0], p[1], p[2], x, out);
        true
    }
}

/// Sum of `n` Gaussians, parameters `[A₀, μ₀, σ₀, A₁, μ₁, σ₁, …]`.
#[derive(Debug, Clone, Copy)]
pub struct MultiGaussian {
    n: usize,
}

impl MultiGaussian {
    pub fn new(components: usize) -> Self {
        Self { n: components }
    }

    pub fn components(&self) -> usize {
        self.n
    }
}

impl Model for MultiGaussian {
    fn n_params(&self) -> usize {
        3 * self.n
    }

    fn eval(&self, p: &[f64], x: f64) -> f64 {
        p.chunks_exact(3)
            .map(|c| gaussian(c[0], c[1], c[2], x))
            .sum()
    }

    fn partials(&self, p: &[f64], x: f64, out: &mut [f64]) -> bool {
        for (c, o) in p.chunks_exact(3).zip(out.chunks_exact_mut(3)) {
            gaussian_partials(c[0], c[1], c[2], x, o);
        }
        true
    }
}

/// Emission line plus red-shifted side bands.
///
/// Parameters: `[A₀, E₀, σ₀, A₁, d₁, σ₁, …]`; component `k ≥ 1` is centred
/// at `E₀ − d_k`.
#[derive(Debug, Clone, Copy)]
pub struct DetunedGaussians {
    n: usize,
}

impl DetunedGaussians {
    pub fn new(components: usize) -> Self {
        assert!(components >= 1);
        Self { n: components }
    }

    /// Converts a parameter vector to absolute `(A, center, σ)` triples.
    pub fn absolute(p: &[f64]) -> Vec<[f64; 3]> {
        let e0 = p[1];
        p.chunks_exact(3)
            .enumerate()
            .map(|(k, c)| {
                if k == 0 {
                    [c[0], c[1], c[2]]
                } else {
                    [c[0], e0 - c[1], c[2]]
                }
            })
            .collect()
    }
}

impl Model for DetunedGaussians {
    fn n_params(&self) -> usize {
        3 * self.n
    }

    fn eval(&self, p: &[f64], x: f64) -> f64 {
        let e0 = p[1];
        let mut y = gaussian(p[0], e0, p[2], x);
        for c in p[3..].chunks_exact(3) {
            y += gaussian(c[0], e0 - c[1], c[2], x);
        }
        y
    }

    fn partials(&self, p: &[f64], x: f64, out: &mut [f64]) -> bool {
        let e0 = p[1];
        gaussian_partials(p[0], e0, p[2], x, &mut out[..3]);
        let mut d_e0 = out[1];
        let mut tmp = [0.0; 3];
        for (c, o) in p[3..].chunks_exact(3).zip(out[3..].chunks_exact_mut(3)) {
            gaussian_partials(c[0], e0 - c[1], c[2], x, &mut tmp);
            o[0] = tmp[0];
            // center = E₀ − d, so ∂/∂d = −∂/∂center
            o[1] = -tmp[1];
            o[2] = tmp[2];
            d_e0 += tmp[1];
        }
        out[1] = d_e0;
        true
    }
}
