//! Multi-Gaussian fits of excitation spectra, ZPL extraction, emission
//! decomposition and transition sets.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lsq::{self, Bound, FitOptions, FitProblem, LsqError};
use crate::models::{gaussian, DetunedGaussians, MultiGaussian};
use crate::peaks::{find_peaks, PeakCandidate, PeakParams};
use crate::types::{normalize, Spectrum};

const SIGMA_MIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub amplitude: f64,
    /// eV
    pub center: f64,
    /// eV
    pub sigma: f64,
}

impl GaussianComponent {
    pub fn new(amplitude: f64, center: f64, sigma: f64) -> Self {
        Self {
            amplitude,
            center,
            sigma,
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        gaussian(self.amplitude, self.center, self.sigma, x)
    }

    /// `A·σ·√(2π)`.
    pub fn area(&self) -> f64 {
        self.amplitude * self.sigma * (2.0 * std::f64::consts::PI).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultiGaussFit {
    /// Sorted by center.
    pub components: Vec<GaussianComponent>,
    /// For each component, the index of the candidate that seeded it.
    pub seeds: Vec<usize>,
    pub residuals: Vec<f64>,
    pub max_abs_residual: f64,
    pub converged: bool,
    pub cost: f64,
    pub iterations: usize,
}

impl MultiGaussFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.components.iter().map(|c| c.value(x)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionSet {
    pub emitter_id: u64,
    pub zpl_energy: f64,
    /// Ascending, eV.
    pub transitions: Vec<f64>,
    /// `t_j − t_i` for all `i < j`, in row-major pair order.
    pub pairwise_diffs: Vec<f64>,
}

impl TransitionSet {
    /// Sorts the transitions, drops exact duplicates and fills the pairwise
    /// differences.
    pub fn new(emitter_id: u64, zpl_energy: f64, mut transitions: Vec<f64>) -> Self {
        transitions.sort_by(f64::total_cmp);
        transitions.dedup();
        let mut pairwise_diffs = Vec::with_capacity(transitions.len() * transitions.len() / 2);
        for i in 0..transitions.len() {
            for j in i + 1..transitions.len() {
                pairwise_diffs.push(transitions[j] - transitions[i]);
            }
        }
        Self {
            emitter_id,
            zpl_energy,
            transitions,
            pairwise_diffs,
        }
    }

    /// Detunings `t − zpl` of every transition.
    pub fn zpl_distances(&self) -> impl Iterator<Item = f64> + '_ {
        self.transitions.iter().map(move |t| t - self.zpl_energy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PLDecomposition {
    pub zpl: GaussianComponent,
    /// Low-energy shoulder, smaller detuning first.
    pub acoustic: [GaussianComponent; 2],
    /// First-order optical side band, smaller detuning first.
    pub optical: [GaussianComponent; 2],
    /// Detunings below the ZPL center: acoustic then optical, eV.
    pub detunings: [f64; 4],
    /// ZPL area over total area.
    pub debye_waller_proxy: f64,
    pub residuals: Vec<f64>,
    pub converged: bool,
}

#[derive(Debug, Error)]
pub enum FitError {
    #[error("no candidates to seed the fit")]
    NoCandidates,
    #[error("empty spectrum")]
    Empty,
    #[error("spectrum cannot be normalized: {0}")]
    Degenerate(String),
    #[error("ZPL {0} eV lies outside the spectrum range")]
    ZplOutOfRange(f64),
    #[error("fit did not converge")]
    NotConverged,
    #[error("emission decomposition did not converge")]
    Decomposition(Box<PLDecomposition>),
    #[error("all component areas are zero")]
    ZeroArea,
    #[error(transparent)]
    Lsq(#[from] LsqError),
}

/// Iteration cap for the joint fit; five or more overlapping components
/// can need several hundred steps.
pub const MULTI_FIT_MAX_ITER: usize = 1000;

/// Fits one Gaussian per candidate to the whole spectrum.
///
/// Initial values come from the candidates: position, height, and σ from
/// the distance between the surrounding minima. Amplitudes are bounded
/// below by zero, centers to the axis range and widths to [1e-6 eV, span].
pub fn multi_gauss_fit(
    spectrum: &Spectrum,
    candidates: &[PeakCandidate],
) -> Result<MultiGaussFit, FitError> {
    if candidates.is_empty() {
        return Err(FitError::NoCandidates);
    }
    let x = spectrum.axis();
    let y = spectrum.intensities();
    let (lo, hi) = (x[0].min(x[x.len() - 1]), x[0].max(x[x.len() - 1]));
    let span = hi - lo;
    let step = span / (x.len() - 1) as f64;
    let mut initial = Vec::with_capacity(3 * candidates.len());
    let mut bounds = Vec::with_capacity(3 * candidates.len());
    for c in candidates {
        initial.extend([
            c.height.max(0.0),
            c.position.clamp(lo, hi),
            c.initial_sigma().max(step / 2.0).min(span),
        ]);
        // Centers stay on the measured axis and widths below its span.
        bounds.extend([
            Bound::at_least(0.0),
            Bound::new(lo, hi),
            Bound::new(SIGMA_MIN, span.max(SIGMA_MIN)),
        ]);
    }
    let model = MultiGaussian::new(candidates.len());
    let fit = lsq::fit(
        &FitProblem {
            model: &model,
            x,
            y,
            initial,
            bounds: Some(bounds),
        },
        &FitOptions {
            max_iter: MULTI_FIT_MAX_ITER,
            ..FitOptions::default()
        },
    )?;

    let mut comps: Vec<(GaussianComponent, usize)> = fit
        .params
        .chunks_exact(3)
        .enumerate()
        .map(|(k, p)| (GaussianComponent::new(p[0], p[1], p[2]), k))
        .collect();
    comps.sort_by(|a, b| a.0.center.total_cmp(&b.0.center));
    let max_abs_residual = fit.max_abs_residual();
    let (components, seeds) = comps.into_iter().unzip();
    Ok(MultiGaussFit {
        components,
        seeds,
        residuals: fit.residuals,
        max_abs_residual,
        converged: fit.converged,
        cost: fit.cost,
        iterations: fit.iterations,
    })
}

/// A normalized spectrum with its vetted peaks and multi-Gaussian fit.
#[derive(Debug, Clone)]
pub struct SpectrumAnalysis {
    pub normalized: Spectrum,
    /// Candidates that seeded the fit (accepted plus edge peaks).
    pub candidates: Vec<PeakCandidate>,
    pub fit: MultiGaussFit,
}

impl SpectrumAnalysis {
    pub fn transitions(&self, emitter_id: u64, zpl_energy: f64) -> Result<TransitionSet, FitError> {
        extract_transitions(emitter_id, zpl_energy, &self.fit, &self.candidates)
    }
}

/// Normalizes, finds and vets peaks, then fits one Gaussian per seed.
pub fn analyze_spectrum(
    spectrum: &Spectrum,
    params: &PeakParams,
) -> Result<SpectrumAnalysis, FitError> {
    let normalized = normalize(spectrum).map_err(|e| FitError::Degenerate(e.to_string()))?;
    let candidates: Vec<PeakCandidate> = find_peaks(&normalized, params)
        .map_err(|e| FitError::Degenerate(e.to_string()))?
        .into_iter()
        .filter(PeakCandidate::seeds_fit)
        .collect();
    let fit = multi_gauss_fit(&normalized, &candidates)?;
    Ok(SpectrumAnalysis {
        normalized,
        candidates,
        fit,
    })
}

/// Energy of the PL maximum; the lowest energy wins on ties.
pub fn extract_zpl(pl: &Spectrum) -> Result<f64, FitError> {
    if pl.is_empty() {
        return Err(FitError::Empty);
    }
    Ok(pl.axis()[pl.argmax()])
}

/// Centers of the components seeded by accepted, non-edge candidates.
pub fn extract_transitions(
    emitter_id: u64,
    zpl_energy: f64,
    fit: &MultiGaussFit,
    candidates: &[PeakCandidate],
) -> Result<TransitionSet, FitError> {
    if !fit.converged {
        return Err(FitError::NotConverged);
    }
    let transitions = fit
        .components
        .iter()
        .zip(&fit.seeds)
        .filter(|(_, &k)| candidates.get(k).is_some_and(|c| c.accepted && !c.is_edge))
        .map(|(c, _)| c.center)
        .collect();
    Ok(TransitionSet::new(emitter_id, zpl_energy, transitions))
}

/// Initial detunings below the ZPL: two acoustic, two optical (eV).
pub const PL_INITIAL_DETUNINGS: [f64; 4] = [0.020, 0.050, 0.165, 0.190];
/// Optical detunings may move this far from their initial value.
pub const OPTICAL_DETUNING_SLACK: f64 = 0.025;
/// Acoustic detunings stay below the smallest allowed optical detuning.
const ACOUSTIC_DETUNING_MAX: f64 = 0.120;
const ZPL_SHIFT_MAX: f64 = 0.030;

fn nearest_value(spectrum: &Spectrum, x: f64) -> f64 {
    let axis = spectrum.axis();
    let i = axis.partition_point(|&a| a < x).min(axis.len() - 1);
    let i = if i > 0 && (axis[i - 1] - x).abs() < (axis[i] - x).abs() {
        i - 1
    } else {
        i
    };
    spectrum.intensities()[i]
}

/// Five-component fit of an emission spectrum: the ZPL, two acoustic and two
/// optical phonon side bands, with side-band centers expressed as detunings
/// below the ZPL.
pub fn decompose_pl(pl: &Spectrum, zpl: f64) -> Result<PLDecomposition, FitError> {
    let axis = pl.axis();
    if zpl < axis[0] || zpl > axis[axis.len() - 1] {
        return Err(FitError::ZplOutOfRange(zpl));
    }
    let widths = [0.010, 0.015, 0.020, 0.020, 0.020];
    let mut initial = vec![nearest_value(pl, zpl).max(0.0), zpl, widths[0]];
    let mut bounds = vec![
        Bound::at_least(0.0),
        Bound::new(zpl - ZPL_SHIFT_MAX, zpl + ZPL_SHIFT_MAX),
        Bound::at_least(SIGMA_MIN),
    ];
    for (k, &d) in PL_INITIAL_DETUNINGS.iter().enumerate() {
        let a0 = nearest_value(pl, zpl - d).max(0.0) * 0.5;
        initial.extend([a0, d, widths[k + 1]]);
        let db = if k < 2 {
            Bound::new(0.0, ACOUSTIC_DETUNING_MAX)
        } else {
            Bound::new(d - OPTICAL_DETUNING_SLACK, d + OPTICAL_DETUNING_SLACK)
        };
        bounds.extend([Bound::at_least(0.0), db, Bound::at_least(SIGMA_MIN)]);
    }
    let model = DetunedGaussians::new(5);
    let fit = lsq::fit(
        &FitProblem {
            model: &model,
            x: axis,
            y: pl.intensities(),
            initial,
            bounds: Some(bounds),
        },
        &FitOptions::default(),
    )?;
    let p = &fit.params;
    let abs = DetunedGaussians::absolute(p);
    let comp = |k: usize| GaussianComponent::new(abs[k][0], abs[k][1], abs[k][2]);
    let mut acoustic = [(comp(1), p[4]), (comp(2), p[7])];
    acoustic.sort_by(|a, b| a.1.total_cmp(&b.1));
    let optical = [(comp(3), p[10]), (comp(4), p[13])];
    let zpl_comp = comp(0);
    let total: f64 = (0..5).map(|k| comp(k).area()).sum();
    if !(total > 0.0) {
        return Err(FitError::ZeroArea);
    }
    let out = PLDecomposition {
        zpl: zpl_comp,
        acoustic: [acoustic[0].0, acoustic[1].0],
        optical: [optical[0].0, optical[1].0],
        detunings: [acoustic[0].1, acoustic[1].1, optical[0].1, optical[1].1],
        debye_waller_proxy: zpl_comp.area() / total,
        residuals: fit.residuals,
        converged: fit.converged,
    };
    if out.converged {
        Ok(out)
    } else {
        Err(FitError::Decomposition(Box::new(out)))
    }
}
