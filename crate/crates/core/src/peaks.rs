//! Peak preselection by strict windowed local maxima, followed by vetting
//! each candidate with a local single-Gaussian fit.

use serde::Serialize;

use crate::error::{param, Result};
use crate::lsq::{self, Bound, FitOptions, FitProblem};
use crate::models::Gaussian;
use crate::types::Spectrum;

/// FWHM = 2·√(2 ln 2)·σ, rounded as commonly quoted.
pub const FWHM_PER_SIGMA: f64 = 2.355;

/// Window and vetting thresholds for one kind of spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeakParams {
    /// Points that must lie below a candidate on each side.
    pub window: usize,
    /// Local fit must leave every |residual| strictly below this.
    pub residual_max: f64,
    /// Fitted local amplitude must be strictly above this.
    pub min_height: f64,
}

impl PeakParams {
    pub const PLE: PeakParams = PeakParams {
        window: 8,
        residual_max: 0.12,
        min_height: 0.10,
    };
    pub const PL: PeakParams = PeakParams {
        window: 25,
        residual_max: 0.15,
        min_height: 0.06,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeakCandidate {
    pub index: usize,
    /// Position on the spectrum axis (eV).
    pub position: f64,
    pub height: f64,
    /// Distance between the surrounding minima (or data boundaries), eV.
    pub est_width: f64,
    /// The window reached past the data boundary on at least one side.
    pub is_edge: bool,
    /// Max |residual| of the local vetting fit, if it ran.
    pub vet_residual_max: Option<f64>,
    /// Amplitude of the local vetting fit, if it ran.
    pub vet_amplitude: Option<f64>,
    /// Passed vetting. Always false for edge candidates.
    pub accepted: bool,
    /// Why the local fit could not run, if it failed.
    pub vet_error: Option<String>,
}

impl PeakCandidate {
    /// Candidates that seed the multi-Gaussian fit: vetted peaks plus edge
    /// peaks, which help the fit but are never reported as transitions.
    pub fn seeds_fit(&self) -> bool {
        self.accepted || self.is_edge
    }

    /// Initial σ for a Gaussian seeded from this candidate.
    pub fn initial_sigma(&self) -> f64 {
        self.est_width / 2.0 / FWHM_PER_SIGMA
    }
}

/// Indices `i` whose value strictly exceeds every other value within
/// `window` positions on both sides (window truncated at the boundary).
fn strict_local_maxima(values: &[f64], window: usize) -> Result<Vec<usize>> {
    if window == 0 {
        return param("peak window must be at least 1");
    }
    if window >= values.len() {
        return param(format!(
            "peak window {window} must be smaller than the data length {}",
            values.len()
        ));
    }
    let n = values.len();
    Ok((0..n)
        .filter(|&i| {
            let lo = i.saturating_sub(window);
            let hi = (i + window).min(n - 1);
            (lo..=hi).all(|j| j == i || values[i] > values[j])
        })
        .collect())
}

fn is_edge(index: usize, window: usize, len: usize) -> bool {
    index < window || index + window > len - 1
}

/// Local minima by the same rule as the peaks, applied to the negated data.
pub fn find_minima(spectrum: &Spectrum, window: usize) -> Result<Vec<usize>> {
    let neg: Vec<f64> = spectrum.intensities().iter().map(|v| -v).collect();
    strict_local_maxima(&neg, window)
}

/// Windowed local maxima with width estimates from the surrounding minima.
pub fn preselect_peaks(spectrum: &Spectrum, window: usize) -> Result<Vec<PeakCandidate>> {
    let y = spectrum.intensities();
    let axis = spectrum.axis();
    let n = y.len();
    let maxima = strict_local_maxima(y, window)?;
    let minima = find_minima(spectrum, window)?;
    Ok(maxima
        .into_iter()
        .map(|i| {
            let left = minima.iter().rev().find(|&&m| m < i).copied().unwrap_or(0);
            let right = minima.iter().find(|&&m| m > i).copied().unwrap_or(n - 1);
            PeakCandidate {
                index: i,
                position: axis[i],
                height: y[i],
                est_width: axis[right] - axis[left],
                is_edge: is_edge(i, window, n),
                vet_residual_max: None,
                vet_amplitude: None,
                accepted: false,
                vet_error: None,
            }
        })
        .collect())
}

/// Fits a single Gaussian on the candidate's `window` neighbourhood and
/// accepts it when the residuals stay small and the fitted amplitude is
/// large enough. Edge candidates are returned unvetted and unaccepted.
pub fn vet_peak(
    spectrum: &Spectrum,
    candidate: &PeakCandidate,
    params: &PeakParams,
) -> PeakCandidate {
    let mut out = candidate.clone();
    out.accepted = false;
    if candidate.is_edge {
        return out;
    }
    let n = spectrum.len();
    let lo = candidate.index.saturating_sub(params.window);
    let hi = (candidate.index + params.window).min(n - 1);
    let x = &spectrum.axis()[lo..=hi];
    let y = &spectrum.intensities()[lo..=hi];

    let span = x[x.len() - 1] - x[0];
    let step = span / (x.len() - 1) as f64;
    let bounds = vec![
        Bound::at_least(0.0),
        Bound::new(x[0], x[x.len() - 1]),
        Bound::at_least(1e-6),
    ];
    // Start from both the minima-based and the half-maximum width and keep
    // the better local fit.
    let starts = [
        candidate.initial_sigma(),
        half_max_sigma(y, candidate.index - lo, step),
    ];
    let mut best: Option<std::result::Result<lsq::FitResult, lsq::LsqError>> = None;
    for sigma0 in starts {
        let problem = FitProblem {
            model: &Gaussian,
            x,
            y,
            initial: vec![
                candidate.height.max(0.0),
                candidate.position,
                sigma0.clamp(step, span / 2.0),
            ],
            bounds: Some(bounds.clone()),
        };
        let r = lsq::fit(&problem, &FitOptions::default());
        best = Some(match (best, r) {
            (Some(Ok(b)), Ok(f)) => Ok(if f.cost < b.cost { f } else { b }),
            (Some(Ok(b)), Err(_)) => Ok(b),
            (_, r) => r,
        });
    }
    match best.expect("at least one start") {
        Ok(fit) => {
            let resid = fit.max_abs_residual();
            let amp = fit.params[0];
            out.vet_residual_max = Some(resid);
            out.vet_amplitude = Some(amp);
            out.accepted = resid < params.residual_max && amp > params.min_height;
        }
        Err(e) => {
            log::debug!("vetting fit failed at index {}: {e}", candidate.index);
            out.vet_error = Some(e.to_string());
        }
    }
    out
}

/// σ from the full width at half maximum around `peak`, in grid steps.
fn half_max_sigma(y: &[f64], peak: usize, step: f64) -> f64 {
    let half = y[peak] / 2.0;
    let mut l = peak;
    while l > 0 && y[l] > half {
        l -= 1;
    }
    let mut r = peak;
    while r + 1 < y.len() && y[r] > half {
        r += 1;
    }
    (r - l).max(1) as f64 * step / FWHM_PER_SIGMA
}

/// Preselects and vets every candidate.
pub fn find_peaks(spectrum: &Spectrum, params: &PeakParams) -> Result<Vec<PeakCandidate>> {
    Ok(preselect_peaks(spectrum, params.window)?
        .iter()
        .map(|c| vet_peak(spectrum, c, params))
        .collect())
}
