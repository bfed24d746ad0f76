//! Measurement value types and the small numeric helpers shared by every
//! analysis stage.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, param, Error, Result};

/// Planck constant times speed of light in eV·nm.
pub const HC_EV_NM: f64 = 1239.841984;

/// Photon energy in eV for a vacuum wavelength in nm.
pub fn wavelength_to_energy(lambda_nm: f64) -> Result<f64> {
    if !(lambda_nm > 0.0) || !lambda_nm.is_finite() {
        return Err(Error::Domain(format!(
            "wavelength must be positive and finite, got {lambda_nm}"
        )));
    }
    Ok(HC_EV_NM / lambda_nm)
}

/// Inverse of [`wavelength_to_energy`].
pub fn energy_to_wavelength(energy_ev: f64) -> Result<f64> {
    if !(energy_ev > 0.0) || !energy_ev.is_finite() {
        return Err(Error::Domain(format!(
            "energy must be positive and finite, got {energy_ev}"
        )));
    }
    Ok(HC_EV_NM / energy_ev)
}

/// Unit of a spectrum axis as it appears in files. In memory every
/// [`Spectrum`] is on an ascending eV axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AxisUnit {
    Energy,
    Wavelength,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IntensityScale {
    Counts,
    Normalized,
}

/// Intensity versus photon energy.
///
/// The axis is in eV and strictly increasing; wavelength data is converted
/// and reversed on construction with [`Spectrum::from_wavelength`].
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    axis: Vec<f64>,
    intensities: Vec<f64>,
    scale: IntensityScale,
    pub metadata: BTreeMap<String, String>,
}

impl Spectrum {
    /// Builds a spectrum on an eV axis.
    pub fn new(axis_ev: Vec<f64>, intensities: Vec<f64>) -> Result<Self> {
        Self::with_scale(axis_ev, intensities, IntensityScale::Counts)
    }

    /// Builds a spectrum from a wavelength axis in nm (any monotonic order).
    pub fn from_wavelength(lambda_nm: Vec<f64>, intensities: Vec<f64>) -> Result<Self> {
        if lambda_nm.len() != intensities.len() {
            return invalid("axis and intensities differ in length");
        }
        let mut pairs = lambda_nm
            .iter()
            .map(|&l| wavelength_to_energy(l))
            .zip(intensities)
            .map(|(e, y)| e.map(|e| (e, y)))
            .collect::<Result<Vec<_>>>()?;
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (axis, intensities) = pairs.into_iter().unzip();
        Self::new(axis, intensities)
    }

    pub fn with_scale(
        axis_ev: Vec<f64>,
        intensities: Vec<f64>,
        scale: IntensityScale,
    ) -> Result<Self> {
        if axis_ev.len() != intensities.len() {
            return invalid(format!(
                "axis has {} points but intensities has {}",
                axis_ev.len(),
                intensities.len()
            ));
        }
        if axis_ev.len() < 3 {
            return invalid("a spectrum needs at least 3 points");
        }
        if axis_ev.iter().any(|v| !v.is_finite()) || intensities.iter().any(|v| !v.is_finite()) {
            return invalid("spectrum contains non-finite values");
        }
        if axis_ev.windows(2).any(|w| w[1] <= w[0]) {
            return invalid("spectrum axis must be strictly increasing");
        }
        if scale == IntensityScale::Normalized {
            let max = intensities
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max);
            if max != 1.0 {
                return invalid(format!("normalized spectrum must have max 1, got {max}"));
            }
        }
        Ok(Self {
            axis: axis_ev,
            intensities,
            scale,
            metadata: BTreeMap::new(),
        })
    }

    pub fn axis(&self) -> &[f64] {
        &self.axis
    }

    pub fn intensities(&self) -> &[f64] {
        &self.intensities
    }

    pub fn scale(&self) -> IntensityScale {
        self.scale
    }

    pub fn is_normalized(&self) -> bool {
        self.scale == IntensityScale::Normalized
    }

    pub fn len(&self) -> usize {
        self.axis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.axis.is_empty()
    }

    /// Index of the largest intensity; the first (lowest-energy) one on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.intensities.iter().enumerate() {
            if v > self.intensities[best] {
                best = i;
            }
        }
        best
    }

    pub fn max_intensity(&self) -> f64 {
        self.intensities[self.argmax()]
    }
}

/// Divides all intensities by the maximum so the result peaks at exactly 1.
pub fn normalize(spectrum: &Spectrum) -> Result<Spectrum> {
    let max = spectrum.max_intensity();
    if !(max > 0.0) {
        return Err(Error::Degenerate(format!(
            "cannot normalize a spectrum whose maximum is {max}"
        )));
    }
    let intensities = spectrum.intensities.iter().map(|v| v / max).collect();
    let mut out = Spectrum::with_scale(
        spectrum.axis.clone(),
        intensities,
        IntensityScale::Normalized,
    )?;
    out.metadata = spectrum.metadata.clone();
    Ok(out)
}

/// Photon counts in consecutive time bins.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountTrace {
    bin_width_ps: u64,
    counts: Vec<u64>,
}

impl CountTrace {
    /// `bin_width` in seconds. Internally the width is held in integer
    /// picoseconds so rebinning ratios are exact.
    pub fn new(bin_width: f64, counts: Vec<u64>) -> Result<Self> {
        if !(bin_width > 0.0) || !bin_width.is_finite() {
            return param(format!("bin width must be positive, got {bin_width}"));
        }
        let ps = (bin_width * 1e12).round();
        if ps < 1.0 {
            return param("bin width below 1 ps");
        }
        Ok(Self {
            bin_width_ps: ps as u64,
            counts,
        })
    }

    /// Bin width in seconds.
    pub fn bin_width(&self) -> f64 {
        self.bin_width_ps as f64 * 1e-12
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn duration(&self) -> f64 {
        self.bin_width() * self.counts.len() as f64
    }
}

/// Sums consecutive groups of bins into wider bins. A trailing partial
/// group is dropped.
pub fn rebin_trace(trace: &CountTrace, target_bin: f64) -> Result<CountTrace> {
    if !(target_bin > 0.0) || !target_bin.is_finite() {
        return param(format!("target bin must be positive, got {target_bin}"));
    }
    let target_ps = (target_bin * 1e12).round() as u64;
    if target_ps == 0 || !target_ps.is_multiple_of(trace.bin_width_ps) {
        return param(format!(
            "target bin {target_bin} s is not an integer multiple of {} s",
            trace.bin_width()
        ));
    }
    let group = (target_ps / trace.bin_width_ps) as usize;
    let counts = trace
        .counts
        .chunks_exact(group)
        .map(|c| c.iter().sum())
        .collect();
    Ok(CountTrace {
        bin_width_ps: target_ps,
        counts,
    })
}

/// Mean of |v[i+1] − v[i]| over consecutive pairs.
pub fn mean_abs_diff(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return param("mean_abs_diff needs at least two values");
    }
    let sum: f64 = values.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    Ok(sum / (values.len() - 1) as f64)
}

/// Start-stop coincidence histogram from a Hanbury Brown–Twiss measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct G2Histogram {
    pub bin_width: f64,
    delays: Vec<f64>,
    coincidences: Vec<f64>,
}

impl G2Histogram {
    pub fn new(bin_width: f64, delays: Vec<f64>, coincidences: Vec<f64>) -> Result<Self> {
        if !(bin_width > 0.0) {
            return param("g2 bin width must be positive");
        }
        if delays.len() != coincidences.len() || delays.is_empty() {
            return invalid("g2 delays and coincidences must be non-empty and equal length");
        }
        if delays.windows(2).any(|w| w[1] <= w[0]) {
            return invalid("g2 delays must be strictly increasing");
        }
        if coincidences.iter().any(|&c| !(c >= 0.0) || !c.is_finite()) {
            return invalid("g2 coincidences must be finite and non-negative");
        }
        let (lo, hi) = (delays[0], delays[delays.len() - 1]);
        if (lo + hi).abs() > bin_width * (1.0 + 1e-9) {
            return invalid("g2 delays must be symmetric about zero within one bin");
        }
        Ok(Self {
            bin_width,
            delays,
            coincidences,
        })
    }

    pub fn delays(&self) -> &[f64] {
        &self.delays
    }

    pub fn coincidences(&self) -> &[f64] {
        &self.coincidences
    }
}

/// Everything recorded for one fluorescent spot. Missing measurements (for
/// example after a bleaching abort) are `None`, never zero-filled.
#[derive(Debug, Clone, Default)]
pub struct EmitterRecord {
    pub id: u64,
    /// Scan position in µm.
    pub scan_position: Option<(f64, f64)>,
    pub ple: Option<Spectrum>,
    pub pl: Option<Spectrum>,
    pub trace: Option<CountTrace>,
    pub g2: Option<G2Histogram>,
    /// Brightness sweeps from the x/y(/z) position optimisation.
    pub optimization_traces: Vec<CountTrace>,
    /// Excitation power versus counts.
    pub saturation: Option<Spectrum>,
}

impl EmitterRecord {
    pub fn new(id: u64) -> Self {
        Self {
            id,
            ..Default::default()
        }
    }
}
