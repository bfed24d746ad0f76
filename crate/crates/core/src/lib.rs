//! Batch analysis of single-photon-emitter spectroscopy data.
//!
//! The crate covers the whole offline pipeline:
//!
//! * [`types`]: spectra, count traces, g² histograms and unit conversion.
//! * [`lsq`]: a bounded Levenberg–Marquardt engine with analytic or
//!   finite-difference Jacobians.
//! * [`models`]: Gaussian line-shape models with analytic partials.
//! * [`peaks`]: windowed local-maximum preselection and Gaussian vetting.
//! * [`fitting`]: multi-Gaussian fits, ZPL extraction, PL decomposition,
//!   transition sets.
//! * [`qc`]: confocal-scan emitter detection, bleaching check and the three
//!   data-selection criteria.
//! * [`correlation`]: sliding-window spacing densities, conditional subsets
//!   and correlation heatmaps.
//! * [`simulate`]: Monte Carlo generator of phonon-ladder transition sets.
//! * [`afm`]: tilt correction, flake segmentation and morphometry of AFM
//!   height maps.
//!
//! Batch entry points take an [`Execution`] mode. With the default
//! `parallel` feature the parallel mode runs on rayon; without it every
//! mode falls back to a sequential loop.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod afm;
pub mod correlation;
pub mod error;
pub mod fitting;
pub mod grid;
pub mod label;
pub mod lsq;
pub mod models;
pub mod par;
pub mod peaks;
pub mod qc;
pub mod simulate;
pub mod types;

pub use error::{Error, Result};
pub use par::Execution;
pub use types::{
    energy_to_wavelength, mean_abs_diff, normalize, rebin_trace, wavelength_to_energy, AxisUnit,
    CountTrace, EmitterRecord, G2Histogram, Spectrum, HC_EV_NM,
};
