//! Emitter detection in confocal scans and the automatic data selection:
//! bleaching check, then brightness/stability, g²(0), and fit quality.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, param, Result};
use crate::fitting::{analyze_spectrum, MultiGaussFit};
use crate::grid::Grid;
use crate::label::{connected_components, Pixel};
use crate::par::{self, Execution};
use crate::peaks::PeakParams;
use crate::types::{mean_abs_diff, rebin_trace, CountTrace, EmitterRecord, G2Histogram};

/// Confocal fluorescence scan.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanImage {
    pub pixels: Grid<f64>,
    /// µm per pixel.
    pub step: f64,
}

impl ScanImage {
    pub fn new(pixels: Grid<f64>, step: f64) -> Result<Self> {
        if !(step > 0.0) {
            return param(format!("scan step must be positive, got {step}"));
        }
        if pixels.data().iter().any(|v| !v.is_finite() || *v < 0.0) {
            return invalid("scan pixels must be finite and non-negative");
        }
        Ok(Self { pixels, step })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectParams {
    /// A pixel must be at least this many times brighter than each probe.
    pub ratio: f64,
    /// Probe distance along each axis direction, in pixels.
    pub neighbor_distance: usize,
}

impl Default for DetectParams {
    fn default() -> Self {
        Self {
            ratio: 4.0,
            neighbor_distance: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectedSpot {
    pub pixels: Vec<Pixel>,
    /// Brightness-weighted `(x, y)` in µm, x along columns.
    pub centroid: (f64, f64),
    pub peak_brightness: f64,
}

/// 3×3 median filter; out-of-range indices reflect onto the border pixel.
pub fn median_filter_3x3(img: &Grid<f64>) -> Grid<f64> {
    let (rows, cols) = (img.rows(), img.cols());
    let mut out = Grid::filled(rows, cols, 0.0);
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut buf = [0.0f64; 9];
    for r in 0..rows {
        for c in 0..cols {
            let mut k = 0;
            for dr in -1..=1isize {
                for dc in -1..=1isize {
                    buf[k] = img.at(clamp(r as isize + dr, rows), clamp(c as isize + dc, cols));
                    k += 1;
                }
            }
            buf.sort_by(f64::total_cmp);
            *out.get_mut(r, c) = buf[4];
        }
    }
    out
}

/// Marks pixels that are positive and at least `ratio` times brighter than
/// the pixel `neighbor_distance` steps away in every axis direction that
/// stays inside the image.
pub fn emitter_mask(smoothed: &Grid<f64>, params: &DetectParams) -> Grid<bool> {
    let (rows, cols) = (smoothed.rows(), smoothed.cols());
    let d = params.neighbor_distance;
    let mut mask = Grid::filled(rows, cols, false);
    for r in 0..rows {
        for c in 0..cols {
            let p = smoothed.at(r, c);
            if !(p > 0.0) {
                continue;
            }
            let probes = [
                r.checked_sub(d).map(|rr| (rr, c)),
                (r + d < rows).then_some((r + d, c)),
                c.checked_sub(d).map(|cc| (r, cc)),
                (c + d < cols).then_some((r, c + d)),
            ];
            let mut any = false;
            let ok = probes.iter().flatten().all(|&(qr, qc)| {
                any = true;
                p >= params.ratio * smoothed.at(qr, qc)
            });
            *mask.get_mut(r, c) = ok && any;
        }
    }
    mask
}

/// Median-smooths the scan, marks bright pixels and groups them into spots.
pub fn detect_emitters(scan: &ScanImage, params: &DetectParams) -> Result<Vec<DetectedSpot>> {
    let min = 2 * params.neighbor_distance + 1;
    if scan.pixels.rows() < min || scan.pixels.cols() < min {
        return param(format!(
            "scan is {}×{}, needs at least {min}×{min} pixels",
            scan.pixels.rows(),
            scan.pixels.cols()
        ));
    }
    let smoothed = median_filter_3x3(&scan.pixels);
    let mask = emitter_mask(&smoothed, params);
    Ok(connected_components(&mask)
        .into_iter()
        .map(|pixels| {
            let (mut w, mut sx, mut sy, mut peak) = (0.0, 0.0, 0.0, f64::NEG_INFINITY);
            for &(r, c) in &pixels {
                let v = smoothed.at(r, c);
                w += v;
                sx += v * c as f64;
                sy += v * r as f64;
                peak = peak.max(v);
            }
            DetectedSpot {
                centroid: (sx / w * scan.step, sy / w * scan.step),
                peak_brightness: peak,
                pixels,
            }
        })
        .collect())
}

/// Thresholds of the selection chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QcThresholds {
    /// Optimisation sweeps must reach `max ≥ ratio · min`.
    pub bleach_ratio: f64,
    /// Mean count rate must exceed this (counts/s).
    pub min_count_rate: f64,
    /// Mean |Δ| of the max-normalized binned trace must stay below this.
    pub max_stability: f64,
    /// Bin width for the stability evaluation (s).
    pub stability_bin: f64,
    /// g²(0) must stay below this.
    pub max_g2: f64,
    /// Laser repetition period (s).
    pub rep_period: f64,
    /// Side peaks used on each side of zero delay.
    pub g2_side_peaks: usize,
    /// Max |residual| of the PLE multi-Gaussian fit must stay below this.
    pub max_fit_residual: f64,
}

impl Default for QcThresholds {
    fn default() -> Self {
        Self {
            bleach_ratio: 3.5,
            min_count_rate: 8000.0,
            max_stability: 0.1,
            stability_bin: 0.5,
            max_g2: 0.5,
            rep_period: 12.5e-9,
            g2_side_peaks: 3,
            max_fit_residual: 0.26,
        }
    }
}

/// A criterion could not be computed from the data at hand.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("not evaluable: {0}")]
pub struct NotEvaluable(pub String);

/// True when the sweep contrast `max / min` is below `ratio`.
pub fn is_bleached(trace: &CountTrace, ratio: f64) -> Result<bool> {
    let counts = trace.counts();
    if counts.is_empty() {
        return param("bleaching check needs a non-empty trace");
    }
    let max = *counts.iter().max().unwrap() as f64;
    let min = *counts.iter().min().unwrap() as f64;
    if max == 0.0 {
        return Ok(true);
    }
    Ok(max < ratio * min)
}

/// Bleached if any supplied sweep fails the contrast test. `None` when no
/// sweeps were recorded.
pub fn check_bleaching(traces: &[CountTrace], ratio: f64) -> Result<Option<bool>> {
    if traces.is_empty() {
        return Ok(None);
    }
    for t in traces {
        if is_bleached(t, ratio)? {
            return Ok(Some(true));
        }
    }
    Ok(Some(false))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityOutcome {
    /// counts/s
    pub mean_rate: f64,
    pub stability_metric: f64,
    pub pass: bool,
}

/// Brightness and blinking check on the trace rebinned to
/// `stability_bin`.
pub fn criterion_stability(
    trace: &CountTrace,
    th: &QcThresholds,
) -> std::result::Result<StabilityOutcome, NotEvaluable> {
    let binned = rebin_trace(trace, th.stability_bin).map_err(|e| NotEvaluable(e.to_string()))?;
    let counts = binned.counts();
    if counts.len() < 2 {
        return Err(NotEvaluable(format!(
            "trace spans {} bins of {} s, need at least 2",
            counts.len(),
            th.stability_bin
        )));
    }
    let mean = counts.iter().sum::<u64>() as f64 / counts.len() as f64;
    let mean_rate = mean / binned.bin_width();
    let max = *counts.iter().max().unwrap() as f64;
    let stability_metric = if max > 0.0 {
        let norm: Vec<f64> = counts.iter().map(|&c| c as f64 / max).collect();
        mean_abs_diff(&norm).map_err(|e| NotEvaluable(e.to_string()))?
    } else {
        0.0
    };
    Ok(StabilityOutcome {
        mean_rate,
        stability_metric,
        pass: mean_rate > th.min_count_rate && stability_metric < th.max_stability,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct G2Outcome {
    pub g2_zero: f64,
    pub pass: bool,
}

/// Sum of coincidences in bins whose centers fall in `[lo, hi)`.
fn window_sum(g2: &G2Histogram, lo: f64, hi: f64) -> f64 {
    g2.delays()
        .iter()
        .zip(g2.coincidences())
        .filter(|(&d, _)| d >= lo && d < hi)
        .map(|(_, &c)| c)
        .sum()
}

/// Pulsed g²(0) as the zero-delay peak area over the mean side-peak area.
pub fn g2_zero(
    g2: &G2Histogram,
    rep_period: f64,
    side_peaks: usize,
) -> std::result::Result<f64, NotEvaluable> {
    if !(rep_period > 0.0) || side_peaks == 0 {
        return Err(NotEvaluable(
            "repetition period and side peak count must be positive".into(),
        ));
    }
    let half = rep_period / 2.0;
    let reach = side_peaks as f64 * rep_period + half;
    let d = g2.delays();
    let bw = g2.bin_width;
    let (lo_edge, hi_edge) = (d[0] - bw / 2.0, d[d.len() - 1] + bw / 2.0);
    if lo_edge > -reach + bw || hi_edge < reach - bw {
        return Err(NotEvaluable(format!(
            "histogram must span ±{reach:e} s to cover {side_peaks} side peaks"
        )));
    }
    let central = window_sum(g2, -half, half);
    let mut side = 0.0;
    for k in 1..=side_peaks {
        let c = k as f64 * rep_period;
        side += window_sum(g2, c - half, c + half) + window_sum(g2, -c - half, -c + half);
    }
    let side_mean = side / (2 * side_peaks) as f64;
    if !(side_mean > 0.0) {
        return Err(NotEvaluable("no coincidences in the side peaks".into()));
    }
    Ok(central / side_mean)
}

pub fn criterion_g2(
    g2: &G2Histogram,
    th: &QcThresholds,
) -> std::result::Result<G2Outcome, NotEvaluable> {
    let g = g2_zero(g2, th.rep_period, th.g2_side_peaks)?;
    Ok(G2Outcome {
        g2_zero: g,
        pass: g < th.max_g2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitQualityOutcome {
    pub max_resid: f64,
    pub pass: bool,
}

pub fn criterion_fit_quality(fit: &MultiGaussFit, th: &QcThresholds) -> FitQualityOutcome {
    FitQualityOutcome {
        max_resid: fit.max_abs_residual,
        pass: fit.converged && fit.max_abs_residual < th.max_fit_residual,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    NotEvaluable,
    /// Skipped because an earlier stage already failed.
    NotEvaluated,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::NotEvaluable => "not_evaluable",
            Status::NotEvaluated => "not_evaluated",
        }
    }

    fn from_pass(pass: bool) -> Self {
        if pass {
            Status::Pass
        } else {
            Status::Fail
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Bleaching,
    Stability,
    G2,
    FitQuality,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Bleaching => "bleaching",
            Stage::Stability => "stability",
            Stage::G2 => "g2",
            Stage::FitQuality => "fit_quality",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionReport {
    pub emitter_id: u64,
    pub mean_count_rate: Option<f64>,
    pub stability_metric: Option<f64>,
    pub g2_zero: Option<f64>,
    pub fit_max_residual: Option<f64>,
    pub bleached: bool,
    pub bleaching: Status,
    pub stability: Status,
    pub g2: Status,
    pub fit_quality: Status,
    pub passed: bool,
    pub failed_stage: Option<Stage>,
    /// Why a criterion was not evaluable, if one was.
    pub note: Option<String>,
}

impl SelectionReport {
    fn new(emitter_id: u64) -> Self {
        Self {
            emitter_id,
            mean_count_rate: None,
            stability_metric: None,
            g2_zero: None,
            fit_max_residual: None,
            bleached: false,
            bleaching: Status::NotEvaluated,
            stability: Status::NotEvaluated,
            g2: Status::NotEvaluated,
            fit_quality: Status::NotEvaluated,
            passed: false,
            failed_stage: None,
            note: None,
        }
    }
}

/// Runs the selection chain on one record, stopping at the first failure.
pub fn evaluate_record(
    record: &EmitterRecord,
    th: &QcThresholds,
    ple_params: &PeakParams,
) -> SelectionReport {
    let mut rep = SelectionReport::new(record.id);

    match check_bleaching(&record.optimization_traces, th.bleach_ratio) {
        Ok(Some(true)) => {
            rep.bleached = true;
            rep.bleaching = Status::Fail;
            rep.failed_stage = Some(Stage::Bleaching);
            return rep;
        }
        Ok(Some(false)) => rep.bleaching = Status::Pass,
        // No sweeps recorded means no evidence of bleaching.
        Ok(None) => rep.bleaching = Status::NotEvaluable,
        Err(e) => {
            rep.bleaching = Status::NotEvaluable;
            rep.note = Some(e.to_string());
        }
    }

    let fail = |rep: &mut SelectionReport, stage: Stage| {
        rep.failed_stage = Some(stage);
        rep.passed = false;
    };

    match record.trace.as_ref().map(|t| criterion_stability(t, th)) {
        Some(Ok(o)) => {
            rep.mean_count_rate = Some(o.mean_rate);
            rep.stability_metric = Some(o.stability_metric);
            rep.stability = Status::from_pass(o.pass);
            if !o.pass {
                fail(&mut rep, Stage::Stability);
                return rep;
            }
        }
        other => {
            rep.stability = Status::NotEvaluable;
            rep.note = Some(match other {
                Some(Err(e)) => e.0,
                _ => "count trace missing".into(),
            });
            fail(&mut rep, Stage::Stability);
            return rep;
        }
    }

    match record.g2.as_ref().map(|g| criterion_g2(g, th)) {
        Some(Ok(o)) => {
            rep.g2_zero = Some(o.g2_zero);
            rep.g2 = Status::from_pass(o.pass);
            if !o.pass {
                fail(&mut rep, Stage::G2);
                return rep;
            }
        }
        other => {
            rep.g2 = Status::NotEvaluable;
            rep.note = Some(match other {
                Some(Err(e)) => e.0,
                _ => "g2 histogram missing".into(),
            });
            fail(&mut rep, Stage::G2);
            return rep;
        }
    }

    let Some(ple) = record.ple.as_ref() else {
        rep.fit_quality = Status::NotEvaluable;
        rep.note = Some("PLE spectrum missing".into());
        fail(&mut rep, Stage::FitQuality);
        return rep;
    };
    match analyze_spectrum(ple, ple_params) {
        Ok(a) => {
            let o = criterion_fit_quality(&a.fit, th);
            rep.fit_max_residual = Some(o.max_resid);
            rep.fit_quality = Status::from_pass(o.pass);
            if !o.pass {
                fail(&mut rep, Stage::FitQuality);
                return rep;
            }
        }
        // A PLE spectrum that cannot be fitted counts as a bad fit.
        Err(e) => {
            rep.fit_quality = Status::Fail;
            rep.note = Some(e.to_string());
            fail(&mut rep, Stage::FitQuality);
            return rep;
        }
    }

    rep.passed = true;
    rep
}

/// Evaluates every record independently. Reports are in input order.
pub fn select_emitters(
    records: &[EmitterRecord],
    th: &QcThresholds,
    ple_params: &PeakParams,
    exec: Execution,
) -> Vec<SelectionReport> {
    par::map(exec, records, |_, r| evaluate_record(r, th, ple_params))
}
