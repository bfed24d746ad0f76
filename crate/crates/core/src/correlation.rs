//! Sliding-window densities of transition spacings, conditional subsets
//! and the slice × spacing heatmap.

use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::fitting::{multi_gauss_fit, GaussianComponent, TransitionSet};
use crate::grid::Grid;
use crate::par::{self, Execution};
use crate::peaks::preselect_peaks;
use crate::types::Spectrum;

/// Upper end of the spacing axis, eV.
pub const DEFAULT_MAX_DETUNING: f64 = 0.55;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityMap {
    /// Window centers, eV.
    pub centers: Vec<f64>,
    pub values: Vec<f64>,
    pub window_width: f64,
    pub step: f64,
}

impl DensityMap {
    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Index of the largest value; the first one wins on ties.
    pub fn argmax(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, v) in self.values.iter().enumerate() {
            if best.is_none_or(|b| *v > self.values[b]) {
                best = Some(i);
            }
        }
        best
    }

    pub fn scaled(&self, k: f64) -> DensityMap {
        DensityMap {
            values: self.values.iter().map(|v| v * k).collect(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowNormalization {
    /// Divide each row by the number of emitters in its subset.
    #[default]
    PerEmitter,
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorrelationParams {
    pub density_width: f64,
    pub density_step: f64,
    pub slice_width: f64,
    pub slice_step: f64,
    pub max_detuning: f64,
    pub normalization: RowNormalization,
}

impl Default for CorrelationParams {
    fn default() -> Self {
        Self {
            density_width: 0.050,
            density_step: 0.005,
            slice_width: 0.040,
            slice_step: 0.010,
            max_detuning: DEFAULT_MAX_DETUNING,
            normalization: RowNormalization::PerEmitter,
        }
    }
}

impl CorrelationParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("density_width", self.density_width),
            ("density_step", self.density_step),
            ("slice_width", self.slice_width),
            ("slice_step", self.slice_step),
            ("max_detuning", self.max_detuning),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return param(format!("{name} must be positive, got {v}"));
            }
        }
        Ok(())
    }
}

/// Rounds to 1e-12 eV so that window edges and spacings computed by
/// floating-point arithmetic compare like the decimal values they stand for.
pub fn snap(v: f64) -> f64 {
    (v * 1e12).round() / 1e12
}

/// `0, step, 2·step, …` up to `max` (inclusive within rounding).
pub fn window_centers(step: f64, max: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(max >= 0.0) {
        return param(format!("bad window grid: step {step}, max {max}"));
    }
    let n = (max / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| snap(k as f64 * step)).collect())
}

/// Counts `values` in `[c − window/2, c + window/2)` for each center.
pub fn sliding_density(
    values: impl IntoIterator<Item = f64>,
    window: f64,
    step: f64,
    max: f64,
) -> Result<DensityMap> {
    if !(window > 0.0) {
        return param(format!("density window must be positive, got {window}"));
    }
    let centers = window_centers(step, max)?;
    let mut sorted: Vec<f64> = values.into_iter().map(snap).collect();
    sorted.sort_by(f64::total_cmp);
    let half = window / 2.0;
    let values = centers
        .iter()
        .map(|&c| {
            let lo = sorted.partition_point(|&v| v < snap(c - half));
            let hi = sorted.partition_point(|&v| v < snap(c + half));
            (hi - lo) as f64
        })
        .collect();
    Ok(DensityMap {
        centers,
        values,
        window_width: window,
        step,
    })
}

/// Density of all pooled pairwise spacings, on `[0, 0.55]` eV.
pub fn spacing_density(sets: &[TransitionSet], window: f64, step: f64) -> Result<DensityMap> {
    spacing_density_to(sets, window, step, DEFAULT_MAX_DETUNING)
}

pub fn spacing_density_to(
    sets: &[TransitionSet],
    window: f64,
    step: f64,
    max: f64,
) -> Result<DensityMap> {
    sliding_density(
        sets.iter().flat_map(|s| s.pairwise_diffs.iter().copied()),
        window,
        step,
        max,
    )
}

/// Density of transition detunings from each emitter's ZPL.
pub fn zpl_distance_density(sets: &[TransitionSet], window: f64, step: f64) -> Result<DensityMap> {
    zpl_distance_density_to(sets, window, step, DEFAULT_MAX_DETUNING)
}

pub fn zpl_distance_density_to(
    sets: &[TransitionSet],
    window: f64,
    step: f64,
    max: f64,
) -> Result<DensityMap> {
    sliding_density(
        sets.iter().flat_map(|s| s.zpl_distances()),
        window,
        step,
        max,
    )
}

fn has_diff_in(set: &TransitionSet, lo: f64, hi: f64) -> bool {
    let (lo, hi) = (snap(lo), snap(hi));
    set.pairwise_diffs
        .iter()
        .map(|&d| snap(d))
        .any(|d| d >= lo && d < hi)
}

/// Sets with at least one pairwise spacing in `[center − width/2, center + width/2)`.
pub fn conditional_subset(sets: &[TransitionSet], center: f64, width: f64) -> Vec<TransitionSet> {
    let (lo, hi) = (center - width / 2.0, center + width / 2.0);
    sets.iter()
        .filter(|s| has_diff_in(s, lo, hi))
        .cloned()
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeatMap {
    /// Row axis, eV.
    pub slice_centers: Vec<f64>,
    /// Column axis, eV.
    pub density_centers: Vec<f64>,
    #[serde(skip)]
    pub matrix: Grid<f64>,
    pub slice_width: f64,
    pub density_width: f64,
    /// Emitters contributing to each row.
    pub subset_sizes: Vec<usize>,
    pub normalization: RowNormalization,
}

impl HeatMap {
    pub fn row(&self, r: usize) -> &[f64] {
        self.matrix.row(r)
    }

    /// Row whose slice center is closest to `energy`.
    pub fn nearest_row(&self, energy: f64) -> usize {
        nearest(&self.slice_centers, energy)
    }

    pub fn nearest_column(&self, energy: f64) -> usize {
        nearest(&self.density_centers, energy)
    }
}

fn nearest(axis: &[f64], v: f64) -> usize {
    axis.iter()
        .enumerate()
        .min_by(|a, b| (a.1 - v).abs().total_cmp(&(b.1 - v).abs()))
        .map_or(0, |(i, _)| i)
}

/// One density row per slicing interval, computed on that interval's
/// conditional subset.
pub fn build_heatmap(
    sets: &[TransitionSet],
    params: &CorrelationParams,
    exec: Execution,
) -> Result<HeatMap> {
    params.validate()?;
    let slice_centers = window_centers(params.slice_step, params.max_detuning)?;
    let density_centers = window_centers(params.density_step, params.max_detuning)?;
    let rows: Vec<Result<(Vec<f64>, usize)>> = par::map(exec, &slice_centers, |_, &c| {
        let half = params.slice_width / 2.0;
        let subset: Vec<&TransitionSet> = sets
            .iter()
            .filter(|s| has_diff_in(s, c - half, c + half))
            .collect();
        let map = sliding_density(
            subset.iter().flat_map(|s| s.pairwise_diffs.iter().copied()),
            params.density_width,
            params.density_step,
            params.max_detuning,
        )?;
        let k = match params.normalization {
            RowNormalization::PerEmitter if !subset.is_empty() => 1.0 / subset.len() as f64,
            _ => 1.0,
        };
        Ok((
            map.values.into_iter().map(|v| v * k).collect(),
            subset.len(),
        ))
    });
    let mut data = Vec::with_capacity(slice_centers.len() * density_centers.len());
    let mut subset_sizes = Vec::with_capacity(slice_centers.len());
    for row in rows {
        let (values, n) = row?;
        data.extend(values);
        subset_sizes.push(n);
    }
    Ok(HeatMap {
        matrix: Grid::from_vec(slice_centers.len(), density_centers.len(), data)?,
        slice_centers,
        density_centers,
        slice_width: params.slice_width,
        density_width: params.density_width,
        subset_sizes,
        normalization: params.normalization,
    })
}

/// Gaussian components fitted to a density, strongest first.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityPeaks {
    pub components: Vec<GaussianComponent>,
    /// Set when fewer peaks than expected were found or the fit failed.
    pub warning: Option<String>,
}

/// Minimum relative height of a density maximum that seeds a component.
pub const DENSITY_PEAK_MIN_HEIGHT: f64 = 0.1;

/// Treats the density as a spectrum, preselects local maxima over half a
/// window, fits one Gaussian per interior maximum and keeps the
/// `expected_count` largest amplitudes.
pub fn fit_density_peaks(map: &DensityMap, expected_count: usize) -> Result<DensityPeaks> {
    let none = |warning: Option<String>| {
        Ok(DensityPeaks {
            components: Vec::new(),
            warning,
        })
    };
    let short = |found: usize| {
        (found < expected_count).then(|| format!("found {found} peaks, expected {expected_count}"))
    };
    let max = map.values.iter().copied().fold(0.0, f64::max);
    if !(max > 0.0) || map.values.len() < 3 {
        return none(short(0));
    }
    let norm: Vec<f64> = map.values.iter().map(|v| v / max).collect();
    let spectrum = Spectrum::new(map.centers.clone(), norm)?;
    let window = ((map.window_width / map.step / 2.0).round() as usize).max(1);
    let window = window.min((map.values.len() - 1) / 2).max(1);
    let candidates: Vec<_> = preselect_peaks(&spectrum, window)?
        .into_iter()
        .filter(|c| !c.is_edge && c.height >= DENSITY_PEAK_MIN_HEIGHT)
        .collect();
    if candidates.is_empty() {
        return none(short(0));
    }
    let fit = match multi_gauss_fit(&spectrum, &candidates) {
        Ok(f) if f.converged => f,
        Ok(_) => return none(Some("density fit did not converge".into())),
        Err(e) => return none(Some(format!("density fit failed: {e}"))),
    };
    let mut comps: Vec<GaussianComponent> = fit
        .components
        .iter()
        .map(|c| GaussianComponent::new(c.amplitude * max, c.center, c.sigma))
        .collect();
    comps.sort_by(|a, b| b.amplitude.total_cmp(&a.amplitude));
    comps.truncate(expected_count);
    Ok(DensityPeaks {
        warning: short(comps.len()),
        components: comps,
    })
}

/// Indices of values strictly greater than both neighbours (plateaus
/// count once, at their first index, when both sides drop).
pub fn local_maxima(values: &[f64]) -> Vec<usize> {
    let mut out = Vec::new();
    let n = values.len();
    let mut i = 1;
    while i + 1 < n {
        if values[i] > values[i - 1] {
            let mut j = i;
            while j + 1 < n && values[j + 1] == values[i] {
                j += 1;
            }
            if j + 1 < n && values[j + 1] < values[i] {
                out.push(i);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(id: u64, zpl: f64, t: &[f64]) -> TransitionSet {
        TransitionSet::new(id, zpl, t.to_vec())
    }

    fn ladder(id: u64) -> TransitionSet {
        set(id, 2.16, &[2.49, 2.655, 2.82])
    }

    fn idx(map: &DensityMap, e: f64) -> usize {
        nearest(&map.centers, e)
    }

    #[test]
    fn counting_example() {
        let m = sliding_density([0.165, 0.165, 0.330], 0.050, 0.005, 0.55).unwrap();
        assert_eq!(m.values[idx(&m, 0.165)], 2.0);
        assert_eq!(m.values[idx(&m, 0.330)], 1.0);
        assert_eq!(m.centers.len(), 111);
        assert!((m.centers[110] - 0.55).abs() < 1e-12);
    }

    #[test]
    fn empty_pool_is_zero() {
        let m = spacing_density(&[], 0.05, 0.005).unwrap();
        assert!(m.values.iter().all(|&v| v == 0.0));
        let m = zpl_distance_density(&[set(0, 2.1, &[])], 0.05, 0.005).unwrap();
        assert_eq!(m.total(), 0.0);
        assert!(spacing_density(&[], 0.0, 0.005).is_err());
    }

    #[test]
    fn half_open_windows() {
        // Value exactly at the upper edge of the window centered at 0.1.
        let m = sliding_density([0.125], 0.05, 0.025, 0.2).unwrap();
        assert_eq!(m.values[idx(&m, 0.1)], 0.0);
        assert_eq!(m.values[idx(&m, 0.15)], 1.0);
    }

    #[test]
    fn zpl_distance_example() {
        let m = zpl_distance_density(&[set(0, 2.156, &[2.490])], 0.050, 0.005).unwrap();
        assert_eq!(m.values[idx(&m, 0.334)], 1.0);
        let shifted = zpl_distance_density(&[set(0, 2.166, &[2.500])], 0.050, 0.005).unwrap();
        assert_eq!(m, shifted);
    }

    #[test]
    fn all_pairs_pooled() {
        let s = ladder(0);
        assert_eq!(s.pairwise_diffs.len(), 3);
        let m = spacing_density(&[s], 0.050, 0.005).unwrap();
        assert_eq!(m.values[idx(&m, 0.165)], 2.0);
        assert_eq!(m.values[idx(&m, 0.330)], 1.0);
    }

    #[test]
    fn conditional_examples() {
        let a = set(0, 2.0, &[2.4, 2.565, 2.73]);
        let b = set(1, 2.0, &[2.4, 2.5]);
        let sub = conditional_subset(&[a.clone(), b.clone()], 0.160, 0.040);
        assert_eq!(sub, vec![a.clone()]);
        let single = set(2, 2.0, &[2.4]);
        let all = conditional_subset(&[a, b, single], 1.0, 2.0);
        assert_eq!(all.len(), 2);
    }

    #[test]
    fn ladder_heatmap_rows() {
        let sets: Vec<_> = (0..5).map(ladder).collect();
        let h = build_heatmap(&sets, &CorrelationParams::default(), Execution::Parallel).unwrap();
        let r165 = h.nearest_row(0.165);
        let r330 = h.nearest_row(0.330);
        assert_eq!(h.row(r165), h.row(r330));
        assert!(h.row(r165).iter().any(|&v| v > 0.0));
        for r in 0..h.slice_centers.len() {
            let c = h.slice_centers[r];
            let covers = [0.165, 0.330]
                .iter()
                .any(|d| d >= &(c - 0.02) && d < &(c + 0.02));
            assert_eq!(h.subset_sizes[r] > 0, covers, "row {c}");
            if !covers {
                assert!(h.row(r).iter().all(|&v| v == 0.0));
            }
        }
        // Per-emitter normalization: the 165 column holds two spacings per emitter.
        assert_eq!(h.row(r165)[h.nearest_column(0.165)], 2.0);
    }

    #[test]
    fn single_emitter_rows_all_or_nothing() {
        let sets = vec![set(0, 2.1, &[2.4, 2.52, 2.69])];
        let params = CorrelationParams {
            normalization: RowNormalization::Raw,
            ..Default::default()
        };
        let full = spacing_density(&sets, 0.05, 0.005).unwrap();
        let h = build_heatmap(&sets, &params, Execution::Sequential).unwrap();
        for r in 0..h.slice_centers.len() {
            let row = h.row(r);
            assert!(row == full.values.as_slice() || row.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn density_peaks_two_modes() {
        let centers = window_centers(0.005, 0.55).unwrap();
        let values: Vec<f64> = centers
            .iter()
            .map(|&c| {
                crate::models::gaussian(300.0, 0.158, 0.02, c)
                    + crate::models::gaussian(120.0, 0.317, 0.025, c)
            })
            .collect();
        let map = DensityMap {
            centers,
            values,
            window_width: 0.05,
            step: 0.005,
        };
        let p = fit_density_peaks(&map, 2).unwrap();
        assert!(p.warning.is_none());
        assert_eq!(p.components.len(), 2);
        assert!((p.components[0].center - 0.158).abs() < 0.005);
        assert!((p.components[1].center - 0.317).abs() < 0.005);
        assert!((p.components[0].amplitude - 300.0).abs() < 1.0);

        let one = fit_density_peaks(&map.scaled(1.0), 1).unwrap();
        assert_eq!(one.components.len(), 1);
        let three = fit_density_peaks(&map, 3).unwrap();
        assert_eq!(three.components.len(), 2);
        assert!(three.warning.is_some());
    }

    #[test]
    fn density_peaks_flat() {
        let centers = window_centers(0.005, 0.55).unwrap();
        let map = DensityMap {
            values: vec![4.0; centers.len()],
            centers,
            window_width: 0.05,
            step: 0.005,
        };
        let p = fit_density_peaks(&map, 2).unwrap();
        assert!(p.components.is_empty());
        assert!(p.warning.is_some());
        assert!(fit_density_peaks(&map.scaled(0.0), 0)
            .unwrap()
            .warning
            .is_none());
    }

    #[test]
    fn local_maxima_examples() {
        assert_eq!(
            local_maxima(&[0.0, 1.0, 0.0, 2.0, 2.0, 1.0, 3.0]),
            vec![1, 3]
        );
        assert!(local_maxima(&[1.0, 1.0, 1.0]).is_empty());
        assert!(local_maxima(&[0.0, 1.0, 2.0]).is_empty());
    }

    fn arb_sets() -> impl Strategy<Value = Vec<TransitionSet>> {
        proptest::collection::vec(proptest::collection::vec(2.3f64..2.9, 0..6), 0..12).prop_map(
            |v| {
                v.into_iter()
                    .enumerate()
                    .map(|(i, t)| TransitionSet::new(i as u64, 2.15, t))
                    .collect()
            },
        )
    }

    proptest! {
        #[test]
        fn subset_monotone(sets in arb_sets(), c in 0.0f64..0.6, w in 0.001f64..0.2, extra in 0.0f64..0.2) {
            let small = conditional_subset(&sets, c, w);
            // Widening about the same center contains the old interval.
            let big = conditional_subset(&sets, c, w + extra);
            for s in &small {
                prop_assert!(big.contains(s));
            }
        }

        #[test]
        fn rows_match_independent_density(sets in arb_sets()) {
            let params = CorrelationParams::default();
            let h = build_heatmap(&sets, &params, Execution::Parallel).unwrap();
            for (r, &c) in h.slice_centers.iter().enumerate() {
                let sub = conditional_subset(&sets, c, params.slice_width);
                let mut expect = spacing_density(&sub, params.density_width, params.density_step).unwrap();
                if !sub.is_empty() {
                    expect = expect.scaled(1.0 / sub.len() as f64);
                }
                prop_assert_eq!(h.row(r), expect.values.as_slice());
                prop_assert!(h.row(r).iter().all(|&v| v >= 0.0));
            }
            let seq = build_heatmap(&sets, &params, Execution::Sequential).unwrap();
            prop_assert_eq!(seq, h);
        }

        #[test]
        fn disjoint_windows_conserve_count(sets in arb_sets()) {
            let w = 0.05;
            let m = spacing_density(&sets, w, w).unwrap();
            let last = *m.centers.last().unwrap();
            let expect = sets
                .iter()
                .flat_map(|s| s.pairwise_diffs.iter())
                .map(|&d| snap(d))
                .filter(|&d| d >= snap(-w / 2.0) && d < snap(last + w / 2.0))
                .count();
            prop_assert_eq!(m.total(), expect as f64);
        }

        #[test]
        fn ladder_symmetry(d in 0.06f64..0.25, n in 1usize..6, zpl in 2.0f64..2.2) {
            let sets: Vec<_> = (0..n as u64)
                .map(|i| TransitionSet::new(i, zpl, vec![zpl + 0.2, zpl + 0.2 + d, zpl + 0.2 + 2.0 * d]))
                .collect();
            let h = build_heatmap(&sets, &CorrelationParams::default(), Execution::Parallel).unwrap();
            let (rd, r2d) = (h.nearest_row(d), h.nearest_row(2.0 * d));
            let (cd, c2d) = (h.nearest_column(d), h.nearest_column(2.0 * d));
            if 2.0 * d <= DEFAULT_MAX_DETUNING - 0.03 {
                prop_assert_eq!(h.row(rd)[c2d] > 0.0, h.row(r2d)[cd] > 0.0);
            }
        }
    }
}
