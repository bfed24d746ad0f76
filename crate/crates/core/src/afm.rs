//! AFM height maps: tilt removal, flake segmentation and layer counts.

use serde::Serialize;

use crate::error::{param, Result};
use crate::grid::Grid;
use crate::label::{connected_components, Pixel};

/// Interlayer spacing of hBN, nm.
pub const LAYER_THICKNESS_NM: f64 = 0.333;

pub const DEFAULT_THRESHOLD_NM: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct HeightMap {
    /// nm
    pub pixels: Grid<f64>,
    /// nm per pixel
    pub pixel_size: f64,
}

impl HeightMap {
    pub fn new(pixels: Grid<f64>, pixel_size: f64) -> Result<Self> {
        if !(pixel_size > 0.0) || !pixel_size.is_finite() {
            return param(format!("pixel size must be positive, got {pixel_size}"));
        }
        if pixels.data().iter().any(|v| !v.is_finite()) {
            return param("height map contains non-finite values");
        }
        Ok(Self { pixels, pixel_size })
    }
}

/// Least-squares slope and intercept of `y` against `0..n`.
fn line_fit(y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    let xm = (n - 1.0) / 2.0;
    let ym = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, v) in y.iter().enumerate() {
        let dx = i as f64 - xm;
        sxy += dx * (v - ym);
        sxx += dx * dx;
    }
    let slope = sxy / sxx;
    (slope, ym - slope * xm)
}

/// Removes a line fitted to the column means, then one fitted to the row
/// means, and shifts the result so its minimum is zero.
pub fn correct_tilt(map: &HeightMap) -> Result<HeightMap> {
    let (rows, cols) = (map.pixels.rows(), map.pixels.cols());
    if rows < 2 || cols < 2 {
        return param(format!(
            "tilt correction needs at least 2×2 pixels, got {rows}×{cols}"
        ));
    }
    let mut z = map.pixels.clone();

    let col_means: Vec<f64> = (0..cols)
        .map(|c| (0..rows).map(|r| z.at(r, c)).sum::<f64>() / rows as f64)
        .collect();
    let (a, b) = line_fit(&col_means);
    for r in 0..rows {
        for c in 0..cols {
            *z.get_mut(r, c) -= a * c as f64 + b;
        }
    }

    let row_means: Vec<f64> = z
        .iter_rows()
        .map(|row| row.iter().sum::<f64>() / cols as f64)
        .collect();
    let (a, b) = line_fit(&row_means);
    for r in 0..rows {
        for c in 0..cols {
            *z.get_mut(r, c) -= a * r as f64 + b;
        }
    }

    let min = z.data().iter().copied().fold(f64::INFINITY, f64::min);
    Ok(HeightMap {
        pixels: z.map(|v| v - min),
        pixel_size: map.pixel_size,
    })
}

/// Pixels at or above `threshold` grouped by 8-connectivity.
pub fn segment_flakes(map: &HeightMap, threshold: f64) -> Result<Vec<Vec<Pixel>>> {
    if !(threshold > 0.0) {
        return param(format!("threshold must be positive, got {threshold}"));
    }
    Ok(connected_components(&map.pixels.map(|&h| h >= threshold)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlakeStats {
    pub pixel_count: usize,
    /// nm
    pub mean_height: f64,
    /// nm²
    pub area: f64,
    /// nm
    pub equiv_diameter: f64,
    pub layers: f64,
}

impl FlakeStats {
    pub fn from_parts(pixel_count: usize, mean_height: f64, pixel_size: f64) -> Self {
        let area = pixel_count as f64 * pixel_size * pixel_size;
        Self {
            pixel_count,
            mean_height,
            area,
            equiv_diameter: equivalent_diameter(area),
            layers: layers(mean_height),
        }
    }
}

pub fn layers(mean_height_nm: f64) -> f64 {
    mean_height_nm / LAYER_THICKNESS_NM
}

/// Diameter of the circle with the given area.
pub fn equivalent_diameter(area: f64) -> f64 {
    2.0 * (area / std::f64::consts::PI).sqrt()
}

pub fn flake_stats(map: &HeightMap, flake: &[Pixel]) -> Result<FlakeStats> {
    if flake.is_empty() {
        return param("flake has no pixels");
    }
    let sum: f64 = flake.iter().map(|&(r, c)| map.pixels.at(r, c)).sum();
    Ok(FlakeStats::from_parts(
        flake.len(),
        sum / flake.len() as f64,
        map.pixel_size,
    ))
}

/// Mean, population standard deviation and range of one quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: impl Iterator<Item = f64> + Clone) -> Option<Self> {
        let n = values.clone().count();
        if n == 0 {
            return None;
        }
        let mean = values.clone().sum::<f64>() / n as f64;
        let var = values.clone().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let (min, max) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
        Some(Self {
            mean,
            std: var.sqrt(),
            min,
            max,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AggregateStats {
    pub count: usize,
    pub height: Summary,
    pub layers: Summary,
    pub diameter: Summary,
}

pub fn aggregate_stats(flakes: &[FlakeStats]) -> Result<AggregateStats> {
    let (Some(height), Some(layers), Some(diameter)) = (
        Summary::of(flakes.iter().map(|f| f.mean_height)),
        Summary::of(flakes.iter().map(|f| f.layers)),
        Summary::of(flakes.iter().map(|f| f.equiv_diameter)),
    ) else {
        return param("no flakes to aggregate");
    };
    Ok(AggregateStats {
        count: flakes.len(),
        height,
        layers,
        diameter,
    })
}

/// Tilt-corrects, segments and measures every flake.
pub fn analyze(map: &HeightMap, threshold: f64) -> Result<Vec<FlakeStats>> {
    let flat = correct_tilt(map)?;
    segment_flakes(&flat, threshold)?
        .iter()
        .map(|f| flake_stats(&flat, f))
        .collect()
}
