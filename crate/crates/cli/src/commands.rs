//! Subcommand implementations. Each reads its inputs, runs the core
//! pipeline and writes its outputs under the output directory.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hbnspec::afm::{aggregate_stats, analyze, AggregateStats, FlakeStats, HeightMap};
use hbnspec::correlation::{
    build_heatmap, fit_density_peaks, spacing_density_to, zpl_distance_density_to, DensityMap,
    HeatMap,
};
use hbnspec::fitting::{analyze_spectrum, extract_zpl, TransitionSet};
use hbnspec::par::{self, Execution};
use hbnspec::qc::{detect_emitters, select_emitters, ScanImage, SelectionReport};
use hbnspec::simulate::{
    generate_dataset, noise_rng, synthesize_pl, synthesize_ple, synthetic_zpls, SimEmitter,
};
use hbnspec::{normalize, EmitterRecord};
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::io::{self, ManifestEntry};

#[derive(Debug, Serialize)]
pub struct SpotReport {
    pub id: usize,
    pub x_um: f64,
    pub y_um: f64,
    pub pixel_count: usize,
    pub peak_brightness: f64,
}

/// Pixel size from flag, then sidecar, then config.
fn pixel_size(grid: &Path, flag: Option<f64>, cfg: Option<f64>) -> Result<Option<f64>> {
    if let Some(v) = flag {
        if !(v > 0.0) {
            bail!("pixel size must be positive, got {v}");
        }
        return Ok(Some(v));
    }
    Ok(io::read_sidecar(grid)?.or(cfg))
}

pub fn detect(
    scan: &Path,
    cfg: &PipelineConfig,
    out: &Path,
    flag_step: Option<f64>,
) -> Result<Vec<SpotReport>> {
    let pixels = io::read_grid(scan)?;
    let step = pixel_size(scan, flag_step, cfg.detect.pixel_size)?.unwrap_or_else(|| {
        log::warn!(
            "no pixel size given for {}; centroids are in pixels",
            scan.display()
        );
        1.0
    });
    let image =
        ScanImage::new(pixels, step).with_context(|| format!("invalid scan {}", scan.display()))?;
    let spots = detect_emitters(&image, &cfg.detect.params())?;
    let report: Vec<SpotReport> = spots
        .iter()
        .enumerate()
        .map(|(i, s)| SpotReport {
            id: i,
            x_um: s.centroid.0,
            y_um: s.centroid.1,
            pixel_count: s.pixels.len(),
            peak_brightness: s.peak_brightness,
        })
        .collect();
    io::write(
        &out.join("spots.json"),
        &(serde_json::to_string_pretty(&report)? + "\n"),
    )?;
    Ok(report)
}

/// Records of a dataset in id order, with load notes logged.
pub fn load_dataset(dir: &Path, exec: Execution) -> Result<Vec<EmitterRecord>> {
    let entries = io::read_manifest(dir)?;
    let loaded = par::map(exec, &entries, |_, e| io::load_record(dir, e));
    Ok(loaded
        .into_iter()
        .map(|(rec, notes)| {
            for n in notes {
                log::warn!("{n}");
            }
            rec
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QcSummary {
    pub measured: usize,
    pub bleached: usize,
    pub passed: usize,
}

impl std::fmt::Display for QcSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "measured {} / bleached {} / passed {}",
            self.measured, self.bleached, self.passed
        )
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn format_selection(reports: &[SelectionReport]) -> String {
    let mut out = String::from(
        "emitter_id,bleached,mean_count_rate,stability_metric,g2_zero,fit_max_residual,\
         bleaching,stability,g2,fit_quality,passed,failed_stage,note\n",
    );
    for r in reports {
        let note = r.note.as_deref().unwrap_or("").replace([',', '\n'], ";");
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.emitter_id,
            r.bleached,
            opt(r.mean_count_rate),
            opt(r.stability_metric),
            opt(r.g2_zero),
            opt(r.fit_max_residual),
            r.bleaching.as_str(),
            r.stability.as_str(),
            r.g2.as_str(),
            r.fit_quality.as_str(),
            r.passed,
            r.failed_stage.map_or("", |s| s.as_str()),
            note
        ));
    }
    out
}

pub fn qc(
    dataset: &Path,
    cfg: &PipelineConfig,
    out: &Path,
    exec: Execution,
) -> Result<(Vec<SelectionReport>, QcSummary)> {
    let records = load_dataset(dataset, exec)?;
    let reports = select_emitters(&records, &cfg.qc, &cfg.ple_peaks, exec);
    let summary = QcSummary {
        measured: reports.len(),
        bleached: reports.iter().filter(|r| r.bleached).count(),
        passed: reports.iter().filter(|r| r.passed).count(),
    };
    io::write(&out.join("selection.csv"), &format_selection(&reports))?;
    Ok((reports, summary))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FitOptions {
    pub zpl_window: bool,
    pub no_qc: bool,
}

fn fit_record(
    rec: &EmitterRecord,
    cfg: &PipelineConfig,
    apply_window: bool,
) -> Result<Option<TransitionSet>> {
    let pl = rec.pl.as_ref().context("PL spectrum missing")?;
    let zpl = extract_zpl(&normalize(pl)?)?;
    let [lo, hi] = cfg.fit.zpl_window;
    if apply_window && !(zpl >= lo && zpl <= hi) {
        return Ok(None);
    }
    let ple = rec.ple.as_ref().context("PLE spectrum missing")?;
    let analysis = analyze_spectrum(ple, &cfg.ple_peaks)?;
    Ok(Some(analysis.transitions(rec.id, zpl)?))
}

/// Fits every (QC-passing) emitter and writes `transitions.csv`. Emitters
/// whose fit fails are logged and left out.
pub fn fit(
    dataset: &Path,
    cfg: &PipelineConfig,
    out: &Path,
    opts: FitOptions,
    exec: Execution,
) -> Result<Vec<TransitionSet>> {
    let records = load_dataset(dataset, exec)?;
    let records: Vec<EmitterRecord> = if opts.no_qc || cfg.fit.skip_qc {
        records
    } else {
        let reports = select_emitters(&records, &cfg.qc, &cfg.ple_peaks, exec);
        records
            .into_iter()
            .zip(reports)
            .filter_map(|(r, rep)| rep.passed.then_some(r))
            .collect()
    };
    let apply_window = opts.zpl_window || cfg.fit.apply_zpl_window;
    let results = par::map(exec, &records, |_, r| fit_record(r, cfg, apply_window));
    let mut sets = Vec::new();
    for (r, res) in records.iter().zip(results) {
        match res {
            Ok(Some(s)) => sets.push(s),
            Ok(None) => log::debug!("emitter {}: ZPL outside window", r.id),
            Err(e) => log::warn!("emitter {}: fit failed: {e:#}", r.id),
        }
    }
    io::write_transitions(&out.join("transitions.csv"), &sets)?;
    Ok(sets)
}

pub fn format_density(m: &DensityMap) -> String {
    let mut out = String::from("center_eV,value\n");
    for (c, v) in m.centers.iter().zip(&m.values) {
        out.push_str(&format!("{c},{v}\n"));
    }
    out
}

/// Matrix with the density centers as header row and the slice centers as
/// first column.
pub fn format_heatmap(h: &HeatMap) -> String {
    let mut out = String::from("slice_eV");
    for c in &h.density_centers {
        out.push_str(&format!(",{c}"));
    }
    out.push('\n');
    for (r, s) in h.slice_centers.iter().enumerate() {
        out.push_str(&s.to_string());
        for v in h.row(r) {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CorrelateOptions {
    pub from_zpl: bool,
    /// Fit this many Gaussians to the spacing density.
    pub fit_peaks: Option<usize>,
}

#[derive(Debug)]
pub struct CorrelateOutput {
    pub density: DensityMap,
    pub heatmap: HeatMap,
    pub zpl_density: Option<DensityMap>,
    pub skipped_rows: usize,
}

pub fn correlate(
    transitions: &Path,
    cfg: &PipelineConfig,
    out: &Path,
    opts: CorrelateOptions,
    exec: Execution,
) -> Result<CorrelateOutput> {
    let (sets, skipped_rows) = io::read_transitions(transitions)?;
    if skipped_rows > 0 {
        log::warn!(
            "skipped {skipped_rows} malformed rows in {}",
            transitions.display()
        );
    }
    let p = &cfg.correlation;
    let density = spacing_density_to(&sets, p.density_width, p.density_step, p.max_detuning)?;
    let heatmap = build_heatmap(&sets, p, exec)?;
    io::write(&out.join("density.csv"), &format_density(&density))?;
    io::write(&out.join("heatmap.csv"), &format_heatmap(&heatmap))?;
    let zpl_density = if opts.from_zpl {
        let z = zpl_distance_density_to(&sets, p.density_width, p.density_step, p.max_detuning)?;
        io::write(&out.join("zpl_density.csv"), &format_density(&z))?;
        Some(z)
    } else {
        None
    };
    if let Some(n) = opts.fit_peaks {
        let peaks = fit_density_peaks(&density, n)?;
        if let Some(w) = &peaks.warning {
            log::warn!("{w}");
        }
        io::write(
            &out.join("density_peaks.json"),
            &(serde_json::to_string_pretty(&peaks)? + "\n"),
        )?;
    }
    Ok(CorrelateOutput {
        density,
        heatmap,
        zpl_density,
        skipped_rows,
    })
}

#[derive(Debug, Clone, Default)]
pub struct SimulateOptions {
    /// Also write a dataset of synthetic PLE/PL spectra.
    pub spectra: bool,
    /// Overrides the configured spectrum noise.
    pub noise: Option<f64>,
    /// Measured ZPLs, one per line, instead of synthetic ones.
    pub zpls: Option<PathBuf>,
}

pub fn simulate(
    cfg: &PipelineConfig,
    out: &Path,
    opts: &SimulateOptions,
    exec: Execution,
) -> Result<Vec<SimEmitter>> {
    let zpls = match &opts.zpls {
        Some(p) => io::read_value_list(p)?,
        None => synthetic_zpls(cfg.synthetic_zpl_count, cfg.simulate.seed),
    };
    let emitters = generate_dataset(&zpls, &cfg.simulate, exec)?;
    let sets: Vec<TransitionSet> = emitters.iter().map(SimEmitter::to_transition_set).collect();
    io::write_transitions(&out.join("transitions.csv"), &sets)?;

    if opts.spectra {
        let mut synth = cfg.synthesis;
        if let Some(n) = opts.noise {
            if !(n >= 0.0) {
                bail!("noise must be non-negative, got {n}");
            }
            synth.noise = n;
        }
        let dir = out.join("dataset");
        let seed = cfg.simulate.seed;
        let written = par::map(exec, &emitters, |_, e| -> Result<ManifestEntry> {
            let ple = synthesize_ple(&e.transitions, &synth, &mut noise_rng(seed, e.id))?;
            let pl = synthesize_pl(e.zpl, &synth)?;
            let (ple_rel, pl_rel) = (format!("ple/{}.csv", e.id), format!("pl/{}.csv", e.id));
            io::write_spectrum(&dir.join(&ple_rel), &ple)?;
            io::write_spectrum(&dir.join(&pl_rel), &pl)?;
            Ok(ManifestEntry {
                id: e.id,
                ple: Some(ple_rel),
                pl: Some(pl_rel),
                ..Default::default()
            })
        });
        let entries = written.into_iter().collect::<Result<Vec<_>>>()?;
        io::write_manifest(&dir, &entries)?;
    }
    Ok(emitters)
}

#[derive(Debug, Serialize)]
pub struct AfmSummary {
    pub flake_count: usize,
    pub pixel_size_nm: f64,
    pub threshold_nm: f64,
    pub aggregate: Option<AggregateStats>,
}

pub fn format_flakes(flakes: &[FlakeStats]) -> String {
    let mut out =
        String::from("flake_id,pixel_count,mean_height_nm,area_nm2,equiv_diameter_nm,layers\n");
    for (i, f) in flakes.iter().enumerate() {
        out.push_str(&format!(
            "{i},{},{},{},{},{}\n",
            f.pixel_count, f.mean_height, f.area, f.equiv_diameter, f.layers
        ));
    }
    out
}

pub fn afm(
    heightmap: &Path,
    cfg: &PipelineConfig,
    out: &Path,
    flag_pixel: Option<f64>,
) -> Result<(Vec<FlakeStats>, AfmSummary)> {
    let grid = io::read_grid(heightmap)?;
    let px = pixel_size(heightmap, flag_pixel, cfg.afm.pixel_size)?.with_context(|| {
        format!(
            "no pixel size for {}: pass --pixel-size, write {}, or set afm.pixel_size",
            heightmap.display(),
            io::sidecar_path(heightmap).display()
        )
    })?;
    let map = HeightMap::new(grid, px)?;
    let flakes = analyze(&map, cfg.afm.threshold)?;
    let summary = AfmSummary {
        flake_count: flakes.len(),
        pixel_size_nm: px,
        threshold_nm: cfg.afm.threshold,
        aggregate: (!flakes.is_empty())
            .then(|| aggregate_stats(&flakes))
            .transpose()?,
    };
    io::write(&out.join("flakes.csv"), &format_flakes(&flakes))?;
    io::write(
        &out.join("afm_summary.json"),
        &(serde_json::to_string_pretty(&summary)? + "\n"),
    )?;
    Ok((flakes, summary))
}

/// Creates the output directory.
pub fn prepare_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}
