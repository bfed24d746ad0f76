//! Pipeline configuration.
//!
//! Values are layered as TOML trees: built-in defaults, then the config
//! file, then `--set section.key=value` overrides, then dedicated flags.
//! The merged tree is deserialized once, which rejects unknown keys, and
//! validated before any command runs.

use std::path::Path;

use anyhow::{anyhow, bail, Context};
use hbnspec::correlation::CorrelationParams;
use hbnspec::peaks::PeakParams;
use hbnspec::qc::{DetectParams, QcThresholds};
use hbnspec::simulate::{SimConfig, SpectrumSynthesis};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    /// Keep only emitters whose ZPL lies in this window, eV.
    pub zpl_window: [f64; 2],
    pub apply_zpl_window: bool,
    /// Fit every emitter, not only those passing QC.
    pub skip_qc: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            zpl_window: [2.115, 2.232],
            apply_zpl_window: false,
            skip_qc: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AfmConfig {
    /// nm
    pub threshold: f64,
    /// nm per pixel; used when no sidecar file or flag gives one.
    pub pixel_size: Option<f64>,
}

impl Default for AfmConfig {
    fn default() -> Self {
        Self {
            threshold: hbnspec::afm::DEFAULT_THRESHOLD_NM,
            pixel_size: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectConfig {
    pub ratio: f64,
    pub neighbor_distance: usize,
    /// µm per pixel; used when no sidecar file or flag gives one.
    pub pixel_size: Option<f64>,
}

impl Default for DetectConfig {
    fn default() -> Self {
        let d = DetectParams::default();
        Self {
            ratio: d.ratio,
            neighbor_distance: d.neighbor_distance,
            pixel_size: None,
        }
    }
}

impl DetectConfig {
    pub fn params(&self) -> DetectParams {
        DetectParams {
            ratio: self.ratio,
            neighbor_distance: self.neighbor_distance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Worker threads; 0 means one per processor.
    pub jobs: usize,
    /// Synthetic ZPLs drawn when `simulate` gets no ZPL file.
    pub synthetic_zpl_count: usize,
    pub detect: DetectConfig,
    pub ple_peaks: PeakParams,
    pub pl_peaks: PeakParams,
    pub qc: QcThresholds,
    pub fit: FitConfig,
    pub correlation: CorrelationParams,
    pub simulate: SimConfig,
    pub synthesis: SpectrumSynthesis,
    pub afm: AfmConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            jobs: 0,
            synthetic_zpl_count: 152,
            detect: DetectConfig::default(),
            ple_peaks: PeakParams::PLE,
            pl_peaks: PeakParams::PL,
            qc: QcThresholds::default(),
            fit: FitConfig::default(),
            correlation: CorrelationParams::default(),
            simulate: SimConfig {
                seed: 42,
                ..SimConfig::default()
            },
            synthesis: SpectrumSynthesis::default(),
            afm: AfmConfig::default(),
        }
    }
}

/// Overlays `top` onto `base`, recursing into tables.
fn merge(base: &mut Table, top: Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Parses the right-hand side of `--set`: any TOML value, or a bare string.
fn parse_value(raw: &str) -> Value {
    let doc = format!("v = {raw}");
    match doc.parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.into())),
        Err(_) => Value::String(raw.into()),
    }
}

fn set_path(root: &mut Table, dotted: &str, value: Value) -> anyhow::Result<()> {
    let mut parts: Vec<&str> = dotted.split('.').collect();
    let last = parts
        .pop()
        .filter(|s| !s.is_empty())
        .ok_or_else(|| anyhow!("empty key in --set"))?;
    let mut table = root;
    for p in parts {
        table = match table
            .entry(p.to_string())
            .or_insert_with(|| Value::Table(Table::new()))
        {
            Value::Table(t) => t,
            _ => bail!("`{p}` in `{dotted}` is not a section"),
        };
    }
    table.insert(last.to_string(), value);
    Ok(())
}

/// Sources for one configuration, lowest precedence first.
#[derive(Debug, Default, Clone)]
pub struct ConfigSources<'a> {
    pub file: Option<&'a Path>,
    /// `section.key=value` pairs.
    pub overrides: &'a [String],
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
}

impl PipelineConfig {
    pub fn load(src: &ConfigSources) -> anyhow::Result<Self> {
        let mut tree =
            Table::try_from(PipelineConfig::default()).context("serializing defaults")?;
        if let Some(path) = src.file {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            let file: Table = text
                .parse()
                .with_context(|| format!("parsing config {}", path.display()))?;
            merge(&mut tree, file);
        }
        for kv in src.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| anyhow!("--set expects key=value, got `{kv}`"))?;
            set_path(&mut tree, k.trim(), parse_value(v.trim()))?;
        }
        if let Some(seed) = src.seed {
            let seed = i64::try_from(seed).context("seed must fit in a signed 64-bit integer")?;
            set_path(&mut tree, "simulate.seed", Value::Integer(seed))?;
        }
        if let Some(jobs) = src.jobs {
            set_path(&mut tree, "jobs", Value::Integer(jobs as i64))?;
        }
        let cfg: PipelineConfig = tree.try_into().context("invalid configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        let d = &self.detect;
        if !(d.ratio > 0.0) || d.neighbor_distance == 0 {
            bail!("detect.ratio must be positive and detect.neighbor_distance at least 1");
        }
        for (name, p) in [("ple_peaks", &self.ple_peaks), ("pl_peaks", &self.pl_peaks)] {
            if p.window == 0 || !(p.residual_max > 0.0) || !(p.min_height >= 0.0) {
                bail!("{name}: window must be ≥ 1, residual_max > 0, min_height ≥ 0");
            }
        }
        let q = &self.qc;
        let positive = [
            ("bleach_ratio", q.bleach_ratio),
            ("min_count_rate", q.min_count_rate),
            ("max_stability", q.max_stability),
            ("stability_bin", q.stability_bin),
            ("max_g2", q.max_g2),
            ("rep_period", q.rep_period),
            ("max_fit_residual", q.max_fit_residual),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                bail!("qc.{name} must be positive, got {v}");
            }
        }
        if q.g2_side_peaks == 0 {
            bail!("qc.g2_side_peaks must be at least 1");
        }
        let [lo, hi] = self.fit.zpl_window;
        if !(lo < hi) {
            bail!("fit.zpl_window must be increasing");
        }
        self.correlation.validate()?;
        self.simulate.validate()?;
        let s = &self.synthesis;
        if !(s.sigma > 0.0) || !(s.decay > 0.0) || !(s.noise >= 0.0) {
            bail!("synthesis: sigma and decay must be positive, noise non-negative");
        }
        if !(s.ple_step_nm > 0.0 && s.pl_step_nm > 0.0) {
            bail!("synthesis: grid steps must be positive");
        }
        if self.synthetic_zpl_count == 0 {
            bail!("synthetic_zpl_count must be at least 1");
        }
        if !(self.afm.threshold > 0.0) {
            bail!("afm.threshold must be positive");
        }
        for (name, v) in [
            ("afm", self.afm.pixel_size),
            ("detect", self.detect.pixel_size),
        ] {
            if v.is_some_and(|v| !(v > 0.0)) {
                bail!("{name}.pixel_size must be positive");
            }
        }
        Ok(())
    }
}
