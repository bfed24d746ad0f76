//! Flat-file formats.
//!
//! * Spectrum: two-column CSV with header `energy_eV,intensity` or
//!   `wavelength_nm,intensity`.
//! * Grid (scan, height map): headerless row-major numeric CSV. The pixel
//!   size may sit in a sidecar file `<grid>.pixel_size`.
//! * Count trace: `bin_width_s,<seconds>` then one count per line.
//! * g² histogram: header `delay_s,coincidences`.
//! * Transitions: `emitter_id,zpl_eV,transitions_eV`, transitions joined
//!   with `;`. Floats use the shortest representation that round-trips.
//! * Dataset: directory with `manifest.csv`
//!   (`emitter_id,x_um,y_um,ple,pl,trace,g2,optimization`), paths relative
//!   to the directory, empty cells for missing data, optimisation sweeps
//!   joined with `;`.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use hbnspec::fitting::TransitionSet;
use hbnspec::grid::Grid;
use hbnspec::{CountTrace, EmitterRecord, G2Histogram, Spectrum};

fn reader(path: &Path, headers: bool) -> Result<csv::Reader<fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(headers)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))
}

fn num(field: &str, path: &Path, line: usize) -> Result<f64> {
    field
        .parse::<f64>()
        .map_err(|_| anyhow!("{}:{line}: `{field}` is not a number", path.display()))
}

pub fn read_spectrum(path: &Path) -> Result<Spectrum> {
    let mut rdr = reader(path, true)?;
    let unit = rdr
        .headers()
        .with_context(|| format!("reading header of {}", path.display()))?
        .get(0)
        .unwrap_or("")
        .to_ascii_lowercase();
    let (mut axis, mut y) = (Vec::new(), Vec::new());
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.with_context(|| format!("reading {}", path.display()))?;
        if rec.len() != 2 {
            bail!("{}:{}: expected 2 columns", path.display(), i + 2);
        }
        axis.push(num(&rec[0], path, i + 2)?);
        y.push(num(&rec[1], path, i + 2)?);
    }
    let s = match unit.as_str() {
        "energy_ev" => Spectrum::new(axis, y),
        "wavelength_nm" => Spectrum::from_wavelength(axis, y),
        other => bail!(
            "{}: first header must be energy_eV or wavelength_nm, got `{other}`",
            path.display()
        ),
    };
    s.with_context(|| format!("invalid spectrum in {}", path.display()))
}

pub fn write_spectrum(path: &Path, s: &Spectrum) -> Result<()> {
    let mut out = String::from("energy_eV,intensity\n");
    for (x, y) in s.axis().iter().zip(s.intensities()) {
        out.push_str(&format!("{x},{y}\n"));
    }
    write(path, &out)
}

pub fn read_grid(path: &Path) -> Result<Grid<f64>> {
    let mut rdr = reader(path, false)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.with_context(|| format!("reading {}", path.display()))?;
        rows.push(
            rec.iter()
                .map(|f| num(f, path, i + 1))
                .collect::<Result<_>>()?,
        );
    }
    if rows.is_empty() || rows[0].is_empty() {
        bail!("{}: grid is empty", path.display());
    }
    Grid::from_rows(rows).with_context(|| format!("{}: ragged grid", path.display()))
}

pub fn write_grid(path: &Path, g: &Grid<f64>) -> Result<()> {
    let mut out = String::new();
    for row in g.iter_rows() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    write(path, &out)
}

pub fn sidecar_path(grid: &Path) -> PathBuf {
    let mut s = grid.as_os_str().to_owned();
    s.push(".pixel_size");
    PathBuf::from(s)
}

/// Pixel size from the sidecar next to `grid`, if present.
pub fn read_sidecar(grid: &Path) -> Result<Option<f64>> {
    let p = sidecar_path(grid);
    if !p.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
    let v = num(text.trim(), &p, 1)?;
    if !(v > 0.0) {
        bail!("{}: pixel size must be positive", p.display());
    }
    Ok(Some(v))
}

pub fn read_trace(path: &Path) -> Result<CountTrace> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let head = lines
        .next()
        .ok_or_else(|| anyhow!("{}: empty trace", path.display()))?;
    let bw = head.strip_prefix("bin_width_s,").ok_or_else(|| {
        anyhow!(
            "{}: first line must be bin_width_s,<seconds>",
            path.display()
        )
    })?;
    let bw = num(bw.trim(), path, 1)?;
    let counts = lines
        .enumerate()
        .map(|(i, l)| {
            l.parse::<u64>()
                .map_err(|_| anyhow!("{}:{}: `{l}` is not a count", path.display(), i + 2))
        })
        .collect::<Result<Vec<_>>>()?;
    CountTrace::new(bw, counts).with_context(|| format!("invalid trace in {}", path.display()))
}

pub fn write_trace(path: &Path, t: &CountTrace) -> Result<()> {
    let mut out = format!("bin_width_s,{}\n", t.bin_width());
    for c in t.counts() {
        out.push_str(&format!("{c}\n"));
    }
    write(path, &out)
}

pub fn read_g2(path: &Path) -> Result<G2Histogram> {
    let mut rdr = reader(path, true)?;
    let (mut d, mut c) = (Vec::new(), Vec::new());
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.with_context(|| format!("reading {}", path.display()))?;
        if rec.len() != 2 {
            bail!("{}:{}: expected 2 columns", path.display(), i + 2);
        }
        d.push(num(&rec[0], path, i + 2)?);
        c.push(num(&rec[1], path, i + 2)?);
    }
    if d.len() < 2 {
        bail!("{}: g2 histogram needs at least 2 bins", path.display());
    }
    let bw = d[1] - d[0];
    G2Histogram::new(bw, d, c)
        .with_context(|| format!("invalid g2 histogram in {}", path.display()))
}

pub fn write_g2(path: &Path, g: &G2Histogram) -> Result<()> {
    let mut out = String::from("delay_s,coincidences\n");
    for (d, c) in g.delays().iter().zip(g.coincidences()) {
        out.push_str(&format!("{d},{c}\n"));
    }
    write(path, &out)
}

pub const TRANSITIONS_HEADER: &str = "emitter_id,zpl_eV,transitions_eV";

pub fn format_transitions(sets: &[TransitionSet]) -> String {
    let mut out = format!("{TRANSITIONS_HEADER}\n");
    for s in sets {
        let t: Vec<String> = s.transitions.iter().map(|v| v.to_string()).collect();
        out.push_str(&format!(
            "{},{},{}\n",
            s.emitter_id,
            s.zpl_energy,
            t.join(";")
        ));
    }
    out
}

pub fn write_transitions(path: &Path, sets: &[TransitionSet]) -> Result<()> {
    write(path, &format_transitions(sets))
}

fn parse_transition_row(line: &str) -> Option<TransitionSet> {
    let mut f = line.split(',');
    let id = f.next()?.trim().parse::<u64>().ok()?;
    let zpl = f
        .next()?
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())?;
    let list = f.next().unwrap_or("").trim();
    if f.next().is_some() {
        return None;
    }
    let t = if list.is_empty() {
        Vec::new()
    } else {
        list.split(';')
            .map(|v| v.trim().parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<Vec<f64>>>()?
    };
    Some(TransitionSet::new(id, zpl, t))
}

/// Parsed sets and the number of malformed rows that were skipped.
pub fn read_transitions(path: &Path) -> Result<(Vec<TransitionSet>, usize)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == TRANSITIONS_HEADER => {}
        Some(h) => bail!(
            "{}: expected header `{TRANSITIONS_HEADER}`, got `{h}`",
            path.display()
        ),
        None => return Ok((Vec::new(), 0)),
    }
    let (mut sets, mut skipped) = (Vec::new(), 0);
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match parse_transition_row(line) {
            Some(s) => sets.push(s),
            None => {
                log::warn!("{}:{}: skipping malformed row", path.display(), i + 2);
                skipped += 1;
            }
        }
    }
    Ok((sets, skipped))
}

/// One value per line; a non-numeric first line is treated as a header.
pub fn read_value_list(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (i, l) in text.lines().map(str::trim).enumerate() {
        if l.is_empty() {
            continue;
        }
        match l.split(',').next().unwrap_or("").trim().parse::<f64>() {
            Ok(v) => out.push(v),
            Err(_) if i == 0 => {}
            Err(_) => bail!("{}:{}: `{l}` is not a number", path.display(), i + 1),
        }
    }
    Ok(out)
}

pub const MANIFEST_HEADER: &str = "emitter_id,x_um,y_um,ple,pl,trace,g2,optimization";

/// One manifest row; file paths are relative to the dataset directory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ManifestEntry {
    pub id: u64,
    pub position: Option<(f64, f64)>,
    pub ple: Option<String>,
    pub pl: Option<String>,
    pub trace: Option<String>,
    pub g2: Option<String>,
    pub optimization: Vec<String>,
}

pub fn write_manifest(dir: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut out = format!("{MANIFEST_HEADER}\n");
    let o = |v: &Option<String>| v.clone().unwrap_or_default();
    for e in entries {
        let (x, y) = e.position.map_or((String::new(), String::new()), |(x, y)| {
            (x.to_string(), y.to_string())
        });
        out.push_str(&format!(
            "{},{x},{y},{},{},{},{},{}\n",
            e.id,
            o(&e.ple),
            o(&e.pl),
            o(&e.trace),
            o(&e.g2),
            e.optimization.join(";")
        ));
    }
    write(&dir.join("manifest.csv"), &out)
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let path = dir.join("manifest.csv");
    let mut rdr = reader(&path, true)?;
    let headers: Vec<String> = rdr
        .headers()
        .with_context(|| format!("reading {}", path.display()))?
        .iter()
        .map(str::to_string)
        .collect();
    if headers.join(",") != MANIFEST_HEADER {
        bail!("{}: expected header `{MANIFEST_HEADER}`", path.display());
    }
    let mut ids = BTreeSet::new();
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.with_context(|| format!("reading {}", path.display()))?;
        if rec.len() != 8 {
            bail!("{}:{line}: expected 8 columns", path.display());
        }
        let id: u64 = rec[0]
            .parse()
            .map_err(|_| anyhow!("{}:{line}: bad emitter id `{}`", path.display(), &rec[0]))?;
        if !ids.insert(id) {
            bail!("{}:{line}: duplicate emitter id {id}", path.display());
        }
        let opt = |s: &str| (!s.is_empty()).then(|| s.to_string());
        let position = match (&rec[1], &rec[2]) {
            ("", "") => None,
            (x, y) => Some((num(x, &path, line)?, num(y, &path, line)?)),
        };
        out.push(ManifestEntry {
            id,
            position,
            ple: opt(&rec[3]),
            pl: opt(&rec[4]),
            trace: opt(&rec[5]),
            g2: opt(&rec[6]),
            optimization: rec[7]
                .split(';')
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect(),
        });
    }
    out.sort_by_key(|e| e.id);
    Ok(out)
}

fn keep<T>(r: Result<T>, notes: &mut Vec<String>, id: u64) -> Option<T> {
    r.map_err(|err| notes.push(format!("emitter {id}: {err:#}")))
        .ok()
}

/// Loads one record. Missing or unreadable files leave the field empty and
/// are reported back as notes.
pub fn load_record(dir: &Path, e: &ManifestEntry) -> (EmitterRecord, Vec<String>) {
    let mut notes = Vec::new();
    let mut load = |rel: &Option<String>, kind: &str| -> Option<PathBuf> {
        let rel = rel.as_ref()?;
        let p = dir.join(rel);
        if p.exists() {
            Some(p)
        } else {
            notes.push(format!(
                "emitter {}: {kind} file {} missing",
                e.id,
                p.display()
            ));
            None
        }
    };
    let ple = load(&e.ple, "ple");
    let pl = load(&e.pl, "pl");
    let trace = load(&e.trace, "trace");
    let g2 = load(&e.g2, "g2");
    let opts: Vec<PathBuf> = e
        .optimization
        .iter()
        .filter_map(|o| load(&Some(o.clone()), "optimization"))
        .collect();

    let mut rec = EmitterRecord::new(e.id);
    rec.scan_position = e.position;
    rec.ple = ple.and_then(|p| keep(read_spectrum(&p), &mut notes, e.id));
    rec.pl = pl.and_then(|p| keep(read_spectrum(&p), &mut notes, e.id));
    rec.trace = trace.and_then(|p| keep(read_trace(&p), &mut notes, e.id));
    rec.g2 = g2.and_then(|p| keep(read_g2(&p), &mut notes, e.id));
    rec.optimization_traces = opts
        .iter()
        .filter_map(|p| keep(read_trace(p), &mut notes, e.id))
        .collect();
    (rec, notes)
}

pub fn write(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, content).with_context(|| format!("writing {}", path.display()))
}
