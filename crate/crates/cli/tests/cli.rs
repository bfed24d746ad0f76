#![allow(clippy::needless_range_loop)]

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use hbnspec::simulate::{synthesize_pl, synthesize_ple, SpectrumSynthesis};
use hbnspec::{CountTrace, G2Histogram};
use hbnspec_cli::io::{self, ManifestEntry};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

fn hbnspec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hbnspec"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_csv_grid(path: &Path, rows: &[Vec<f64>]) {
    let text: String = rows
        .iter()
        .map(|r| {
            r.iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(",")
                + "\n"
        })
        .collect();
    fs::write(path, text).unwrap();
}

#[test]
fn detect_two_blobs() {
    let dir = TempDir::new().unwrap();
    let mut img = vec![vec![1.0; 30]; 30];
    for (r0, c0) in [(5, 5), (20, 18)] {
        for r in r0..r0 + 3 {
            for c in c0..c0 + 3 {
                img[r][c] = 100.0;
            }
        }
    }
    let scan = dir.path().join("scan.csv");
    write_csv_grid(&scan, &img);
    let o = hbnspec(&[
        "detect",
        p(&scan),
        "--pixel-size",
        "0.1",
        "--out",
        p(dir.path()),
    ]);
    assert!(o.status.success(), "{o:?}");
    assert_eq!(stdout(&o).trim(), "2 spots");
    let spots: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("spots.json")).unwrap()).unwrap();
    let spots = spots.as_array().unwrap();
    assert_eq!(spots.len(), 2);
    assert!((spots[0]["x_um"].as_f64().unwrap() - 0.6).abs() < 1e-9);
    assert!((spots[0]["y_um"].as_f64().unwrap() - 0.6).abs() < 1e-9);
}

#[test]
fn detect_uniform_and_empty() {
    let dir = TempDir::new().unwrap();
    let scan = dir.path().join("flat.csv");
    write_csv_grid(&scan, &vec![vec![3.0; 20]; 20]);
    let o = hbnspec(&[
        "detect",
        p(&scan),
        "--pixel-size",
        "0.1",
        "--out",
        p(dir.path()),
    ]);
    assert!(o.status.success());
    let text = fs::read_to_string(dir.path().join("spots.json")).unwrap();
    assert_eq!(text.trim(), "[]");

    let empty = dir.path().join("empty.csv");
    fs::write(&empty, "").unwrap();
    let o = hbnspec(&["detect", p(&empty), "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!o.stderr.is_empty());
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let o = hbnspec(&[
        "simulate",
        "--set",
        "qc.no_such_key=1",
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[simulate]\nduplication = 0\n").unwrap();
    let o = hbnspec(&["simulate", "--config", p(&cfg), "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    let o = hbnspec(&[
        "correlate",
        p(&dir.path().join("missing.csv")),
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

/// Ten records: four pass, two bleached, two dim, one with poor
/// antibunching and one without a g² file.
fn qc_corpus(dir: &Path) {
    let synth = SpectrumSynthesis::default();
    let ple = synthesize_ple(
        &[2.45, 2.62, 2.78],
        &synth,
        &mut ChaCha8Rng::seed_from_u64(0),
    )
    .unwrap();
    io::write_spectrum(&dir.join("ple.csv"), &ple).unwrap();
    io::write_spectrum(&dir.join("pl.csv"), &synthesize_pl(2.15, &synth).unwrap()).unwrap();
    io::write_trace(
        &dir.join("bright.csv"),
        &CountTrace::new(0.01, vec![200; 300]).unwrap(),
    )
    .unwrap();
    io::write_trace(
        &dir.join("dim.csv"),
        &CountTrace::new(0.01, vec![50; 300]).unwrap(),
    )
    .unwrap();
    io::write_trace(
        &dir.join("sweep_ok.csv"),
        &CountTrace::new(0.1, vec![10, 100, 12]).unwrap(),
    )
    .unwrap();
    io::write_trace(
        &dir.join("sweep_flat.csv"),
        &CountTrace::new(0.1, vec![50, 60, 55]).unwrap(),
    )
    .unwrap();
    for (name, central) in [("g2_good.csv", 10.0), ("g2_bad.csv", 80.0)] {
        let bw = 250e-12;
        let (delays, counts): (Vec<f64>, Vec<f64>) = (-200i64..=200)
            .map(|k| {
                let c = match k.abs() {
                    0 => central,
                    a if a % 50 == 0 => 100.0,
                    _ => 1.0,
                };
                (k as f64 * bw, c)
            })
            .unzip();
        io::write_g2(
            &dir.join(name),
            &G2Histogram::new(bw, delays, counts).unwrap(),
        )
        .unwrap();
    }
    let entry = |id: u64, trace: &str, g2: Option<&str>, sweep: &str| ManifestEntry {
        id,
        position: Some((id as f64, 0.0)),
        ple: Some("ple.csv".into()),
        pl: Some("pl.csv".into()),
        trace: Some(trace.into()),
        g2: g2.map(Into::into),
        optimization: vec![sweep.into()],
    };
    let entries = vec![
        entry(0, "bright.csv", Some("g2_good.csv"), "sweep_ok.csv"),
        entry(1, "bright.csv", Some("g2_good.csv"), "sweep_flat.csv"),
        entry(2, "dim.csv", Some("g2_good.csv"), "sweep_ok.csv"),
        entry(3, "bright.csv", Some("g2_good.csv"), "sweep_ok.csv"),
        entry(4, "bright.csv", Some("g2_bad.csv"), "sweep_ok.csv"),
        entry(5, "bright.csv", None, "sweep_ok.csv"),
        entry(6, "bright.csv", Some("g2_good.csv"), "sweep_ok.csv"),
        entry(7, "bright.csv", Some("g2_good.csv"), "sweep_flat.csv"),
        entry(8, "dim.csv", Some("g2_good.csv"), "sweep_ok.csv"),
        entry(9, "bright.csv", Some("g2_good.csv"), "sweep_ok.csv"),
    ];
    io::write_manifest(dir, &entries).unwrap();
}

#[test]
fn qc_corpus_summary() {
    let data = TempDir::new().unwrap();
    let out = TempDir::new().unwrap();
    qc_corpus(data.path());
    let o = hbnspec(&["qc", p(data.path()), "--out", p(out.path())]);
    assert!(o.status.success(), "{o:?}");
    assert_eq!(stdout(&o).trim(), "measured 10 / bleached 2 / passed 4");
    let csv = fs::read_to_string(out.path().join("selection.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 10);
    let passed: Vec<&str> = rows
        .iter()
        .filter(|r| r.split(',').nth(10) == Some("true"))
        .map(|r| r.split(',').next().unwrap())
        .collect();
    assert_eq!(passed, ["0", "3", "6", "9"]);
    assert!(rows[5].contains("not_evaluable"), "{}", rows[5]);

    // Fitting only the passing emitters.
    let o = hbnspec(&["fit", p(data.path()), "--out", p(out.path())]);
    assert!(o.status.success(), "{o:?}");
    let (sets, skipped) = io::read_transitions(&out.path().join("transitions.csv")).unwrap();
    assert_eq!(skipped, 0);
    assert_eq!(
        sets.iter().map(|s| s.emitter_id).collect::<Vec<_>>(),
        [0, 3, 6, 9]
    );
}

#[test]
fn qc_empty_dataset_writes_header_only() {
    let data = TempDir::new().unwrap();
    let out = TempDir::new().unwrap();
    io::write_manifest(data.path(), &[]).unwrap();
    let o = hbnspec(&["qc", p(data.path()), "--out", p(out.path())]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "measured 0 / bleached 0 / passed 0");
    let csv = fs::read_to_string(out.path().join("selection.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1);
}

#[test]
fn simulate_fit_correlate_small() {
    let dir = TempDir::new().unwrap();
    let zpls = dir.path().join("zpls.txt");
    fs::write(
        &zpls,
        (0..10)
            .map(|i| format!("{}\n", 2.12 + 0.01 * i as f64))
            .collect::<String>(),
    )
    .unwrap();
    let sim = dir.path().join("sim");
    let o = hbnspec(&[
        "simulate",
        "--spectra",
        "--zpls",
        p(&zpls),
        "--set",
        "simulate.duplication=1",
        "--seed",
        "7",
        "--out",
        p(&sim),
    ]);
    assert!(o.status.success(), "{o:?}");
    assert_eq!(stdout(&o).trim(), "10 emitters simulated");
    let (truth, _) = io::read_transitions(&sim.join("transitions.csv")).unwrap();
    assert_eq!(truth.len(), 10);

    let fit = dir.path().join("fit");
    let o = hbnspec(&["fit", "--no-qc", p(&sim.join("dataset")), "--out", p(&fit)]);
    assert!(o.status.success(), "{o:?}");
    let (sets, _) = io::read_transitions(&fit.join("transitions.csv")).unwrap();
    assert!(!sets.is_empty());
    // The ZPL comes from the synthetic PL maximum, on a 0.5 nm grid.
    for s in &sets {
        let t = &truth[s.emitter_id as usize];
        assert!((s.zpl_energy - t.zpl_energy).abs() < 0.002);
    }

    let o = hbnspec(&[
        "fit",
        "--no-qc",
        "--zpl-window",
        "--set",
        "fit.zpl_window=[1.0, 1.1]",
        p(&sim.join("dataset")),
        "--out",
        p(&fit),
    ]);
    assert!(o.status.success());
    let text = fs::read_to_string(fit.join("transitions.csv")).unwrap();
    assert_eq!(text, format!("{}\n", io::TRANSITIONS_HEADER));

    let cor = dir.path().join("cor");
    let o = hbnspec(&[
        "correlate",
        "--from-zpl",
        p(&sim.join("transitions.csv")),
        "--out",
        p(&cor),
    ]);
    assert!(o.status.success(), "{o:?}");
    for f in ["density.csv", "heatmap.csv", "zpl_density.csv"] {
        assert!(cor.join(f).exists(), "{f}");
    }
}

#[test]
fn correlate_ladder_lobes_and_empty_input() {
    let dir = TempDir::new().unwrap();
    let tr = dir.path().join("t.csv");
    let body: String = (0..20)
        .map(|i| format!("{i},2.1,{};{};{}\n", 2.3, 2.465, 2.63))
        .collect();
    fs::write(
        &tr,
        format!("{}\n{body}bad,row,x\n", io::TRANSITIONS_HEADER),
    )
    .unwrap();
    let o = hbnspec(&["correlate", p(&tr), "--out", p(dir.path())]);
    assert!(o.status.success(), "{o:?}");
    // Identical spacings give a flat top one window wide.
    let max: f64 = stdout(&o)
        .trim()
        .strip_prefix("density maximum at ")
        .unwrap()
        .strip_suffix(" eV")
        .unwrap()
        .parse()
        .unwrap();
    assert!((max - 0.165).abs() < 0.025, "{max}");
    let heat = fs::read_to_string(dir.path().join("heatmap.csv")).unwrap();
    let header: Vec<f64> = heat
        .lines()
        .next()
        .unwrap()
        .split(',')
        .skip(1)
        .map(|v| v.parse().unwrap())
        .collect();
    let row = heat
        .lines()
        .skip(1)
        .find(|l| l.starts_with("0.17,") || l.starts_with("0.16,"))
        .unwrap();
    let vals: Vec<f64> = row.split(',').skip(1).map(|v| v.parse().unwrap()).collect();
    let at = |e: f64| vals[header.iter().position(|&c| (c - e).abs() < 1e-9).unwrap()];
    assert!(at(0.33) > 0.0 && at(0.33) > at(0.25));

    let empty = dir.path().join("e.csv");
    fs::write(&empty, format!("{}\n", io::TRANSITIONS_HEADER)).unwrap();
    let o = hbnspec(&["correlate", p(&empty), "--out", p(&dir.path().join("e"))]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "no spacings");
}

#[test]
fn afm_flakes() {
    let dir = TempDir::new().unwrap();
    let mut h = vec![vec![0.0; 40]; 40];
    for r in 5..10 {
        for c in 5..10 {
            h[r][c] = 3.0;
        }
    }
    for r in 25..28 {
        for c in 20..30 {
            h[r][c] = 6.0;
        }
    }
    let map = dir.path().join("h.csv");
    write_csv_grid(&map, &h);
    fs::write(io::sidecar_path(&map), "2.0\n").unwrap();
    let o = hbnspec(&["afm", p(&map), "--out", p(dir.path())]);
    assert!(o.status.success(), "{o:?}");
    assert_eq!(stdout(&o).trim(), "2 flakes");
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("afm_summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["flake_count"], 2);
    assert_eq!(summary["pixel_size_nm"], 2.0);
    let flakes = fs::read_to_string(dir.path().join("flakes.csv")).unwrap();
    assert_eq!(flakes.lines().count(), 3);
}

#[test]
fn reruns_are_byte_identical() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    for (dir, extra) in [(a.path(), "--sequential"), (b.path(), "--jobs=2")] {
        let o = hbnspec(&[
            "simulate",
            "--set",
            "synthetic_zpl_count=20",
            "--seed",
            "3",
            extra,
            "--out",
            p(dir),
        ]);
        assert!(o.status.success(), "{o:?}");
        let o = hbnspec(&[
            "correlate",
            p(&dir.join("transitions.csv")),
            "--out",
            p(dir),
        ]);
        assert!(o.status.success());
    }
    for f in ["transitions.csv", "density.csv", "heatmap.csv"] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}
