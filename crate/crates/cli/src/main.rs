use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hbnspec::par::{configure_threads, Execution};
use hbnspec_cli::commands::{self, CorrelateOptions, FitOptions, SimulateOptions};
use hbnspec_cli::config::{ConfigSources, PipelineConfig};
use hbnspec_cli::{EXIT_CONFIG, EXIT_INPUT};

/// Spectroscopy pipeline for single-photon emitters in hBN.
#[derive(Debug, Parser)]
#[command(name = "hbnspec", version)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Random seed for simulation.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads (default: one per processor).
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    out: PathBuf,
    /// Override a config value, e.g. `--set qc.max_g2=0.4`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Run single-threaded.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Find emitters in a confocal scan; writes spots.json.
    Detect {
        scan: PathBuf,
        /// µm per pixel.
        #[arg(long)]
        pixel_size: Option<f64>,
    },
    /// Run the selection criteria over a dataset; writes selection.csv.
    Qc { dataset: PathBuf },
    /// Fit PLE spectra and extract transitions; writes transitions.csv.
    Fit {
        dataset: PathBuf,
        /// Keep only emitters whose ZPL lies in fit.zpl_window.
        #[arg(long)]
        zpl_window: bool,
        /// Fit every emitter regardless of the selection criteria.
        #[arg(long)]
        no_qc: bool,
    },
    /// Spacing density and conditional heatmap; writes density.csv and heatmap.csv.
    Correlate {
        transitions: PathBuf,
        /// Also write the density of detunings from the ZPL.
        #[arg(long)]
        from_zpl: bool,
        /// Fit this many Gaussians to the spacing density.
        #[arg(long, value_name = "N")]
        fit_peaks: Option<usize>,
    },
    /// Generate phonon-ladder transition sets; writes transitions.csv.
    Simulate {
        /// Also write synthetic PLE/PL spectra under dataset/.
        #[arg(long)]
        spectra: bool,
        /// Uniform noise half-width added to synthetic PLE spectra.
        #[arg(long)]
        noise: Option<f64>,
        /// Measured ZPLs (eV), one per line.
        #[arg(long, value_name = "PATH")]
        zpls: Option<PathBuf>,
    },
    /// Flake statistics from an AFM height map; writes flakes.csv and afm_summary.json.
    Afm {
        heightmap: PathBuf,
        /// nm per pixel.
        #[arg(long)]
        pixel_size: Option<f64>,
    },
}

fn run(cli: Cli, cfg: PipelineConfig) -> anyhow::Result<()> {
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    if cfg.jobs > 0 {
        configure_threads(cfg.jobs);
    }
    commands::prepare_out(&cli.out)?;
    let out = cli.out.as_path();
    match cli.command {
        Command::Detect { scan, pixel_size } => {
            let spots = commands::detect(&scan, &cfg, out, pixel_size)?;
            println!("{} spots", spots.len());
        }
        Command::Qc { dataset } => {
            let (_, summary) = commands::qc(&dataset, &cfg, out, exec)?;
            println!("{summary}");
        }
        Command::Fit {
            dataset,
            zpl_window,
            no_qc,
        } => {
            let sets = commands::fit(&dataset, &cfg, out, FitOptions { zpl_window, no_qc }, exec)?;
            println!("{} emitters fitted", sets.len());
        }
        Command::Correlate {
            transitions,
            from_zpl,
            fit_peaks,
        } => {
            let o = commands::correlate(
                &transitions,
                &cfg,
                out,
                CorrelateOptions {
                    from_zpl,
                    fit_peaks,
                },
                exec,
            )?;
            let top = o.density.argmax().map(|i| o.density.centers[i]);
            match top {
                Some(t) if o.density.total() > 0.0 => println!("density maximum at {t} eV"),
                _ => println!("no spacings"),
            }
        }
        Command::Simulate {
            spectra,
            noise,
            zpls,
        } => {
            let opts = SimulateOptions {
                spectra,
                noise,
                zpls,
            };
            let e = commands::simulate(&cfg, out, &opts, exec)?;
            println!("{} emitters simulated", e.len());
        }
        Command::Afm {
            heightmap,
            pixel_size,
        } => {
            let (flakes, _) = commands::afm(&heightmap, &cfg, out, pixel_size)?;
            println!("{} flakes", flakes.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let src = ConfigSources {
        file: cli.config.as_deref(),
        overrides: &cli.overrides,
        seed: cli.seed,
        jobs: cli.jobs,
    };
    let cfg = match PipelineConfig::load(&src) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    };
    match run(cli, cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INPUT as u8)
        }
    }
}
