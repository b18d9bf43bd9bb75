use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sonoflow_core::artifacts::emit_artifacts;
use sonoflow_core::config::{ExperimentConfig, Profile};
use sonoflow_core::experiments::{self, RunOutput};
use sonoflow_core::flow::{save_velocity_field, synthetic_vortex_street, VortexStreetSpec};
use sonoflow_core::grid::LayoutKind;
use sonoflow_core::Error;

#[derive(Parser)]
#[command(name = "sonoflow", version, about = "Acoustic particle imaging and velocimetry experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration; missing keys take the profile defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; each run writes into its own subdirectory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// desk (236x108) or paper (472x216).
    #[arg(long, global = true)]
    profile: Option<Profile>,
}

#[derive(Subcommand)]
enum Command {
    /// Static reconstruction at one source frequency.
    Example1 {
        #[arg(long, default_value_t = 1e5)]
        q0: f64,
    },
    /// Static reconstruction with a given receiver layout.
    Example2 {
        #[arg(long, default_value = "all_around")]
        layout: LayoutKind,
    },
    /// Static reconstruction from noisy data.
    Example3 {
        #[arg(long, default_value_t = 0.1)]
        sigma: f64,
    },
    /// Particles in a Taylor-Green vortex.
    Vortex,
    /// Particles in an imported velocity field.
    Karman {
        #[arg(long)]
        field: PathBuf,
    },
    /// Inverse method against a virtual ADCP on an imported velocity field.
    VadcpCompare {
        #[arg(long)]
        field: PathBuf,
    },
    /// Writes a synthetic vortex street in the velocity-field format, sized to
    /// the configured domain.
    Street {
        /// Output stem; `<stem>.json` and `<stem>.f64` are written.
        #[arg(long)]
        field: PathBuf,
    },
}

#[derive(Serialize)]
struct ErrorJson<'a> {
    kind: &'a str,
    message: String,
}

fn fail(kind: &str, message: String) -> ExitCode {
    let text = serde_json::to_string(&ErrorJson { kind, message }).unwrap_or_default();
    eprintln!("{text}");
    ExitCode::FAILURE
}

fn load_config(common: &Common) -> Result<ExperimentConfig, Error> {
    let mut cfg = match (&common.config, common.profile) {
        (Some(path), p) => ExperimentConfig::load_or(path, p.unwrap_or_default())?,
        (None, Some(p)) => ExperimentConfig::for_profile(p),
        (None, None) => ExperimentConfig::desk(),
    };
    if let (Some(_), Some(p)) = (&common.config, common.profile) {
        if p != cfg.profile {
            return Err(Error::config(format!(
                "--profile {p:?} disagrees with the profile in the config file ({:?})",
                cfg.profile
            )));
        }
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn finish<R: Serialize>(run: RunOutput<R>, dir: &Path) -> Result<(), Error> {
    let manifest = emit_artifacts(&run.artifacts, dir)?;
    log::info!("wrote {} files to {}", manifest.entries.len(), dir.display());
    let text = serde_json::to_string_pretty(&run.report).map_err(|e| Error::format(dir, e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    let cfg = load_config(&cli.common)?;
    let out = cfg.output.clone();
    match cli.command {
        Command::Example1 { q0 } => finish(experiments::run_example1(q0, &cfg)?, &out.join(format!("example1_q0_{q0}"))),
        Command::Example2 { layout } => {
            finish(experiments::run_example2(layout, &cfg)?, &out.join(format!("example2_{}", layout.as_str())))
        }
        Command::Example3 { sigma } => {
            finish(experiments::run_example3(sigma, &cfg)?, &out.join(format!("example3_sigma_{sigma}")))
        }
        Command::Vortex => finish(experiments::run_vortex(&cfg)?, &out.join("vortex")),
        Command::Karman { field } => finish(experiments::run_karman(&cfg, &field)?, &out.join("karman")),
        Command::VadcpCompare { field } => {
            finish(experiments::run_vadcp_compare(&cfg, &field)?, &out.join("vadcp_compare"))
        }
        Command::Street { field } => {
            let spec = VortexStreetSpec {
                lx: cfg.grid.lx,
                ly: cfg.grid.ly,
                nx: cfg.grid.nx + 1,
                ny: cfg.grid.ny + 1,
                ..VortexStreetSpec::default()
            };
            let written = save_velocity_field(&field, &synthetic_vortex_street(&spec)?)?;
            log::info!("wrote {} and {}", written[0].display(), written[1].display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.render().to_string()),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), e.to_string()),
    }
}
