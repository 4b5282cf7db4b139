//! Command-line front end: rate sweeps, FER campaigns, code design, tap
//! export and plot-data merging.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sicdd::experiment::{self, preset, ExperimentConfig, PRESETS, RATES_SCHEMA};
use sicdd::link::{derive_taps, Link};
use sicdd::plotdata::{self, PLOTDATA_SCHEMA};
use sicdd::polar::{self, SicSchedule, FER_SCHEMA};
use sicdd::{Error, Result};

const TAPS_SCHEMA: &str = "# sicdd taps v1";

#[derive(Parser)]
#[command(name = "sicdd", version, about = "SIC rates and polar-coded FER for oversampled direct-detection links")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration.
    #[arg(long, global = true, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in experiment preset.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output file (default: the configured path, else stdout).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate achievable rates over the SNR sweep.
    Rates,
    /// Design polar codes and simulate frame error rates.
    Fer {
        /// Use a stored code design instead of designing one.
        #[arg(long)]
        design: Option<PathBuf>,
    },
    /// Design polar codes and write their info positions.
    Design,
    /// Write the oversampled channel taps of the link.
    Taps,
    /// Merge rates and FER tables into one long-format table.
    Plotdata {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// List the built-in presets.
    Presets,
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match (&common.config, &common.preset) {
        (Some(path), _) => ExperimentConfig::from_toml(&fs::read_to_string(path)?)?,
        (None, Some(name)) => preset(name)?,
        (None, None) => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out = Some(out.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_output(path: Option<&Path>, body: &[u8]) -> Result<()> {
    match path {
        Some(p) => fs::write(p, body)?,
        None => io::stdout().lock().write_all(body)?,
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.common.threads {
        if n == 0 {
            return Err(Error::InvalidConfig("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    }
    let mut buf = Vec::new();
    let out_path;
    match cli.command {
        Command::Presets => {
            for p in PRESETS {
                writeln!(buf, "{p}")?;
            }
            out_path = cli.common.out.clone();
        }
        Command::Plotdata { inputs } => {
            let texts = inputs
                .iter()
                .map(|p| Ok((p.display().to_string(), fs::read_to_string(p)?)))
                .collect::<Result<Vec<_>>>()?;
            experiment::write_csv(&mut buf, PLOTDATA_SCHEMA, &plotdata::merge(&texts)?)?;
            out_path = cli.common.out.clone();
        }
        Command::Taps => {
            let cfg = load_config(&cli.common)?;
            let taps = derive_taps(&cfg.link)?;
            if let Some(w) = taps.energy_warning() {
                log::warn!("{w}");
            }
            writeln!(buf, "{TAPS_SCHEMA}")?;
            taps.write_csv(&mut buf)?;
            out_path = cfg.out;
        }
        Command::Rates => {
            let cfg = load_config(&cli.common)?;
            let points = experiment::run_rates(&cfg)?;
            experiment::write_csv(&mut buf, RATES_SCHEMA, &experiment::rate_rows(&cfg, &points)?)?;
            out_path = cfg.out;
        }
        Command::Design => {
            let cfg = load_config(&cli.common)?;
            let link = Link::new(cfg.link.clone())?;
            let schedule = polar::design_codes(&link, &cfg.build_alphabet()?, &cfg)?;
            buf.extend_from_slice(schedule.to_text().as_bytes());
            out_path = cfg.out;
        }
        Command::Fer { design } => {
            let cfg = load_config(&cli.common)?;
            let rows = match design {
                Some(path) => {
                    let schedule = SicSchedule::from_text(&fs::read_to_string(path)?)?;
                    polar::run_fer_with(&cfg, &schedule)?
                }
                None => polar::run_fer(&cfg)?.1,
            };
            experiment::write_csv(&mut buf, FER_SCHEMA, &rows)?;
            out_path = cfg.out;
        }
    }
    write_output(out_path.as_deref(), &buf)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sicdd: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
