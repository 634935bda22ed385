use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use powerdense_cli::commands::{
    cmd_acquire, cmd_forward, cmd_reconstruct2d, cmd_reconstruct3d, cmd_run, cmd_sweep, cmd_verify, Reconstruct2dArgs,
    Reconstruct3dArgs,
};
use powerdense_cli::{CliError, CliResult, ExperimentConfig};

/// Conductivity reconstruction from power-density data.
#[derive(Debug, Parser)]
#[command(name = "powerdense", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the forward problems and write sigma, potentials and fluxes.
    Forward {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Synthesize power-density data (plus covering and anchor frame in 3D).
    Acquire {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Planar reconstruction from a data manifest.
    Reconstruct2d {
        /// `manifest.toml` written by `acquire`.
        #[arg(long)]
        data: PathBuf,
        /// Anchor point `x,y`.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        anchor_x0: Vec<f64>,
        #[arg(long, allow_negative_numbers = true)]
        log_sigma0: f64,
        #[arg(long)]
        c0: f64,
        /// Boundary values of the first illumination; defaults to the manifest's.
        #[arg(long)]
        g1: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Spatial reconstruction from a data manifest.
    Reconstruct3d {
        #[arg(long)]
        data: PathBuf,
        /// Covering file, or `auto` for the one recorded in the manifest.
        #[arg(long, default_value = "auto")]
        covering: String,
        /// `x,y,z,log_sigma,frame_file`.
        #[arg(long)]
        anchor: String,
        /// Overrides the covering's determinant bound.
        #[arg(long)]
        c0: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stability probes over `noise.sweep`.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Identity suite; exits 1 when an identity fails.
    Verify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Disturb one off-diagonal entry (negative control).
        #[arg(long)]
        corrupt_symmetry: bool,
    },
    /// Refinement study over `grid.resolutions`.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn configure_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("POWERDENSE_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .map_err(|_| CliError::Config(format!("POWERDENSE_THREADS={v:?} is not a thread count")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))
}

fn parse_anchor_3d(s: &str) -> CliResult<([f64; 3], f64, PathBuf)> {
    let parts: Vec<&str> = s.splitn(5, ',').collect();
    if parts.len() != 5 {
        return Err(CliError::Config(format!("--anchor {s:?} is not x,y,z,log_sigma,frame_file")));
    }
    let num = |t: &str| {
        t.trim()
            .parse::<f64>()
            .map_err(|_| CliError::Config(format!("--anchor: {t:?} is not a number")))
    };
    Ok((
        [num(parts[0])?, num(parts[1])?, num(parts[2])?],
        num(parts[3])?,
        PathBuf::from(parts[4]),
    ))
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    let done = |p: PathBuf| println!("wrote {}", p.display());
    match cli.command {
        Command::Forward { config, out } => done(cmd_forward(&ExperimentConfig::load(&config)?, out.as_deref())?),
        Command::Acquire { config, out } => done(cmd_acquire(&ExperimentConfig::load(&config)?, out.as_deref())?),
        Command::Reconstruct2d {
            data,
            anchor_x0,
            log_sigma0,
            c0,
            g1,
            out,
        } => done(cmd_reconstruct2d(&Reconstruct2dArgs {
            data: &data,
            anchor: &anchor_x0,
            log_sigma0,
            c0,
            g1: g1.as_deref(),
            out: &out,
        })?),
        Command::Reconstruct3d {
            data,
            covering,
            anchor,
            c0,
            out,
        } => {
            let (point, log_sigma0, frame) = parse_anchor_3d(&anchor)?;
            let cov = (covering != "auto").then(|| PathBuf::from(&covering));
            done(cmd_reconstruct3d(&Reconstruct3dArgs {
                data: &data,
                covering: cov.as_deref(),
                anchor: &point,
                log_sigma0,
                frame: &frame,
                c0,
                out: &out,
            })?)
        }
        Command::Sweep { config, out } => done(cmd_sweep(&ExperimentConfig::load(&config)?, out.as_deref())?),
        Command::Verify {
            config,
            out,
            corrupt_symmetry,
        } => done(cmd_verify(&ExperimentConfig::load(&config)?, out.as_deref(), corrupt_symmetry)?),
        Command::Run { config, out } => {
            let loaded = ExperimentConfig::load(&config)?;
            for l in cmd_run(&loaded, out.as_deref())? {
                println!("n={} log_sigma_error={:.6e}", l.n, l.log_sigma_error);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("powerdense: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
