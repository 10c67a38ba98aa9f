use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hanle_sim::cli::{run_command, Command};
use hanle_sim::config::{build_config, RawConfig};
use hanle_sim::{Error, Result};

/// Magneto-optical EIA/EIT resonance simulation in the Hanle configuration.
#[derive(Parser)]
#[command(name = "hanle-sim", version, about)]
struct CliArgs {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Doppler-averaged absorption vs magnetic field curve
    ScanB(RunArgs),
    /// Resonance amplitude/width/ratio vs ellipticity
    SweepEps(RunArgs),
    /// Locate the ellipticity maximizing the resonance amplitude
    FindEpsmax(RunArgs),
    /// Solve one (detuning, field) point and dump the density matrix
    SolveOne(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Configuration file path
    #[arg(long)]
    config: PathBuf,

    /// Output directory (overrides the config's output.dir)
    #[arg(long)]
    out: Option<PathBuf>,

    /// Worker thread count (default: all cores; env HANLE_SIM_THREADS)
    #[arg(long)]
    threads: Option<usize>,

    /// Config overrides, e.g. --override field.epsilon=0.3
    #[arg(long = "override", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
}

fn thread_count(args: &RunArgs) -> Result<Option<usize>> {
    if let Some(n) = args.threads {
        return Ok(Some(n));
    }
    match std::env::var("HANLE_SIM_THREADS") {
        Ok(v) => v
            .parse::<usize>()
            .map(Some)
            .map_err(|_| Error::Config(format!("HANLE_SIM_THREADS=`{v}` is not an integer"))),
        Err(_) => Ok(None),
    }
}

fn run(cmd: Command, args: &RunArgs) -> Result<()> {
    if let Some(n) = thread_count(args)? {
        if n == 0 {
            return Err(Error::Config("thread count must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }

    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| Error::Config(format!("{}: {e}", args.config.display())))?;
    let mut raw = RawConfig::parse_str(&text, &args.config.display().to_string())?;
    for ov in &args.overrides {
        raw.apply_override(ov)?;
    }
    let mut cfg = build_config(raw)?;
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }

    let files = run_command(cmd, &cfg)?;
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = CliArgs::parse();
    let (cmd, args) = match &cli.command {
        Cmd::ScanB(a) => (Command::ScanB, a),
        Cmd::SweepEps(a) => (Command::SweepEps, a),
        Cmd::FindEpsmax(a) => (Command::FindEpsMax, a),
        Cmd::SolveOne(a) => (Command::SolveOne, a),
    };
    match run(cmd, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hanle-sim: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
