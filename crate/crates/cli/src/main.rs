use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use cran_core::experiment::{emit_results, replay, run_sweep, Emitted, ExperimentSpec, Sidecar, SweepOutput};

#[derive(Parser)]
#[command(name = "cran", version, about = "Ergodic sum-rate sweeps for CAP and CBP fronthaul designs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sweep described by a TOML spec.
    Sweep {
        spec: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Override the master seed of the spec.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Parse and check a spec without running it.
    Validate { spec: PathBuf },
    /// Rerun the experiment recorded in a sidecar.
    Replay {
        sidecar: PathBuf,
        #[arg(long, default_value = "replay")]
        out: PathBuf,
    },
}

fn report(output: &SweepOutput, files: &Emitted) -> ExitCode {
    println!("wrote {}", files.results.display());
    println!("wrote {}", files.summary.display());
    println!("wrote {}", files.timings.display());
    println!("wrote {}", files.sidecar.display());
    let failed = output.failures();
    if failed.is_empty() {
        return ExitCode::SUCCESS;
    }
    eprintln!("{} of {} tasks failed:", failed.len(), output.rows.len());
    for r in failed {
        let nc = r.cluster_size.map(|n| format!(" N_c={n}")).unwrap_or_default();
        eprintln!("  value={} {} {}{nc} geometry={}: {}", r.value, r.scheme, r.csi, r.geometry, r.status);
    }
    ExitCode::FAILURE
}

fn load_spec(path: &Path) -> Result<ExperimentSpec> {
    ExperimentSpec::load(path).with_context(|| format!("reading spec {}", path.display()))
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Validate { spec } => {
            let s = load_spec(&spec)?;
            let sidecar = Sidecar::new(&s);
            println!(
                "{}: {} grid points x {} variants x {} geometries = {} tasks",
                s.name,
                s.sweep.values.len(),
                sidecar.variants.len(),
                s.geometries,
                s.sweep.values.len() * sidecar.variants.len() * s.geometries
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep { spec, out, seed } => {
            let mut s = load_spec(&spec)?;
            if let Some(seed) = seed {
                s.seed = seed;
            }
            let output = run_sweep(&s)?;
            let files = emit_results(&s, &output, &out).with_context(|| format!("writing to {}", out.display()))?;
            Ok(report(&output, &files))
        }
        Command::Replay { sidecar, out } => {
            let (output, files) = replay(&sidecar, &out).with_context(|| format!("replaying {}", sidecar.display()))?;
            Ok(report(&output, &files))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
