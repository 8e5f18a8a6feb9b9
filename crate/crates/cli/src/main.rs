use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use morselab::experiment::{
    emit_plotdata, run_with, thread_pool_from_env, write_outputs, ExperimentConfig, PlotKind,
    RunArtifacts, RunOptions, Stage,
};
use morselab::functional::validate_growth;

/// Numerical Morse homology experiments for the quasilinear Dirichlet energy.
///
/// MORSELAB_THREADS caps the number of worker threads.
#[derive(Parser)]
#[command(name = "morselab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the configuration and the sampled growth condition on G.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Find and classify critical points.
    CriticalPoints(RunArgs),
    /// Run the full pipeline through Betti numbers.
    Homology {
        #[command(flatten)]
        run: RunArgs,
        /// Only run the invariant suite and print its results; write nothing.
        #[arg(long)]
        check: bool,
    },
    /// Run the pipeline and write CSV plot data.
    Plot {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum)]
        kind: Kind,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `outputs` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `rng_seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum Kind {
    EnergyLandscape,
    Trajectories,
    Spectrum,
}

impl From<Kind> for PlotKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::EnergyLandscape => PlotKind::EnergyLandscape,
            Kind::Trajectories => PlotKind::Trajectories,
            Kind::Spectrum => PlotKind::Spectrum,
        }
    }
}

fn load(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    if let Some(seed) = args.seed {
        cfg.rng_seed = seed;
    }
    Ok(cfg)
}

fn out_dir(args: &RunArgs, cfg: &ExperimentConfig) -> PathBuf {
    args.out
        .clone()
        .or_else(|| cfg.outputs.clone())
        .unwrap_or_else(|| PathBuf::from("morselab-out"))
}

fn print_summary(a: &RunArtifacts) {
    let r = &a.report;
    println!(
        "experiment {}: {} critical points",
        r.name,
        r.critical_points.len()
    );
    for cp in &r.critical_points {
        println!(
            "  cp {:>2}  index {}  energy {:+.10e}  residual {:.2e}",
            cp.id, cp.index, cp.energy, cp.residual
        );
    }
    for c in &r.counts {
        println!(
            "  count {} -> {}: raw {} mod2 {}",
            c.hi, c.lo, c.raw, c.mod2
        );
    }
    if let Some(b) = r.betti() {
        println!("  betti {b:?}");
    }
    for s in r.stages.iter().filter(|s| !s.ok) {
        println!(
            "  stage {:?} failed: {}",
            s.stage,
            s.error.as_deref().unwrap_or("see checks")
        );
    }
}

fn print_checks(a: &RunArtifacts) {
    for c in &a.report.checks {
        println!(
            "{} {}: {}",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
}

fn status(a: &RunArtifacts) -> ExitCode {
    if a.report.all_checks_passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn report_written(files: &[PathBuf], dir: &Path) {
    println!("wrote {} files to {}", files.len(), dir.display());
}

fn execute(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Validate { config } => {
            let cfg = ExperimentConfig::load(&config)
                .with_context(|| format!("reading {}", config.display()))?;
            let f = cfg.functional()?;
            let growth = validate_growth(f.gspec(), cfg.p, cfg.g.window, cfg.g.samples)?;
            println!("{}", serde_json::to_string_pretty(&growth)?);
            Ok(if growth.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
        Command::CriticalPoints(args) => {
            let cfg = load(&args)?;
            let a = run_with(
                &cfg,
                RunOptions {
                    through: Stage::CriticalPoints,
                },
            )?;
            print_summary(&a);
            let dir = out_dir(&args, &cfg);
            report_written(&write_outputs(&a, &dir)?, &dir);
            Ok(status(&a))
        }
        Command::Homology { run, check } => {
            let cfg = load(&run)?;
            let a = run_with(&cfg, RunOptions::default())?;
            if check {
                print_checks(&a);
            } else {
                print_summary(&a);
                let dir = out_dir(&run, &cfg);
                report_written(&write_outputs(&a, &dir)?, &dir);
            }
            Ok(status(&a))
        }
        Command::Plot { run, kind } => {
            let cfg = load(&run)?;
            let a = run_with(&cfg, RunOptions::default())?;
            let dir = out_dir(&run, &cfg);
            report_written(&emit_plotdata(&a, kind.into(), &dir)?, &dir);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match thread_pool_from_env() {
        Ok(Some(pool)) => pool.install(|| execute(cli)),
        Ok(None) => execute(cli),
        Err(e) => Err(e.into()),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
