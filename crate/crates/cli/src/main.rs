use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use structprune::harness::commands::{self, BASELINE_CKPT};
use structprune::harness::ExperimentConfig;
use structprune::{Error, Result};

/// Maximum relative error accepted by `gradient-check`.
const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser, Debug)]
#[command(name = "structprune", version, about = "Joint row/column structured pruning experiments")]
struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Flat key = value config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the dense baseline.
    Train(RunArgs),
    /// Primal-proximal pruning of a baseline, then retraining.
    Prune {
        #[command(flatten)]
        run: RunArgs,
        /// Baseline checkpoint; defaults to OUT/baseline.ckpt.
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
    /// Direct group-penalty training as a comparator.
    BaselineDirect {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
    /// Consolidate run directories into summary and per-layer tables.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Also write summary.csv and layers.csv here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of the configured model's gradients.
    GradientCheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<ExperimentConfig> {
    let cfg = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    Ok(match seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn print_report(run: &commands::RunReport) {
    let r = &run.report;
    for l in &r.layers {
        println!(
            "{:>8}  {}x{} -> {}x{}  remaining {}/{}  ({:.2}x)",
            l.id, l.rows, l.cols, l.kept_rows, l.kept_cols, l.remaining, l.total, l.rate
        );
    }
    for d in &r.diagnostics {
        println!("note: {d}");
    }
    println!(
        "{}: compression {:.3}x, accuracy base {:.4} / pruned {:.4} / retrained {:.4}",
        r.method,
        r.rate,
        r.base_accuracy.unwrap_or(f64::NAN),
        r.pruned_accuracy.unwrap_or(f64::NAN),
        r.accuracy
    );
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Train(a) => {
            let cfg = load_config(a.config.as_deref(), a.seed)?;
            let s = commands::cmd_train(&cfg, &a.out)?;
            println!(
                "trained {} epochs: train accuracy {:.4}, test accuracy {:.4}",
                s.epochs, s.train_accuracy, s.test_accuracy
            );
        }
        Command::Prune { run, baseline } => {
            let cfg = load_config(run.config.as_deref(), run.seed)?;
            let baseline = baseline.unwrap_or_else(|| run.out.join(BASELINE_CKPT));
            print_report(&commands::cmd_prune(&cfg, &baseline, &run.out)?);
        }
        Command::BaselineDirect { run, baseline } => {
            let cfg = load_config(run.config.as_deref(), run.seed)?;
            let baseline = baseline.unwrap_or_else(|| run.out.join(BASELINE_CKPT));
            print_report(&commands::cmd_baseline_direct(&cfg, &baseline, &run.out)?);
        }
        Command::Report { runs, out } => {
            let t = commands::cmd_report(&runs, out.as_deref())?;
            t.write_summary_csv(io::stdout().lock())?;
            for (path, why) in &t.errors {
                eprintln!("error: {}: {why}", path.display());
            }
            if !t.errors.is_empty() {
                return Ok(ExitCode::from(3));
            }
        }
        Command::GradientCheck { config, out, seed } => {
            let cfg = load_config(config.as_deref(), seed)?;
            let r = commands::cmd_gradient_check(&cfg, out.as_deref())?;
            for (id, e) in &r.per_layer {
                println!("{id:>8}  max relative error {e:.3e}");
            }
            println!("{} probes, max relative error {:.3e}", r.probes, r.max_rel_error);
            if !r.passes(GRADCHECK_TOLERANCE) {
                eprintln!("error: gradient check failed (tolerance {GRADCHECK_TOLERANCE:e})");
                return Ok(ExitCode::from(2));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if cli.threads == 0 {
        eprintln!("error: --threads must be at least 1");
        return ExitCode::from(1);
    }
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    e.exit_code() as u8
}
