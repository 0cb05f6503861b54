use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use symvec_cli::commands::{self, checkpoint_config, SampleOptions};
use symvec_cli::config::ENV_PREFIX;
use symvec_cli::run::{train, TrainOptions};
use symvec_cli::{set_threads, CliError, RunConfig};
use symvec_core::checkpoint;

#[derive(Parser)]
#[command(name = "symvec", version, about = "Semi-supervised latent EBM prior: train, evaluate, sample, diagnose")]
struct Cli {
    /// Worker threads for the data-parallel core.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes config, metrics, checkpoints and a manifest.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Run directory (overrides `cli.out_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Resume from this checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Stop after this iteration, writing the final checkpoint.
        #[arg(long)]
        stop_at: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// Test accuracy of a checkpoint as a JSON report.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Labeled CSV to evaluate on instead of the configured test set.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        n_mc: Option<usize>,
        /// Report file; printed to stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Draw prior samples with fresh Langevin chains and decode them.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long, default_value_t = 200)]
        steps: usize,
        /// Defaults to the training step size.
        #[arg(long)]
        step_size: Option<f64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Gradient, sampler and divergence checks; exit code 1 on failure.
    Diagnose {
        /// Check a trained model (otherwise a fresh one built from --config).
        #[arg(long, required_unless_present = "config")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Perturb the analytic gradients so the checks must fail.
        #[arg(long, hide = true)]
        inject_fault: bool,
        #[command(flatten)]
        common: Common,
    },
}

fn write_json(value: &impl serde::Serialize, out: Option<&PathBuf>) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("serializes");
    match out {
        Some(p) => std::fs::write(p, text + "\n").map_err(|e| CliError::io(p, e)),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        set_threads(n)?;
    }
    match cli.command {
        Command::Train { config, out, checkpoint, stop_at, common } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(out) = out {
                cfg.cli.out_dir = out;
            }
            if let Some(seed) = common.seed {
                cfg.seed = seed;
            }
            let summary = train(&cfg, &TrainOptions { resume: checkpoint, stop_at })?;
            match summary.test_accuracy {
                Some(acc) => println!("iteration {} test accuracy {acc:.4}", summary.iteration),
                None => println!("iteration {}", summary.iteration),
            }
        }
        Command::Eval { checkpoint, data, n_mc, out, common } => {
            let report = commands::evaluate(&checkpoint, data.as_deref(), n_mc, common.seed)?;
            eprintln!("accuracy {:.4} on {} examples", report.accuracy, report.n);
            write_json(&report, out.as_ref())?;
        }
        Command::Sample { checkpoint, count, steps, step_size, out, common } => {
            let ck = checkpoint::load(&checkpoint)?;
            let opts = SampleOptions {
                count,
                steps,
                step_size: step_size.unwrap_or(ck.state.config.step_size),
                seed: common.seed.unwrap_or(ck.state.seed),
            };
            let samples = commands::sample(&ck.state.model, ck.standardization.as_ref(), &opts)?;
            if samples.diverged > 0 {
                log::warn!("{} chains diverged and were redrawn", samples.diverged);
            }
            for p in commands::write_samples(&samples, &out)? {
                println!("{}", p.display());
            }
        }
        Command::Diagnose { checkpoint, config, out, inject_fault, common } => {
            let (model, cfg) = match (&checkpoint, &config) {
                (Some(p), _) => {
                    let ck = checkpoint::load(p)?;
                    let cfg = checkpoint_config(&ck)?;
                    (ck.state.model, cfg)
                }
                (None, Some(c)) => {
                    let cfg = RunConfig::load(c)?;
                    (commands::fresh_model(&cfg)?, cfg)
                }
                (None, None) => unreachable!("clap requires one of them"),
            };
            let mut opts = cfg.eval.diagnose.clone();
            if let Some(seed) = common.seed {
                opts.seed = seed;
            }
            let env_fault = std::env::var(format!("{ENV_PREFIX}INJECT_FAULT")).is_ok_and(|v| v == "1");
            opts.corrupt_gradient |= inject_fault || env_fault;
            let records = commands::diagnose(&model, &opts, |records| {
                for r in records {
                    eprintln!(
                        "{} {:<40} {:.3e} (tolerance {:.1e})",
                        if r.pass { "PASS" } else { "FAIL" },
                        r.check,
                        r.value,
                        r.tolerance
                    );
                }
                let _ = write_json(&records, out.as_ref());
            });
            records?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
