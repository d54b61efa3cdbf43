use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vqpu::classify::EvalSplit;
use vqpu::Result;
use vqpu_cli::commands::{self, EvalOptions};
use vqpu_cli::config::{ConfigSource, DataSource, RunConfig, PRESETS};
use vqpu_cli::exit_code;

/// Positive-unlabeled learning with vector-quantized encoders.
#[derive(Parser)]
#[command(name = "vqpu", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Built-in preset: toy-1d, synthetic-d16 or paper-mnist.
    #[arg(long, global = true, conflicts_with = "config")]
    preset: Option<String>,
    /// TOML run config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory. Defaults to $VQPU_OUT_ROOT/<name>/seed-<seed>.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.max_epochs=20`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Run single-threaded; reruns are then bit-identical.
    #[arg(long, global = true)]
    sequential: bool,
    /// Read the dataset from a CSV written by `simulate`.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Print the resolved config as TOML and exit.
    #[arg(long, global = true)]
    print_config: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset and write it as CSV plus JSON sidecar.
    Simulate,
    /// Train and write the best checkpoint, metrics and manifest.
    Train,
    /// Fit the classifier on a checkpoint and score it.
    Eval {
        /// Checkpoint to evaluate. Defaults to best.ckpt in the output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Results table to update. Defaults to results.csv in the output directory.
        #[arg(long)]
        results: Option<PathBuf>,
        /// Which split to score.
        #[arg(long, value_parser = ["test", "unlabeled"])]
        split: Option<String>,
    },
    /// Sweep loss variants, anchor scalars and seeds.
    Ablate,
    /// Check the linearized-dynamics argument on sampled systems.
    VerifyNtk,
}

fn resolve(g: &Global) -> Result<RunConfig> {
    let src = ConfigSource {
        preset: g.preset.clone(),
        path: g.config.clone(),
        overrides: g.overrides.clone(),
        seed: g.seed,
        out: g.out.clone(),
        sequential: g.sequential,
    };
    let mut cfg = src.resolve()?;
    if let Some(path) = &g.data {
        cfg.data.source = DataSource::Csv { path: path.clone() };
        cfg.data.split = None;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = resolve(&cli.global)?;
    if let Command::Eval { split: Some(s), .. } = &cli.command {
        cfg.eval.split = if s == "test" {
            EvalSplit::Test
        } else {
            EvalSplit::Unlabeled
        };
    }
    if cli.global.print_config {
        print!("{}", cfg.to_toml()?);
        return Ok(());
    }
    match cli.command {
        Command::Simulate => {
            let s = commands::simulate(&cfg)?;
            println!(
                "wrote {} (n_p {}, n_u {}, n_test {})",
                s.out.join("dataset.csv").display(),
                s.n_p,
                s.n_u,
                s.n_test
            );
            println!("fingerprint {}", s.fingerprint);
        }
        Command::Train => {
            let (s, _) = commands::train(&cfg)?;
            println!(
                "stopped after {} epochs ({:?}); best epoch {} with centroid distance {:.6}",
                s.epochs_run, s.stop_reason, s.best_epoch, s.peak_distance
            );
            if let Some(acc) = s.accuracy_at_peak {
                println!("monitored accuracy at best checkpoint {acc:.4}");
            }
            println!("outputs in {}", cfg.out_dir().display());
        }
        Command::Eval {
            checkpoint,
            results,
            ..
        } => {
            let s = commands::eval(
                &cfg,
                &EvalOptions {
                    checkpoint,
                    results,
                },
            )?;
            println!(
                "accuracy {:.4} on the {:?} split",
                s.evaluation.accuracy, s.split
            );
            if s.low_confidence {
                println!("warning: 2-means found a single cluster; predictions are low-confidence");
            }
            for line in &s.table {
                println!("{line}");
            }
        }
        Command::Ablate => {
            let s = commands::ablate(&cfg)?;
            let failed = s.rows.iter().filter(|r| r.status != "ok").count();
            for c in &s.table {
                let a = c.anchor_scalar.map_or("all".to_string(), |a| a.to_string());
                match (c.mean_accuracy, c.std_accuracy) {
                    (Some(m), Some(sd)) => println!(
                        "{:<26} a={a:<5} {:.1} ± {:.1} ({} runs)",
                        c.variant,
                        m * 100.0,
                        sd * 100.0,
                        c.runs
                    ),
                    _ => println!("{:<26} a={a:<5} no successful runs", c.variant),
                }
            }
            println!(
                "{} cells, {failed} failed; table in {}",
                s.rows.len(),
                cfg.out_dir().join("ablation_table.csv").display()
            );
        }
        Command::VerifyNtk => {
            let (s, _) = commands::verify_ntk(&cfg)?;
            println!(
                "pass rate {:.3} ({} of {} trials; {} outside the regime)",
                s.pass_rate, s.passes, s.trials, s.regime_not_met
            );
            if let Some(slope) = s.sweep_slope {
                println!("log-log slope of ||J^T w|| against n: {slope:.3}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if cli.global.preset.is_none() && cli.global.config.is_none() {
        eprintln!(
            "error: pass --preset <{}> or --config <PATH>",
            PRESETS.join("|")
        );
        return ExitCode::from(2);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
