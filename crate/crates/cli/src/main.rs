use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use rfdcn_cli::commands::{
    class_names, cmd_eval, cmd_fingerprint, cmd_generate, cmd_preprocess, cmd_train, eval_table, fingerprint_table,
};
use rfdcn_cli::RunConfig;

#[derive(Parser)]
#[command(name = "rfdcn", version, about = "RF device fingerprinting with complex-valued networks")]
struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true, default_value = "rfdcn.json")]
    config: PathBuf,
    /// Overrides synth.seed and train.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for data generation.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize a labeled SigMF dataset.
    Generate,
    /// Filter and decimate the dataset into the window store.
    Preprocess,
    /// Train and write the checkpoint and history.
    Train,
    /// Score the checkpoint on the test split.
    Eval {
        /// Print JSON instead of the table.
        #[arg(long)]
        json: bool,
    },
    /// Rank device classes for one SigMF capture.
    Fingerprint {
        /// Path to the capture's .sigmf-meta file.
        capture: PathBuf,
        #[arg(long, default_value_t = 5)]
        top: usize,
        #[arg(long)]
        json: bool,
    },
    /// Print the default configuration.
    InitConfig,
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring thread pool")?;
    }
    if let Cmd::InitConfig = cli.cmd {
        println!("{}", RunConfig::default().to_json()?);
        return Ok(());
    }
    let mut cfg = RunConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    match cli.cmd {
        Cmd::Generate => {
            let s = cmd_generate(&cfg)?;
            eprintln!("wrote {} windows for {} classes to {}", s.windows, s.classes, s.dir.display());
        }
        Cmd::Preprocess => {
            let dir = cmd_preprocess(&cfg)?;
            eprintln!("wrote window store to {}", dir.display());
        }
        Cmd::Train => {
            let h = cmd_train(&cfg)?;
            eprintln!(
                "{} epochs, best val top-1 {:.4} at epoch {}, final lr {:.1e}; checkpoint {}",
                h.epochs.len(),
                h.best_val_top1,
                h.best_epoch,
                h.final_lr,
                cfg.paths.checkpoint.display()
            );
        }
        Cmd::Eval { json } => {
            let r = cmd_eval(&cfg)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&r)?);
            } else {
                print!("{}", eval_table(&r, &class_names(&cfg)));
            }
        }
        Cmd::Fingerprint { capture, top, json } => {
            let fp = cmd_fingerprint(&cfg, &capture)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&fp)?);
            } else {
                print!("{}", fingerprint_table(&fp, top));
            }
        }
        Cmd::InitConfig => unreachable!(),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            for cause in e.chain().skip(1) {
                eprintln!("  caused by: {cause}");
            }
            ExitCode::FAILURE
        }
    }
}
