//! `bimrl` — train, evaluate, ablate, and plot meta-RL experiments.

mod checkpoint;
mod config;
mod metrics;
mod plot;
mod runner;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "bimrl",
    version,
    about = "Meta-RL with task-belief inference, a recurrent hierarchy, dual memory, and curiosity"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train every seed of one config into a fresh run directory
    Train(TrainArgs),
    /// Evaluate a checkpoint on freshly generated tasks
    Eval(EvalArgs),
    /// Plot frames-vs-return curves from run directories into an SVG
    Plot(PlotArgs),
    /// Train the full model plus its three ablations from one config
    Ablate(TrainArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// TOML experiment config
    config: PathBuf,
    /// Root under which the run directory is created
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Override one field, e.g. --set train.lr=3e-4 (repeatable; beats BIMRL_* env vars)
    #[arg(long = "set", value_name = "SECTION.FIELD=VALUE")]
    set: Vec<String>,
    /// One thread per seed instead of sequential seeds
    #[arg(long)]
    parallel: bool,
    /// Suppress per-iteration progress lines
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint written by `bimrl train`
    checkpoint: PathBuf,
    /// Number of fresh tasks to evaluate on
    #[arg(long, default_value_t = 100)]
    n_tasks: usize,
    /// Seed for task generation and the stochastic policy
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Optional config to cross-check against the checkpoint's hash
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    /// Run directories (one curve each)
    #[arg(required = true)]
    run_dirs: Vec<PathBuf>,
    /// Output SVG path
    #[arg(long, default_value = "curves.svg")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.cmd {
        Cmd::Train(a) => cmd_train(a, false),
        Cmd::Ablate(a) => cmd_train(a, true),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Plot(a) => cmd_plot(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn require_file(path: &std::path::Path) -> Option<ExitCode> {
    if path.exists() {
        None
    } else {
        eprintln!("error: config file {} does not exist", path.display());
        Some(ExitCode::from(2))
    }
}

fn cmd_train(a: TrainArgs, ablate: bool) -> Result<ExitCode> {
    if let Some(code) = require_file(&a.config) {
        return Ok(code);
    }
    let cfg = config::ExperimentConfig::load(&a.config, &a.set)?;
    if ablate {
        for (label, variant) in runner::ablation_variants(&cfg) {
            let dir = runner::prepare_run_dir(&variant, &a.out, Some(label))?;
            println!("[{label}] {}", dir.display());
            runner::train_run(&variant, &dir, a.parallel, a.quiet)?;
        }
    } else {
        let dir = runner::prepare_run_dir(&cfg, &a.out, None)?;
        println!("run directory {}", dir.display());
        runner::train_run(&cfg, &dir, a.parallel, a.quiet)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(a: EvalArgs) -> Result<ExitCode> {
    let ckpt = checkpoint::Checkpoint::load(&a.checkpoint)?;
    if let Some(cfg_path) = &a.config {
        if let Some(code) = require_file(cfg_path) {
            return Ok(code);
        }
        let cfg = config::ExperimentConfig::load(cfg_path, &[])?;
        if cfg.hash() != ckpt.config_hash {
            eprintln!(
                "error: config hash mismatch\n  checkpoint: {}\n  config:     {}",
                ckpt.config_hash,
                cfg.hash()
            );
            return Ok(ExitCode::FAILURE);
        }
    }
    let (model, ps) = ckpt.restore_model()?;
    let report = bimrl::agent::evaluate(
        &model,
        &ps,
        ckpt.config.env.spec()?,
        a.n_tasks,
        a.seed,
        &ckpt.config.rollout_options(),
    )?;
    println!(
        "checkpoint {} @ iteration {} ({} frames)",
        a.checkpoint.display(),
        ckpt.iteration,
        ckpt.frames
    );
    println!("{} tasks, stochastic policy, seed {}", report.n_tasks, a.seed);
    for e in 0..report.mean.len() {
        if report.n_tasks == 0 {
            break;
        }
        let marker = if e == 3 { "   <- headline" } else { "" };
        println!(
            "episode {}: return {:.4} +/- {:.4}{marker}",
            e + 1,
            report.mean[e],
            report.stderr[e]
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_plot(a: PlotArgs) -> Result<ExitCode> {
    plot::plot_runs(&a.run_dirs, &a.out)?;
    println!("wrote {}", a.out.display());
    Ok(ExitCode::SUCCESS)
}
