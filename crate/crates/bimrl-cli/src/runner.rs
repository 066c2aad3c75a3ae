//! Orchestration of training runs: one run directory per config, one
//! metrics stream and checkpoint per seed, optional ablation expansion.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use bimrl::agent::{evaluate, Trainer};

use crate::checkpoint::{Checkpoint, CHECKPOINT_VERSION};
use crate::config::ExperimentConfig;
use crate::metrics::{self, MetricsRecord};

/// Create the run directory (timestamp + config hash, plus an optional
/// variant label) and write the canonical config into it.
pub fn prepare_run_dir(cfg: &ExperimentConfig, out_root: &Path, label: Option<&str>) -> Result<PathBuf> {
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
    let mut name = format!("{stamp}-{}", &cfg.hash()[..12]);
    if let Some(l) = label {
        name = format!("{stamp}-{l}-{}", &cfg.hash()[..12]);
    }
    let dir = out_root.join(name);
    fs::create_dir_all(&dir)
        .with_context(|| format!("cannot create run directory {}", dir.display()))?;
    fs::write(dir.join("config.toml"), cfg.canon())?;
    Ok(dir)
}

/// Train every seed of a config into `dir`. Seeds run sequentially unless
/// `parallel` puts each on its own thread.
pub fn train_run(cfg: &ExperimentConfig, dir: &Path, parallel: bool, quiet: bool) -> Result<()> {
    cfg.validate()?;
    if parallel && cfg.train.seeds.len() > 1 {
        std::thread::scope(|scope| {
            let handles: Vec<_> = cfg
                .train
                .seeds
                .iter()
                .map(|&seed| scope.spawn(move || run_seed(cfg, seed, dir, quiet)))
                .collect();
            for h in handles {
                h.join().expect("seed thread panicked")?;
            }
            anyhow::Ok(())
        })?;
    } else {
        for &seed in &cfg.train.seeds {
            run_seed(cfg, seed, dir, quiet)?;
        }
    }
    Ok(())
}

/// One seed's full training loop: iterate until the frame budget, append a
/// metrics record per iteration, checkpoint periodically and at the end.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64, dir: &Path, quiet: bool) -> Result<()> {
    let hash = cfg.hash();
    let params = cfg.to_train_params(seed)?;
    let mut trainer = Trainer::new(params);
    let metrics_path = dir.join(format!("metrics-seed{seed}.jsonl"));
    let ckpt_path = dir.join(format!("checkpoint-seed{seed}.json"));
    let evals_path = dir.join(format!("evals-seed{seed}.jsonl"));

    loop {
        let m = trainer.train_iteration()?;
        metrics::append(&metrics_path, &MetricsRecord::from_iteration(&m, &hash, seed))?;
        if !quiet {
            println!(
                "seed {seed} iter {:4}  frames {:8}  returns {:.3} {:.3} {:.3} {:.3}  r_int {:.4}",
                m.iteration,
                m.frames,
                m.episode_returns[0],
                m.episode_returns[1],
                m.episode_returns[2],
                m.episode_returns[3],
                m.intrinsic_mean,
            );
        }

        let iters_done = m.iteration + 1;
        let cadence = cfg.train.eval_every_iters;
        if cadence > 0 && iters_done % cadence == 0 && cfg.train.eval_tasks > 0 {
            let report = evaluate(
                &trainer.model,
                &trainer.ps,
                cfg.env.spec()?,
                cfg.train.eval_tasks,
                seed,
                &cfg.rollout_options(),
            )?;
            let line = serde_json::json!({
                "iteration": m.iteration,
                "frames": m.frames,
                "n_tasks": report.n_tasks,
                "mean": report.mean,
                "stderr": report.stderr,
            });
            use std::io::Write;
            let mut f = fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(&evals_path)?;
            writeln!(f, "{line}")?;
        }
        let ckpt_due = cfg.train.checkpoint_every_iters > 0
            && iters_done % cfg.train.checkpoint_every_iters == 0;
        let done = trainer.frames >= cfg.train.total_frames;
        if ckpt_due || done {
            save_checkpoint(cfg, &hash, seed, &trainer, &ckpt_path)?;
        }
        if done {
            break;
        }
    }
    Ok(())
}

fn save_checkpoint(
    cfg: &ExperimentConfig,
    hash: &str,
    seed: u64,
    trainer: &Trainer,
    path: &Path,
) -> Result<()> {
    Checkpoint {
        version: CHECKPOINT_VERSION,
        config_hash: hash.to_string(),
        config: cfg.clone(),
        seed,
        iteration: trainer.iteration,
        frames: trainer.frames,
        params: trainer.ps.to_snapshot(),
        adam: trainer.adam.clone(),
    }
    .save(path)
}

/// The four-way ablation study: the full model plus the three single-feature
/// removals, as named variants of one base config.
pub fn ablation_variants(base: &ExperimentConfig) -> Vec<(&'static str, ExperimentConfig)> {
    let mut no_mem = base.clone();
    no_mem.memory.disabled = true;

    let mut no_value_pred = base.clone();
    no_value_pred.loss.c_plan = 0.0;

    let mut no_n_step = base.clone();
    no_n_step.model.n = 0;
    no_n_step.loss.one_step_no_action = true;

    vec![
        ("full", base.clone()),
        ("no-mem", no_mem),
        ("no-value-pred", no_value_pred),
        ("no-n-step", no_n_step),
    ]
}
