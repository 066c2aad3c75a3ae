//! Line-delimited metrics: one self-describing JSON record per line,
//! appended as training progresses. Within `version` 1 the field set and
//! order are frozen.

use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use bimrl::agent::IterationMetrics;

pub const METRICS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub iteration: usize,
    pub frames: u64,
    /// Mean extrinsic return per within-task episode index.
    pub episode_returns: [f64; 4],
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub recon: f64,
    pub kl: f64,
    pub plan: f64,
    pub intrinsic_mean: f64,
    pub ratio_max: f64,
    pub wall_ms: u64,
}

impl MetricsRecord {
    pub fn from_iteration(m: &IterationMetrics, config_hash: &str, seed: u64) -> Self {
        Self {
            version: METRICS_VERSION,
            config_hash: config_hash.to_string(),
            seed,
            iteration: m.iteration,
            frames: m.frames,
            episode_returns: m.episode_returns,
            policy_loss: m.policy_loss,
            value_loss: m.value_loss,
            entropy: m.entropy,
            recon: m.recon,
            kl: m.kl,
            plan: m.plan,
            intrinsic_mean: m.intrinsic_mean,
            ratio_max: m.ratio_max,
            wall_ms: m.wall_ms,
        }
    }
}

/// Append one record; the file is created on first use and never rewritten.
pub fn append(path: &Path, record: &MetricsRecord) -> Result<()> {
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("cannot open metrics file {}", path.display()))?;
    let line = serde_json::to_string(record)?;
    writeln!(f, "{line}")?;
    Ok(())
}

pub fn read_all(path: &Path) -> Result<Vec<MetricsRecord>> {
    let f = std::fs::File::open(path)
        .with_context(|| format!("cannot open metrics file {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: MetricsRecord = serde_json::from_str(&line).with_context(|| {
            format!("metrics file {} line {} is corrupt", path.display(), i + 1)
        })?;
        out.push(rec);
    }
    Ok(out)
}
