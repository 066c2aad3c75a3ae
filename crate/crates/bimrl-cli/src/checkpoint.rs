//! Versioned JSON checkpoints carrying the full config (and its hash), the
//! parameter tensors, and the optimizer state.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use bimrl::agent::AgentModel;
use bimrl::nn::adam::Adam;
use bimrl::nn::params::{ParamSet, TensorSnapshot};

use crate::config::ExperimentConfig;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub seed: u64,
    pub iteration: usize,
    pub frames: u64,
    pub params: Vec<TensorSnapshot>,
    pub adam: Adam,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path)
            .with_context(|| format!("cannot create checkpoint {}", path.display()))?;
        serde_json::to_writer(BufWriter::new(f), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path)
            .with_context(|| format!("cannot open checkpoint {}", path.display()))?;
        let ckpt: Self = serde_json::from_reader(BufReader::new(f))
            .with_context(|| format!("checkpoint {} is corrupt", path.display()))?;
        if ckpt.version != CHECKPOINT_VERSION {
            bail!(
                "checkpoint {} has version {} but this binary reads version {}",
                path.display(),
                ckpt.version,
                CHECKPOINT_VERSION
            );
        }
        Ok(ckpt)
    }

    /// Rebuild the model architecture from the embedded config and load the
    /// stored tensors into it.
    pub fn restore_model(&self) -> Result<(AgentModel, ParamSet)> {
        let mut ps = ParamSet::new();
        // the RNG only shapes the throwaway init; every tensor is overwritten
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = AgentModel::new(&mut ps, self.config.model.dims(), &mut rng);
        ps.load_snapshot(&self.params)
            .map_err(|e| anyhow::anyhow!("checkpoint does not match the config's architecture: {e}"))?;
        Ok((model, ps))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoints_round_trip_bit_exactly() {
        let cfg = ExperimentConfig {
            model: crate::config::ModelSection {
                d_obs_embed: 6,
                d_patch: 3,
                d_m: 3,
                d_enc: 7,
                d_h1: 5,
                d_h2: 5,
                d_h3: 6,
                d_window: 4,
                d_dec: 5,
                d_att: 4,
                heads: 2,
                d_pi: 5,
                n: 2,
                td_k: 2,
                gamma: 0.95,
            },
            ..ExperimentConfig::default()
        };
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let _model = AgentModel::new(&mut ps, cfg.model.dims(), &mut rng);
        let ckpt = Checkpoint {
            version: CHECKPOINT_VERSION,
            config_hash: cfg.hash(),
            config: cfg,
            seed: 3,
            iteration: 17,
            frames: 4242,
            params: ps.to_snapshot(),
            adam: Adam::new(&ps, 7e-4),
        };

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.iteration, 17);
        assert_eq!(back.frames, 4242);
        assert_eq!(back.config_hash, ckpt.config_hash);

        let (_model, restored) = back.restore_model().unwrap();
        let round = restored.to_snapshot();
        for (r, o) in round.iter().zip(ckpt.params.iter()) {
            assert_eq!(r, o, "tensor {} changed across the round trip", o.name);
        }
        assert_eq!(round.len(), ckpt.params.len());
    }

    #[test]
    fn version_mismatch_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let cfg = ExperimentConfig::default();
        let ckpt = Checkpoint {
            version: CHECKPOINT_VERSION + 1,
            config_hash: cfg.hash(),
            config: cfg,
            seed: 0,
            iteration: 0,
            frames: 0,
            params: Vec::new(),
            adam: Adam::new(&ParamSet::new(), 1e-3),
        };
        let f = File::create(&path).unwrap();
        serde_json::to_writer(BufWriter::new(f), &ckpt).unwrap();
        let err = Checkpoint::load(&path).unwrap_err().to_string();
        assert!(err.contains("version"), "{err}");
    }
}
