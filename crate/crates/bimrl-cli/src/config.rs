//! Experiment configuration: a TOML file in which every field has a default,
//! plus `BIMRL_`-prefixed environment overrides and `--set` command-line
//! overrides (command line wins). The fully resolved config serializes to a
//! canonical form whose SHA-256 is stamped into metrics and checkpoints.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use bimrl::agent::{LossCoeffs, ModelDims, RolloutOptions, TrainParams};
use bimrl::curiosity::{project_to_simplex, CuriosityWeights};
use bimrl::env::EnvSpec;

pub const ENV_PREFIX: &str = "BIMRL_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvSection,
    pub model: ModelSection,
    pub loss: LossSection,
    pub memory: MemorySection,
    pub curiosity: CuriositySection,
    pub train: TrainSection,
}

/// Which gridworld family to generate tasks from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSection {
    /// "multiroom" or "keycorridor"
    pub family: String,
    /// MultiRoom: number of rooms.
    pub rooms: u32,
    /// MultiRoom: maximum room side length.
    pub max_room_size: u32,
    /// KeyCorridor: room side length.
    pub room_size: u32,
    /// KeyCorridor: rows of side rooms.
    pub rows: u32,
}

impl Default for EnvSection {
    fn default() -> Self {
        Self {
            family: "multiroom".into(),
            rooms: 2,
            max_room_size: 4,
            room_size: 3,
            rows: 1,
        }
    }
}

impl EnvSection {
    pub fn spec(&self) -> Result<EnvSpec> {
        match self.family.as_str() {
            "multiroom" => Ok(EnvSpec::MultiRoom {
                rooms: self.rooms,
                max_room_size: self.max_room_size,
            }),
            "keycorridor" => Ok(EnvSpec::KeyCorridor {
                room_size: self.room_size,
                rows: self.rows,
            }),
            other => bail!(
                "env.family: unknown family {other:?} (expected \"multiroom\" or \"keycorridor\")"
            ),
        }
    }
}

/// Network width hyperparameters. Nothing below is forced by the method;
/// the defaults are a mid-scale configuration that trains on one desktop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub d_obs_embed: usize,
    pub d_patch: usize,
    /// Latent task-belief dimension.
    pub d_m: usize,
    /// Belief-encoder GRU width.
    pub d_enc: usize,
    pub d_h1: usize,
    pub d_h2: usize,
    pub d_h3: usize,
    pub d_window: usize,
    pub d_dec: usize,
    pub d_att: usize,
    pub heads: usize,
    pub d_pi: usize,
    /// Action-window length for the factorized reconstruction (0 = one-step).
    pub n: usize,
    /// TD horizon of the value-prediction target.
    pub td_k: usize,
    pub gamma: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            d_obs_embed: 64,
            d_patch: 16,
            d_m: 10,
            d_enc: 128,
            d_h1: 64,
            d_h2: 64,
            d_h3: 128,
            d_window: 32,
            d_dec: 64,
            d_att: 16,
            heads: 4,
            d_pi: 64,
            n: 3,
            td_k: 5,
            gamma: 0.95,
        }
    }
}

impl ModelSection {
    pub fn dims(&self) -> ModelDims {
        ModelDims {
            d_obs_embed: self.d_obs_embed,
            d_patch: self.d_patch,
            d_m: self.d_m,
            d_enc: self.d_enc,
            d_h1: self.d_h1,
            d_h2: self.d_h2,
            d_h3: self.d_h3,
            d_window: self.d_window,
            d_dec: self.d_dec,
            d_att: self.d_att,
            heads: self.heads,
            d_pi: self.d_pi,
            n: self.n,
            td_k: self.td_k,
            gamma: self.gamma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub clip: f64,
    pub c_value: f64,
    pub c_ent: f64,
    pub c_elbo: f64,
    pub c_plan: f64,
    pub elbo_anchor_stride: usize,
    pub decode_anchor_stride: usize,
    pub ratio_guard: f64,
    pub plan_use_intrinsic: bool,
    pub one_step_no_action: bool,
}

impl Default for LossSection {
    fn default() -> Self {
        let c = LossCoeffs::default();
        Self {
            clip: c.clip,
            c_value: c.c_value,
            c_ent: c.c_ent,
            c_elbo: c.c_elbo,
            c_plan: c.c_plan,
            elbo_anchor_stride: c.elbo_anchor_stride,
            decode_anchor_stride: c.decode_anchor_stride,
            ratio_guard: c.ratio_guard,
            plan_use_intrinsic: c.plan_use_intrinsic,
            one_step_no_action: c.one_step_no_action,
        }
    }
}

impl LossSection {
    pub fn coeffs(&self) -> LossCoeffs {
        LossCoeffs {
            clip: self.clip,
            c_value: self.c_value,
            c_ent: self.c_ent,
            c_elbo: self.c_elbo,
            c_plan: self.c_plan,
            elbo_anchor_stride: self.elbo_anchor_stride,
            decode_anchor_stride: self.decode_anchor_stride,
            ratio_guard: self.ratio_guard,
            plan_use_intrinsic: self.plan_use_intrinsic,
            one_step_no_action: self.one_step_no_action,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemorySection {
    pub capacity: usize,
    pub top_fraction: f64,
    /// "w/o Mem" ablation: no reads, writes, or consolidation.
    pub disabled: bool,
}

impl Default for MemorySection {
    fn default() -> Self {
        Self {
            capacity: 256,
            top_fraction: 0.25,
            disabled: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CuriositySection {
    pub beta: f64,
    pub knn_k: usize,
    pub alpha_default: f64,
    /// Error-mixture weights; projected onto the simplex at load time.
    pub w_state: f64,
    pub w_reward: f64,
    pub w_action: f64,
}

impl Default for CuriositySection {
    fn default() -> Self {
        let w = CuriosityWeights::default();
        Self {
            beta: 0.1,
            knn_k: 10,
            alpha_default: 1.0,
            w_state: w.state,
            w_reward: w.reward,
            w_action: w.action,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr: f64,
    /// Tasks collected per iteration.
    pub meta_batch: usize,
    /// Tasks per optimizer step.
    pub minibatch_tasks: usize,
    pub epochs: usize,
    pub gae_lambda: f64,
    pub normalize_advantages: bool,
    /// One full training run per seed.
    pub seeds: Vec<u64>,
    pub total_frames: u64,
    /// Evaluate every this many iterations (0 = never).
    pub eval_every_iters: usize,
    pub eval_tasks: usize,
    /// Checkpoint every this many iterations (a final one is always written).
    pub checkpoint_every_iters: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            lr: 7e-4,
            meta_batch: 4,
            minibatch_tasks: 4,
            epochs: 4,
            gae_lambda: 0.95,
            normalize_advantages: true,
            seeds: vec![1, 2, 3],
            total_frames: 1_000_000,
            eval_every_iters: 50,
            eval_tasks: 100,
            checkpoint_every_iters: 50,
        }
    }
}

impl ExperimentConfig {
    /// Read a config file and fold in environment and command-line overrides
    /// (`--set section.field=value` beats `BIMRL_SECTION__FIELD` beats file
    /// beats defaults).
    pub fn load(path: &Path, sets: &[String]) -> Result<Self> {
        let env_pairs: Vec<(String, String)> = std::env::vars()
            .filter(|(k, _)| k.starts_with(ENV_PREFIX))
            .collect();
        Self::load_with(path, sets, &env_pairs)
    }

    /// Same as [`load`](Self::load), with the environment passed explicitly.
    pub fn load_with(path: &Path, sets: &[String], env_pairs: &[(String, String)]) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        let mut table: toml::Table = toml::from_str(&text)
            .with_context(|| format!("config file {} is not valid TOML", path.display()))?;

        for (key, raw) in env_pairs {
            let dotted = key[ENV_PREFIX.len()..].to_lowercase().replace("__", ".");
            apply_override(&mut table, &dotted, raw)
                .with_context(|| format!("bad environment override {key}={raw}"))?;
        }
        for set in sets {
            let (dotted, raw) = set
                .split_once('=')
                .with_context(|| format!("--set {set:?} is not of the form section.field=value"))?;
            apply_override(&mut table, dotted.trim(), raw.trim())
                .with_context(|| format!("bad override --set {set}"))?;
        }

        let resolved = toml::to_string(&table).expect("re-serializing a TOML table");
        let cfg: Self = toml::from_str(&resolved)
            .with_context(|| format!("invalid config (after overrides) from {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical text form: defaults resolved, fields in schema order.
    /// Canonicalization is idempotent.
    pub fn canon(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical form, lowercase hex.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canon().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        self.env.spec()?;
        let m = &self.model;
        for (name, v) in [
            ("model.d_obs_embed", m.d_obs_embed),
            ("model.d_patch", m.d_patch),
            ("model.d_m", m.d_m),
            ("model.d_enc", m.d_enc),
            ("model.d_h1", m.d_h1),
            ("model.d_h2", m.d_h2),
            ("model.d_h3", m.d_h3),
            ("model.d_window", m.d_window),
            ("model.d_dec", m.d_dec),
            ("model.d_att", m.d_att),
            ("model.heads", m.heads),
            ("model.d_pi", m.d_pi),
            ("train.meta_batch", self.train.meta_batch),
            ("train.minibatch_tasks", self.train.minibatch_tasks),
            ("train.epochs", self.train.epochs),
            ("memory.capacity", self.memory.capacity),
            ("curiosity.knn_k", self.curiosity.knn_k),
        ] {
            if v == 0 {
                bail!("{name} must be positive");
            }
        }
        if !(0.0..=1.0).contains(&self.memory.top_fraction) {
            bail!("memory.top_fraction must lie in [0, 1]");
        }
        if !(self.model.gamma > 0.0 && self.model.gamma <= 1.0) {
            bail!("model.gamma must lie in (0, 1]");
        }
        if self.train.seeds.is_empty() {
            bail!("train.seeds must name at least one seed");
        }
        if self.train.lr <= 0.0 {
            bail!("train.lr must be positive");
        }
        Ok(())
    }

    pub fn rollout_options(&self) -> RolloutOptions {
        let c = &self.curiosity;
        let [state, reward, action] = project_to_simplex([c.w_state, c.w_reward, c.w_action]);
        let weights = CuriosityWeights {
            state,
            reward,
            action,
        };
        RolloutOptions {
            capacity: self.memory.capacity,
            top_fraction: self.memory.top_fraction,
            beta: c.beta,
            knn_k: c.knn_k,
            alpha_default: c.alpha_default,
            curiosity: weights,
            disable_memory: self.memory.disabled,
        }
    }

    /// Resolve everything the trainer needs for one seed's run.
    pub fn to_train_params(&self, master_seed: u64) -> Result<TrainParams> {
        Ok(TrainParams {
            env: self.env.spec()?,
            dims: self.model.dims(),
            rollout: self.rollout_options(),
            coeffs: self.loss.coeffs(),
            lr: self.train.lr,
            meta_batch: self.train.meta_batch,
            minibatch_tasks: self.train.minibatch_tasks,
            epochs: self.train.epochs,
            gae_lambda: self.train.gae_lambda,
            master_seed,
            normalize_advantages: self.train.normalize_advantages,
        })
    }
}

/// Set `table[a][b] = parsed(raw)` for a dotted path `a.b`.
fn apply_override(table: &mut toml::Table, dotted: &str, raw: &str) -> Result<()> {
    let parts: Vec<&str> = dotted.split('.').collect();
    if parts.len() != 2 || parts.iter().any(|p| p.is_empty()) {
        bail!("override path {dotted:?} must be of the form section.field");
    }
    let value = parse_value(raw);
    let section = table
        .entry(parts[0].to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    match section {
        toml::Value::Table(t) => {
            t.insert(parts[1].to_string(), value);
            Ok(())
        }
        _ => bail!("config key {:?} is not a section", parts[0]),
    }
}

/// Interpret an override value: anything that parses as a TOML literal
/// (number, bool, array, quoted string) does; otherwise it is a bare string.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
