//! The outer training loop: collect one batch of task rollouts, then run
//! minibatched epochs of the assembled loss, under a single deterministic
//! seed tree.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::env::{generate_task, EnvSpec, EPISODES_PER_TASK};
use crate::nn::adam::Adam;
use crate::nn::graph::Graph;
use crate::nn::params::{GradStore, ParamSet};

use super::loss::{normalize, task_loss, LossCoeffs};
use super::model::{AgentModel, ModelDims};
use super::rollout::{meta_rollout, RolloutBatch, RolloutOptions};
use super::AgentError;

/// One step of the splitmix64 sequence; a small, stable mixing function.
fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic, platform-independent seed derivation: one master seed,
/// a stream label (task layouts, policy noise, shuffling, …), and an index.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(stream)).wrapping_add(index))
}

/// Everything the training loop needs, already resolved (no config parsing
/// at this layer).
#[derive(Debug, Clone)]
pub struct TrainParams {
    pub env: EnvSpec,
    pub dims: ModelDims,
    pub rollout: RolloutOptions,
    pub coeffs: LossCoeffs,
    pub lr: f64,
    /// Tasks collected per iteration.
    pub meta_batch: usize,
    /// Tasks per optimizer step.
    pub minibatch_tasks: usize,
    pub epochs: usize,
    pub gae_lambda: f64,
    pub master_seed: u64,
    pub normalize_advantages: bool,
}

/// Per-iteration metrics record.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub frames: u64,
    /// Mean extrinsic return per episode index across the iteration's tasks.
    pub episode_returns: [f64; EPISODES_PER_TASK],
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

/// Owns the parameters, optimizer, and counters of one training run.
pub struct Trainer {
    pub params: TrainParams,
    pub ps: ParamSet,
    pub model: AgentModel,
    pub adam: Adam,
    pub iteration: usize,
    pub frames: u64,
}

impl Trainer {
    pub fn new(params: TrainParams) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(params.master_seed, 0, 0));
        let mut ps = ParamSet::new();
        let model = AgentModel::new(&mut ps, params.dims.clone(), &mut rng);
        let adam = Adam::new(&ps, params.lr);
        Self {
            params,
            ps,
            model,
            adam,
            iteration: 0,
            frames: 0,
        }
    }

    /// Collect `meta_batch` task rollouts under the current policy.
    fn collect(&self) -> Result<Vec<RolloutBatch>, AgentError> {
        let p = &self.params;
        let it = self.iteration as u64;
        let mut batches = Vec::with_capacity(p.meta_batch);
        for j in 0..p.meta_batch as u64 {
            let idx = it * p.meta_batch as u64 + j;
            let task = generate_task(p.env.clone(), derive_seed(p.master_seed, 1, idx))?;
            let batch = meta_rollout(
                &self.model,
                &self.ps,
                task,
                derive_seed(p.master_seed, 2, idx),
                &p.rollout,
                p.gae_lambda,
            )?;
            batches.push(batch);
        }
        Ok(batches)
    }

    /// One full iteration: collection plus the configured update epochs.
    pub fn train_iteration(&mut self) -> Result<IterationMetrics, AgentError> {
        let t0 = Instant::now();
        let p = self.params.clone();
        let batches = self.collect()?;

        // advantage normalization across the whole iteration batch
        let mut advantages: Vec<Vec<f64>> =
            batches.iter().map(|b| b.advantages.clone()).collect();
        if p.normalize_advantages {
            let mut flat: Vec<f64> = advantages.iter().flatten().copied().collect();
            normalize(&mut flat);
            let mut off = 0;
            for adv in advantages.iter_mut() {
                let len = adv.len();
                adv.copy_from_slice(&flat[off..off + len]);
                off += len;
            }
        }

        let mut order: Vec<usize> = (0..batches.len()).collect();
        let mut shuffle_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(p.master_seed, 3, self.iteration as u64));
        let mut grads = GradStore::zeros_like(&self.ps);

        let mut acc = StatsAcc::default();
        let mut stepped = false;
        for _epoch in 0..p.epochs {
            order.shuffle(&mut shuffle_rng);
            for chunk in order.chunks(p.minibatch_tasks.max(1)) {
                grads.reset();
                for &ti in chunk {
                    let mut g = Graph::new();
                    let (nodes, stats) = task_loss(
                        &self.model,
                        &self.ps,
                        &mut g,
                        &batches[ti],
                        &advantages[ti],
                        &p.coeffs,
                        &p.rollout,
                    )?;
                    if !stats.total.is_finite() {
                        return Err(AgentError::NonFinite {
                            what: "loss".into(),
                            iteration: self.iteration,
                            stats: batch_diagnostics(&batches[ti], &advantages[ti]),
                        });
                    }
                    // before the first optimizer step of the iteration the
                    // replay must reproduce the rollout's log-probs exactly;
                    // once parameters have moved the ratios drift by design
                    if !stepped {
                        let mut gap: f64 = 0.0;
                        for (re, s) in stats
                            .recomputed_log_probs
                            .iter()
                            .zip(&batches[ti].steps)
                        {
                            gap = gap.max((re - s.log_prob).abs());
                        }
                        if gap > 1e-5 {
                            return Err(AgentError::OffPolicy { max_gap: gap });
                        }
                    }
                    acc.add(&stats);
                    g.backward(nodes.total, &mut grads);
                }
                grads.scale(1.0 / chunk.len() as f64);
                if !grads.l2_norm().is_finite() {
                    return Err(AgentError::NonFinite {
                        what: "gradient".into(),
                        iteration: self.iteration,
                        stats: batch_diagnostics(&batches[chunk[0]], &advantages[chunk[0]]),
                    });
                }
                self.adam.step(&mut self.ps, &grads);
                stepped = true;
            }
        }

        let new_frames: u64 = batches.iter().map(|b| b.total_steps() as u64).sum();
        self.frames += new_frames;
        let mut episode_returns = [0.0; EPISODES_PER_TASK];
        for b in &batches {
            let r = b.episode_returns();
            for (slot, v) in episode_returns.iter_mut().zip(r) {
                *slot += v;
            }
        }
        for slot in episode_returns.iter_mut() {
            *slot /= batches.len() as f64;
        }
        let intrinsic_mean =
            batches.iter().map(|b| b.mean_intrinsic()).sum::<f64>() / batches.len() as f64;

        let metrics = IterationMetrics {
            iteration: self.iteration,
            frames: self.frames,
            episode_returns,
            policy_loss: acc.mean(acc.policy),
            value_loss: acc.mean(acc.value),
            entropy: acc.mean(acc.entropy),
            recon: acc.mean(acc.recon),
            kl: acc.mean(acc.kl),
            plan: acc.mean(acc.plan),
            intrinsic_mean,
            ratio_max: acc.ratio_max,
            wall_ms: t0.elapsed().as_millis() as u64,
        };
        self.iteration += 1;
        Ok(metrics)
    }
}

#[derive(Default)]
struct StatsAcc {
    policy: f64,
    value: f64,
    entropy: f64,
    recon: f64,
    kl: f64,
    plan: f64,
    ratio_max: f64,
    count: usize,
}

impl StatsAcc {
    fn add(&mut self, s: &super::loss::LossStats) {
        self.policy += s.policy;
        self.value += s.value;
        self.entropy += s.entropy;
        self.recon += s.recon;
        self.kl += s.kl;
        self.plan += s.plan;
        self.ratio_max = self.ratio_max.max(s.ratio_max);
        self.count += 1;
    }

    fn mean(&self, sum: f64) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            sum / self.count as f64
        }
    }
}

fn batch_diagnostics(batch: &RolloutBatch, advantages: &[f64]) -> String {
    let t = batch.total_steps().max(1) as f64;
    let r_sum: f64 = batch.steps.iter().map(|s| s.reward_ext).sum();
    let ri_sum: f64 = batch.steps.iter().map(|s| s.reward_int).sum();
    let a_mean = advantages.iter().sum::<f64>() / advantages.len().max(1) as f64;
    let a_absmax = advantages.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    format!(
        "steps={}, R_ext={r_sum:.4}, R_int={ri_sum:.4}, r_ext/step={:.4}, adv mean={a_mean:.4}, adv |max|={a_absmax:.4}, task_seed={}, policy_seed={}",
        batch.total_steps(),
        r_sum / t,
        batch.task_seed,
        batch.policy_seed,
    )
}

/// Per-episode-index evaluation summary over fresh tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub n_tasks: usize,
    pub mean: [f64; EPISODES_PER_TASK],
    pub stderr: [f64; EPISODES_PER_TASK],
}

/// Evaluate the (stochastic) policy on `n_tasks` freshly generated tasks.
pub fn evaluate(
    model: &AgentModel,
    ps: &ParamSet,
    env: EnvSpec,
    n_tasks: usize,
    seed: u64,
    opts: &RolloutOptions,
) -> Result<EvalReport, AgentError> {
    let mut per_episode: Vec<[f64; EPISODES_PER_TASK]> = Vec::with_capacity(n_tasks);
    for j in 0..n_tasks as u64 {
        let task = generate_task(env.clone(), derive_seed(seed, 10, j))?;
        let batch = meta_rollout(model, ps, task, derive_seed(seed, 11, j), opts, 0.95)?;
        per_episode.push(batch.episode_returns());
    }
    let mut mean = [0.0; EPISODES_PER_TASK];
    let mut stderr = [0.0; EPISODES_PER_TASK];
    if n_tasks == 0 {
        return Ok(EvalReport {
            n_tasks,
            mean,
            stderr,
        });
    }
    for e in 0..EPISODES_PER_TASK {
        let vals: Vec<f64> = per_episode.iter().map(|r| r[e]).collect();
        let m = vals.iter().sum::<f64>() / n_tasks as f64;
        mean[e] = m;
        if n_tasks > 1 {
            let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>()
                / (n_tasks - 1) as f64;
            stderr[e] = (var / n_tasks as f64).sqrt();
        }
    }
    Ok(EvalReport {
        n_tasks,
        mean,
        stderr,
    })
}
