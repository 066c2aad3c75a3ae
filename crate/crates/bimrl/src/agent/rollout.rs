//! Meta-episode collection: four consecutive episodes on one task, acted by
//! the current policy on small throwaway graphs, producing a replayable
//! batch (observations, actions, rewards, sampling noise) for the update.

use ndarray::Array1;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::belief::BeliefPosterior;
use crate::curiosity::{curiosity_term, intrinsic_reward, newness, CuriosityWeights};
use crate::env::{Action, GridEnv, TaskSpec, EPISODES_PER_TASK};
use crate::memory::{EpisodicMemory, HebbianState};
use crate::nn::graph::Graph;
use crate::nn::params::ParamSet;

use super::model::{AgentModel, HierarchyState};
use super::AgentError;

/// Everything the rollout needs besides the model: memory sizing, the
/// curiosity shaping, and the ablation switch.
#[derive(Debug, Clone)]
pub struct RolloutOptions {
    pub capacity: usize,
    pub top_fraction: f64,
    pub beta: f64,
    pub knn_k: usize,
    pub alpha_default: f64,
    pub curiosity: CuriosityWeights,
    /// "w/o Mem": zero readout, no writes, no consolidation; the novelty
    /// coefficient stays at its default.
    pub disable_memory: bool,
}

impl Default for RolloutOptions {
    fn default() -> Self {
        Self {
            capacity: 256,
            top_fraction: 0.25,
            beta: 0.1,
            knn_k: 10,
            alpha_default: 1.0,
            curiosity: CuriosityWeights::default(),
            disable_memory: false,
        }
    }
}

/// One environment step as recorded during collection.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub action: usize,
    pub log_prob: f64,
    pub value: f64,
    pub reward_ext: f64,
    pub reward_int: f64,
    pub episode_done: bool,
    pub episode_index: usize,
    /// 1-based step within the episode (the slot write time).
    pub step_in_episode: usize,
    /// Reparameterization noise for the posterior *after* this step.
    pub noise: Array1<f64>,
}

/// A full task rollout plus advantage targets.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBatch {
    pub task_seed: u64,
    pub policy_seed: u64,
    /// Flattened observations, length `T + 1`; `obs[u]` is what the agent
    /// saw before acting at step `u+1`. At an episode boundary the next
    /// entry is the reset observation of the following episode.
    pub obs: Vec<Array1<f64>>,
    pub steps: Vec<StepRecord>,
    /// Noise for the initial posterior (before any step).
    pub noise0: Array1<f64>,
    /// Per-episode horizon of the task (H; the task allows 4·H steps).
    pub horizon: usize,
    pub advantages: Vec<f64>,
    pub value_targets: Vec<f64>,
}

impl RolloutBatch {
    pub fn total_steps(&self) -> usize {
        self.steps.len()
    }

    /// Extrinsic return summed per episode index.
    pub fn episode_returns(&self) -> [f64; EPISODES_PER_TASK] {
        let mut out = [0.0; EPISODES_PER_TASK];
        for s in &self.steps {
            out[s.episode_index] += s.reward_ext;
        }
        out
    }

    pub fn mean_intrinsic(&self) -> f64 {
        if self.steps.is_empty() {
            return 0.0;
        }
        self.steps.iter().map(|s| s.reward_int).sum::<f64>() / self.steps.len() as f64
    }
}

/// Generalized advantage estimation over the whole task (episode boundaries
/// inside a task do not terminate the value recursion; the task end does).
pub(crate) fn fill_gae(batch: &mut RolloutBatch, gamma: f64, lambda: f64) {
    let t_len = batch.steps.len();
    batch.advantages = vec![0.0; t_len];
    batch.value_targets = vec![0.0; t_len];
    let mut acc = 0.0;
    for u in (0..t_len).rev() {
        let r = batch.steps[u].reward_ext + batch.steps[u].reward_int;
        let v = batch.steps[u].value;
        let v_next = if u + 1 < t_len {
            batch.steps[u + 1].value
        } else {
            0.0
        };
        let delta = r + gamma * v_next - v;
        acc = delta + gamma * lambda * acc;
        batch.advantages[u] = acc;
        batch.value_targets[u] = acc + v;
    }
}

fn sample_categorical(probs: &Array1<f64>, rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random_range(0.0..1.0);
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn draw_noise(d: usize, rng: &mut ChaCha8Rng) -> Array1<f64> {
    Array1::from_shape_fn(d, |_| {
        let e: f64 = StandardNormal.sample(rng);
        e
    })
}

/// Play the four episodes of one task with the current parameters.
///
/// Per step: read both memories with the controller state and the current
/// event key, combine, advance levels 1–3, sample an action, step the
/// environment, encode the next observation into the belief, score curiosity
/// against the pre-write slot keys, then write the event. At each episode
/// end the episodic store is consolidated into the associative store and
/// cleared. GAE advantages are filled in before returning.
pub fn meta_rollout(
    model: &AgentModel,
    ps: &ParamSet,
    task: TaskSpec,
    policy_seed: u64,
    opts: &RolloutOptions,
    gae_lambda: f64,
) -> Result<RolloutBatch, AgentError> {
    let dims = &model.dims;
    let mut env = GridEnv::new(task.clone());
    let horizon = env.horizon();
    let mut rng = ChaCha8Rng::seed_from_u64(policy_seed);

    let mut state = HierarchyState::zeros(dims);
    let mut mem = EpisodicMemory::new(opts.capacity);
    let mut heb = HebbianState::zeros(dims.d_val(), dims.d_key());

    // initial observation and posterior
    let obs0 = env.reset(0)?;
    let obs0 = obs0.flatten();
    let (mut embed_prev, mut post_prev) = {
        let mut g = Graph::new();
        let e = model.embedder.embed(&mut g, ps, &obs0);
        let enc = g.constant(state.enc.clone());
        let (enc2, post) = model.belief.encode_step(&mut g, ps, enc, e, None, 0.0);
        state.enc = g.vec(enc2).clone();
        (g.vec(e).clone(), model.belief.posterior_values(&g, post))
    };
    let noise0 = draw_noise(dims.d_m, &mut rng);
    // noise for the posterior the next curiosity term will sample from
    let mut noise_prev = noise0.clone();

    let mut batch = RolloutBatch {
        task_seed: task.seed,
        policy_seed,
        obs: vec![obs0],
        steps: Vec::new(),
        noise0,
        horizon,
        advantages: Vec::new(),
        value_targets: Vec::new(),
    };

    let mut prev_action: Option<usize> = None;
    let mut prev_reward = 0.0;
    let mut step_in_episode = 0usize;

    loop {
        step_in_episode += 1;
        let episode_index = env.episode_index();
        let mut g = Graph::new();

        let e_prev = g.constant(embed_prev.clone());
        let feat_prev = g.constant(post_prev.feature());
        let key_now = g.concat(&[e_prev, feat_prev]);
        let key_now_arr = g.vec(key_now).clone();
        let h3_node = g.constant(state.h3.clone());

        // memory reads, then the three levels, then the heads
        let readout = if opts.disable_memory {
            g.zeros(dims.d_val())
        } else {
            let (ep_out, _) = model.memory.read_episodic(&mut g, ps, &mut mem, h3_node);
            let heb_out = model.memory.read_hebbian(&mut g, &heb, key_now);
            model.memory.combine(&mut g, ps, h3_node, ep_out, heb_out)
        };
        let h1_node = g.constant(state.h1.clone());
        let h1_next = model.world.level1_step(
            &mut g,
            ps,
            h1_node,
            e_prev,
            prev_action,
            prev_reward,
            feat_prev,
        );
        let h2_node = g.constant(state.h2.clone());
        let h2_next = model
            .planner
            .level2_step(&mut g, ps, h2_node, h1_next, e_prev, &[]);
        let h3_next =
            model.controller_step(&mut g, ps, h3_node, h2_next, e_prev, feat_prev, readout);
        let (logits, value_node) = model.act(&mut g, ps, h3_next);
        let probs_node = g.softmax(logits);
        let logp_node = g.log_softmax(logits);
        let probs = g.vec(probs_node).clone();
        let action = sample_categorical(&probs, &mut rng);
        let log_prob = g.vec(logp_node)[action];
        let value = g.scalar_value(value_node);

        let tr = env.step(Action::from_index(action)?)?;
        let reward_ext = tr.reward;
        let obs_next = if tr.episode_done && !tr.task_done {
            env.reset(env.episode_index() + 1)?.flatten()
        } else {
            tr.obs.flatten()
        };

        // next embedding and posterior (the reset observation at boundaries)
        let e_next = model.embedder.embed(&mut g, ps, &obs_next);
        let enc_node = g.constant(state.enc.clone());
        let (enc_next, post_next_nodes) =
            model
                .belief
                .encode_step(&mut g, ps, enc_node, e_next, Some(action), reward_ext);
        let post_next = model.belief.posterior_values(&g, post_next_nodes);

        // curiosity: one-step surprise under the pre-step belief, scaled by
        // novelty of the arrival key against the pre-write episodic keys
        let reward_int = {
            let m = sample_posterior_plain(&post_prev, &noise_prev);
            let m_node = g.constant(m);
            let pred_s = model.world.decode_state(&mut g, ps, e_prev, &[action], m_node)?;
            let state_err = {
                let p = g.vec(pred_s);
                p.iter()
                    .zip(obs_next.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    / obs_next.len() as f64
            };
            let pred_r = model
                .world
                .decode_reward(&mut g, ps, e_prev, &[action], m_node)?;
            let reward_err = {
                let d = g.scalar_value(pred_r) - reward_ext;
                d * d
            };
            let pred_a = model
                .world
                .decode_action(&mut g, ps, &[e_prev, e_next], m_node)?;
            let action_err = -g.vec(pred_a)[action].max(1e-12).ln();
            let term = curiosity_term(state_err, reward_err, action_err, &opts.curiosity);

            let feat_next = post_next.feature();
            let mut key_next = Array1::zeros(dims.d_key());
            let e_next_vals = g.vec(e_next);
            for i in 0..dims.d_obs_embed {
                key_next[i] = e_next_vals[i];
            }
            for i in 0..2 * dims.d_m {
                key_next[dims.d_obs_embed + i] = feat_next[i];
            }
            let alpha = newness(
                mem.slots().iter().map(|s| &s.key),
                &key_next,
                opts.knn_k,
                opts.alpha_default,
            );
            intrinsic_reward(opts.beta, alpha, term)
        };

        if !opts.disable_memory {
            mem.write(
                key_now_arr,
                g.vec(h3_next).clone(),
                None,
                step_in_episode,
            );
        }

        if tr.episode_done && !opts.disable_memory {
            model
                .memory
                .consolidate(&mut g, ps, &mut mem, &mut heb, horizon, opts.top_fraction);
            heb.node = None; // the step graph is about to be dropped
        }
        if tr.episode_done && opts.disable_memory {
            mem.clear();
        }

        // draw the noise for the new posterior and record the step
        let noise = draw_noise(dims.d_m, &mut rng);
        batch.steps.push(StepRecord {
            action,
            log_prob,
            value,
            reward_ext,
            reward_int,
            episode_done: tr.episode_done,
            episode_index,
            step_in_episode,
            noise: noise.clone(),
        });
        batch.obs.push(obs_next.clone());

        // carry states
        state.enc = g.vec(enc_next).clone();
        state.h1 = g.vec(h1_next).clone();
        state.h2 = g.vec(h2_next).clone();
        state.h3 = g.vec(h3_next).clone();
        embed_prev = g.vec(e_next).clone();
        post_prev = post_next;
        noise_prev = noise;
        prev_action = Some(action);
        prev_reward = reward_ext;
        if tr.episode_done {
            step_in_episode = 0;
        }
        debug_assert!(state.all_finite(), "hierarchy state went non-finite");

        if tr.task_done {
            break;
        }
    }

    assert!(
        batch.steps.len() <= EPISODES_PER_TASK * horizon,
        "rollout exceeded the task horizon"
    );
    fill_gae(&mut batch, dims.gamma, gae_lambda);
    Ok(batch)
}

fn sample_posterior_plain(post: &BeliefPosterior, noise: &Array1<f64>) -> Array1<f64> {
    let mut out = post.mean.clone();
    for i in 0..out.len() {
        out[i] += (post.logvar[i] / 2.0).exp() * noise[i];
    }
    out
}
