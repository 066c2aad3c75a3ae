//! Update-time loss: the whole task is replayed inside one graph so the
//! clipped policy objective, the value regression, the entropy bonus, the
//! trajectory ELBO, and the value-prediction loss all share the same
//! recurrent computation — and gradient reaches the plasticity
//! meta-parameters through the replayed consolidations.

use crate::belief::{kl_to_prior, sample, PosteriorNodes};
use crate::memory::{EpisodicMemory, HebbianState};
use crate::nn::graph::{Graph, NodeId};
use crate::nn::params::ParamSet;

use super::model::AgentModel;
use super::rollout::{RolloutBatch, RolloutOptions};
use super::AgentError;

/// Loss weights and the update-time cost knobs.
#[derive(Debug, Clone)]
pub struct LossCoeffs {
    pub clip: f64,
    pub c_value: f64,
    pub c_ent: f64,
    pub c_elbo: f64,
    pub c_plan: f64,
    /// Stride over posterior anchors t when averaging the per-t ELBO.
    pub elbo_anchor_stride: usize,
    /// Stride over reconstruction anchors i inside each ELBO term.
    pub decode_anchor_stride: usize,
    /// Stale-batch guard: any ratio outside [1/bound, bound] aborts.
    pub ratio_guard: f64,
    /// Whether value-prediction TD targets include the intrinsic reward.
    pub plan_use_intrinsic: bool,
    /// "w/o N step": drop the action decoder's terms from the ELBO.
    pub one_step_no_action: bool,
}

impl Default for LossCoeffs {
    fn default() -> Self {
        Self {
            clip: 0.2,
            c_value: 0.5,
            c_ent: 0.01,
            c_elbo: 1.0,
            c_plan: 0.5,
            elbo_anchor_stride: 4,
            decode_anchor_stride: 4,
            ratio_guard: 10.0,
            plan_use_intrinsic: true,
            one_step_no_action: false,
        }
    }
}

/// Forward values of every component, for metrics and contract checks.
#[derive(Debug, Clone, Default)]
pub struct LossStats {
    pub total: f64,
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub recon: f64,
    pub kl: f64,
    pub plan: f64,
    pub ratio_max: f64,
    pub recomputed_log_probs: Vec<f64>,
}

/// Graph handles to the individual terms (useful for targeted backward
/// passes in tests).
#[derive(Debug, Clone, Copy)]
pub struct TaskLossNodes {
    pub total: NodeId,
    pub policy: NodeId,
    pub value: NodeId,
    pub entropy: NodeId,
    pub elbo: NodeId,
    pub plan: NodeId,
}

/// Replay one task batch through the current parameters and assemble the
/// full objective. `advantages` are the (possibly normalized) per-step
/// advantage estimates; targets and old log-probs come from the batch.
#[allow(clippy::too_many_arguments)]
pub fn task_loss(
    model: &AgentModel,
    ps: &ParamSet,
    g: &mut Graph,
    batch: &RolloutBatch,
    advantages: &[f64],
    coeffs: &LossCoeffs,
    opts: &RolloutOptions,
) -> Result<(TaskLossNodes, LossStats), AgentError> {
    let dims = &model.dims;
    let t_len = batch.steps.len();
    assert!(t_len >= 2, "task batch too short to train on");
    assert_eq!(advantages.len(), t_len);
    assert_eq!(batch.obs.len(), t_len + 1);

    let actions: Vec<usize> = batch.steps.iter().map(|s| s.action).collect();
    let rewards_ext: Vec<f64> = batch.steps.iter().map(|s| s.reward_ext).collect();
    let critic_values: Vec<f64> = batch.steps.iter().map(|s| s.value).collect();

    // observation embeddings for every time point
    let e_nodes: Vec<NodeId> = batch
        .obs
        .iter()
        .map(|o| model.embedder.embed(g, ps, o))
        .collect();

    // belief chain over the whole task
    let mut posts: Vec<PosteriorNodes> = Vec::with_capacity(t_len + 1);
    let mut feats: Vec<NodeId> = Vec::with_capacity(t_len + 1);
    let mut enc = model.belief.zero_state(g);
    for u in 0..=t_len {
        let (action, reward) = if u == 0 {
            (None, 0.0)
        } else {
            (Some(actions[u - 1]), rewards_ext[u - 1])
        };
        let (enc2, post) = model
            .belief
            .encode_step(g, ps, enc, e_nodes[u], action, reward);
        enc = enc2;
        feats.push(g.concat(&[post.mean, post.logvar]));
        posts.push(post);
    }

    // hierarchy + memory + policy replay
    let mut mem = EpisodicMemory::new(opts.capacity);
    let mut heb = HebbianState::zeros(dims.d_val(), dims.d_key());
    let mut h1 = model.world.zero_state(g);
    let mut h2 = model.planner.zero_state(g);
    let mut h2_tf = model.planner.zero_state(g);
    let mut h3 = g.zeros(dims.d_h3);
    let build_tf = coeffs.c_plan != 0.0;

    let mut logp_nodes = Vec::with_capacity(t_len);
    let mut entropy_nodes = Vec::with_capacity(t_len);
    let mut value_nodes = Vec::with_capacity(t_len);
    let mut h2_tf_seq = Vec::with_capacity(t_len);

    for i in 0..t_len {
        let e_prev = e_nodes[i];
        let feat_prev = feats[i];
        let key = g.concat(&[e_prev, feat_prev]);

        let readout = if opts.disable_memory {
            g.zeros(dims.d_val())
        } else {
            let (ep_out, _) = model.memory.read_episodic(g, ps, &mut mem, h3);
            let heb_out = model.memory.read_hebbian(g, &heb, key);
            model.memory.combine(g, ps, h3, ep_out, heb_out)
        };

        let (prev_action, prev_reward) = if i == 0 {
            (None, 0.0)
        } else {
            (Some(actions[i - 1]), rewards_ext[i - 1])
        };
        h1 = model
            .world
            .level1_step(g, ps, h1, e_prev, prev_action, prev_reward, feat_prev);
        h2 = model.planner.level2_step(g, ps, h2, h1, e_prev, &[]);
        if build_tf {
            let window = &actions[i..(i + dims.n).min(t_len)];
            h2_tf = model.planner.level2_step(g, ps, h2_tf, h1, e_prev, window);
            h2_tf_seq.push(h2_tf);
        }
        h3 = model.controller_step(g, ps, h3, h2, e_prev, feat_prev, readout);
        let (logits, value) = model.act(g, ps, h3);
        let probs = g.softmax(logits);
        let logp_all = g.log_softmax(logits);
        let lp = g.slice(logp_all, actions[i], 1);
        logp_nodes.push(lp);
        let pl = g.dot(probs, logp_all);
        entropy_nodes.push(g.scale(pl, -1.0));
        value_nodes.push(value);

        if !opts.disable_memory {
            let key_arr = g.vec(key).clone();
            let val_arr = g.vec(h3).clone();
            mem.write(
                key_arr,
                val_arr,
                Some((key, h3)),
                batch.steps[i].step_in_episode,
            );
            if batch.steps[i].episode_done {
                model.memory.consolidate(
                    g,
                    ps,
                    &mut mem,
                    &mut heb,
                    batch.horizon,
                    opts.top_fraction,
                );
            }
        }
    }

    // clipped policy objective; targets and old log-probs are data
    let mut policy_terms = Vec::with_capacity(t_len);
    let mut ratio_max: f64 = 0.0;
    let mut recomputed = Vec::with_capacity(t_len);
    for i in 0..t_len {
        recomputed.push(g.scalar_value(logp_nodes[i]));
        let old = g.scalar(batch.steps[i].log_prob);
        let diff = g.sub(logp_nodes[i], old);
        let ratio = g.exp(diff);
        let r = g.scalar_value(ratio);
        ratio_max = ratio_max.max(r).max(1.0 / r.max(1e-300));
        let surr1 = g.scale(ratio, advantages[i]);
        let clipped = g.clamp(ratio, 1.0 - coeffs.clip, 1.0 + coeffs.clip);
        let surr2 = g.scale(clipped, advantages[i]);
        // the pessimistic branch; the graph is eager, so pick by value
        let chosen = if g.scalar_value(surr1) <= g.scalar_value(surr2) {
            surr1
        } else {
            surr2
        };
        policy_terms.push(chosen);
    }
    if ratio_max > coeffs.ratio_guard {
        return Err(AgentError::StaleBatch {
            max_ratio: ratio_max,
            bound: coeffs.ratio_guard,
        });
    }
    let policy_sum = g.add_many(&policy_terms);
    let policy = g.scale(policy_sum, -1.0 / t_len as f64);

    // value regression against the stored GAE targets
    let mut value_terms = Vec::with_capacity(t_len);
    for i in 0..t_len {
        let target = g.scalar(batch.value_targets[i]);
        let d = g.sub(value_nodes[i], target);
        value_terms.push(g.mul(d, d));
    }
    let value_sum = g.add_many(&value_terms);
    let value = g.scale(value_sum, 1.0 / t_len as f64);

    let ent_sum = g.add_many(&entropy_nodes);
    let entropy = g.scale(ent_sum, 1.0 / t_len as f64);

    // trajectory ELBO, averaged over a strided set of posterior anchors
    let mut anchors: Vec<usize> = (0..=t_len)
        .step_by(coeffs.elbo_anchor_stride.max(1))
        .collect();
    if *anchors.last().unwrap() != t_len {
        anchors.push(t_len);
    }
    let decode_anchors: Vec<usize> = (0..t_len)
        .step_by(coeffs.decode_anchor_stride.max(1))
        .collect();
    let mut recon_terms = Vec::with_capacity(anchors.len());
    let mut kl_terms = Vec::with_capacity(anchors.len());
    for &t in &anchors {
        let noise = if t == 0 {
            &batch.noise0
        } else {
            &batch.steps[t - 1].noise
        };
        let m = sample(g, posts[t], noise);
        let recon = if coeffs.one_step_no_action {
            model.world.reconstruction_loss_no_action(
                g,
                ps,
                &e_nodes,
                &batch.obs,
                &actions,
                &rewards_ext,
                m,
                Some(&decode_anchors),
            )?
        } else {
            model.world.reconstruction_loss(
                g,
                ps,
                &e_nodes,
                &batch.obs,
                &actions,
                &rewards_ext,
                m,
                Some(&decode_anchors),
            )?
        };
        recon_terms.push(recon);
        kl_terms.push(kl_to_prior(g, posts[t]));
    }
    let inv = 1.0 / anchors.len() as f64;
    let recon_sum = g.add_many(&recon_terms);
    let recon_mean = g.scale(recon_sum, inv);
    let kl_sum = g.add_many(&kl_terms);
    let kl_mean = g.scale(kl_sum, inv);
    let elbo = g.add(recon_mean, kl_mean);

    // n-step value prediction against k-step TD targets (detached)
    let plan = if build_tf {
        let rewards_plan: Vec<f64> = if coeffs.plan_use_intrinsic {
            batch
                .steps
                .iter()
                .map(|s| s.reward_ext + s.reward_int)
                .collect()
        } else {
            rewards_ext.clone()
        };
        model.planner.planner_loss(
            g,
            ps,
            &e_nodes,
            &h2_tf_seq,
            &actions,
            &rewards_plan,
            &critic_values,
        )?
    } else {
        g.scalar(0.0)
    };

    let value_w = g.scale(value, coeffs.c_value);
    let ent_w = g.scale(entropy, -coeffs.c_ent);
    let elbo_w = g.scale(elbo, coeffs.c_elbo);
    let plan_w = g.scale(plan, coeffs.c_plan);
    let total = g.add_many(&[policy, value_w, ent_w, elbo_w, plan_w]);

    let nodes = TaskLossNodes {
        total,
        policy,
        value,
        entropy,
        elbo,
        plan,
    };
    let stats = LossStats {
        total: g.scalar_value(total),
        policy: g.scalar_value(policy),
        value: g.scalar_value(value),
        entropy: g.scalar_value(entropy),
        recon: g.scalar_value(recon_mean),
        kl: g.scalar_value(kl_mean),
        plan: g.scalar_value(plan),
        ratio_max,
        recomputed_log_probs: recomputed,
    };
    Ok((nodes, stats))
}

/// Population mean/std normalization used on advantages across a minibatch.
pub(crate) fn normalize(values: &mut [f64]) {
    if values.is_empty() {
        return;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    for v in values.iter_mut() {
        *v = (*v - mean) / (std + 1e-8);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::model::tiny_dims;
    use crate::agent::rollout::meta_rollout;
    use crate::env::{generate_task, EnvSpec, NUM_ACTIONS};
    use crate::nn::check;
    use crate::nn::params::GradStore;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Full four-episode rollout under freshly initialized parameters.
    fn setup(seed: u64) -> (ParamSet, AgentModel, RolloutBatch, RolloutOptions) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let model = AgentModel::new(&mut ps, tiny_dims(), &mut rng);
        let spec = EnvSpec::MultiRoom {
            rooms: 2,
            max_room_size: 4,
        };
        let task = generate_task(spec, 31).unwrap();
        let opts = RolloutOptions {
            capacity: 64,
            ..RolloutOptions::default()
        };
        let batch = meta_rollout(&model, &ps, task, seed ^ 0xabcd, &opts, 0.95).unwrap();
        (ps, model, batch, opts)
    }

    /// Keep only the first `keep` steps so finite-difference sweeps stay
    /// fast. The prefix replays identically to the full batch because the
    /// computation is causal.
    fn prefix(batch: &mut RolloutBatch, keep: usize) {
        if batch.steps.len() > keep {
            batch.steps.truncate(keep);
            batch.obs.truncate(keep + 1);
        }
        super::super::rollout::fill_gae(batch, 0.95, 0.95);
    }

    fn quick_coeffs() -> LossCoeffs {
        LossCoeffs {
            elbo_anchor_stride: 3,
            decode_anchor_stride: 2,
            ..LossCoeffs::default()
        }
    }

    /// The decisive rollout/replay consistency check: the full batch — all
    /// four episodes, consolidations included — replayed under the same
    /// parameters reproduces every stored log-prob.
    #[test]
    fn epoch_zero_log_probs_match_stored() {
        let (ps, model, batch, opts) = setup(41);
        let mut g = Graph::new();
        let adv = vec![0.1; batch.steps.len()];
        let (_, stats) =
            task_loss(&model, &ps, &mut g, &batch, &adv, &quick_coeffs(), &opts).unwrap();
        let mut max_gap: f64 = 0.0;
        for (re, s) in stats.recomputed_log_probs.iter().zip(&batch.steps) {
            max_gap = max_gap.max((re - s.log_prob).abs());
        }
        assert!(
            max_gap < 1e-5,
            "replayed log-probs drifted from rollout: {max_gap:.3e}"
        );
        assert!(stats.ratio_max < 1.0 + 1e-9, "ratios must be 1 at epoch 0");
    }

    #[test]
    fn coefficient_zeroing_reduces_to_clipped_policy_gradient() {
        let (ps, model, mut batch, opts) = setup(43);
        prefix(&mut batch, 10);
        let coeffs = LossCoeffs {
            c_value: 0.0,
            c_ent: 0.0,
            c_elbo: 0.0,
            c_plan: 0.0,
            ..quick_coeffs()
        };
        let mut g = Graph::new();
        let adv: Vec<f64> = (0..batch.steps.len()).map(|i| 0.3 * i as f64 - 1.0).collect();
        let (nodes, stats) = task_loss(&model, &ps, &mut g, &batch, &adv, &coeffs, &opts).unwrap();
        assert!((stats.total - stats.policy).abs() < 1e-12);
        // at epoch 0 every ratio is exactly 1, so the objective is -mean(adv)
        let want = -adv.iter().sum::<f64>() / adv.len() as f64;
        assert!((g.scalar_value(nodes.total) - want).abs() < 1e-9);
    }

    #[test]
    fn zero_advantages_zero_policy_term() {
        let (ps, model, mut batch, opts) = setup(47);
        prefix(&mut batch, 10);
        let mut g = Graph::new();
        let adv = vec![0.0; batch.steps.len()];
        let (_, stats) =
            task_loss(&model, &ps, &mut g, &batch, &adv, &quick_coeffs(), &opts).unwrap();
        assert_eq!(stats.policy, 0.0);
    }

    #[test]
    fn entropy_is_uniform_at_init() {
        let (ps, model, mut batch, opts) = setup(53);
        prefix(&mut batch, 8);
        let mut g = Graph::new();
        let adv = vec![0.0; batch.steps.len()];
        let (_, stats) =
            task_loss(&model, &ps, &mut g, &batch, &adv, &quick_coeffs(), &opts).unwrap();
        assert!((stats.entropy - (NUM_ACTIONS as f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn stale_batch_is_rejected() {
        let (ps, model, mut batch, opts) = setup(59);
        prefix(&mut batch, 8);
        // corrupt a stored log-prob so the recomputed ratio explodes
        batch.steps[0].log_prob -= 4.0;
        let mut g = Graph::new();
        let adv = vec![0.1; batch.steps.len()];
        let err = task_loss(&model, &ps, &mut g, &batch, &adv, &quick_coeffs(), &opts)
            .err()
            .expect("a ratio of e^4 must trip the guard");
        assert!(matches!(err, AgentError::StaleBatch { .. }));
    }

    #[test]
    fn planner_targets_stay_detached_from_critic() {
        let (ps, model, mut batch, opts) = setup(61);
        prefix(&mut batch, 12);
        let mut g = Graph::new();
        let adv = vec![0.1; batch.steps.len()];
        let (nodes, _) =
            task_loss(&model, &ps, &mut g, &batch, &adv, &quick_coeffs(), &opts).unwrap();
        let mut grads = GradStore::zeros_like(&ps);
        g.backward(nodes.plan, &mut grads);
        for name in model.critic_param_names() {
            let id = ps.find(&name).unwrap();
            assert_eq!(
                grads.abs_sum(id),
                0.0,
                "planner loss leaked gradient into {name}"
            );
        }
        // but it does reach the level-2 parameters
        let l2 = ps.find("plan.level2.z.w").unwrap();
        assert!(grads.abs_sum(l2) > 0.0, "no gradient into level 2");
    }

    #[test]
    fn ablation_variants_stay_finite() {
        let (ps, model, mut batch, opts) = setup(67);
        prefix(&mut batch, 10);
        let adv = vec![0.05; batch.steps.len()];
        // w/o Mem
        let mut g = Graph::new();
        let mem_off = RolloutOptions {
            disable_memory: true,
            ..opts.clone()
        };
        let (_, s1) = task_loss(&model, &ps, &mut g, &batch, &adv, &quick_coeffs(), &mem_off).unwrap();
        assert!(s1.total.is_finite());
        // w/o Value pred
        let mut g = Graph::new();
        let no_plan = LossCoeffs {
            c_plan: 0.0,
            ..quick_coeffs()
        };
        let (_, s2) = task_loss(&model, &ps, &mut g, &batch, &adv, &no_plan, &opts).unwrap();
        assert_eq!(s2.plan, 0.0);
        // w/o N step (one-step decoder without the action head)
        let mut g = Graph::new();
        let one_step = LossCoeffs {
            one_step_no_action: true,
            ..quick_coeffs()
        };
        let (_, s3) = task_loss(&model, &ps, &mut g, &batch, &adv, &one_step, &opts).unwrap();
        assert!(s3.recon.is_finite());
        assert!(s3.recon != s1.recon || s3.recon != s2.recon);
    }

    #[test]
    fn total_loss_matches_finite_differences() {
        let (mut ps, model, mut batch, opts) = setup(71);
        prefix(&mut batch, 10);
        // route gradient through a consolidation boundary as well
        let mid = batch.steps.len() / 2;
        batch.steps[mid].episode_done = true;
        let coeffs = quick_coeffs();
        let adv: Vec<f64> = (0..batch.steps.len())
            .map(|i| ((i * 37 % 11) as f64 - 5.0) / 7.0)
            .collect();
        let f = |ps: &ParamSet| {
            let mut g = Graph::new();
            let (nodes, _) = task_loss(&model, ps, &mut g, &batch, &adv, &coeffs, &opts).unwrap();
            g.scalar_value(nodes.total)
        };
        let mut g = Graph::new();
        let (nodes, _) = task_loss(&model, &ps, &mut g, &batch, &adv, &coeffs, &opts).unwrap();
        let mut grads = GradStore::zeros_like(&ps);
        g.backward(nodes.total, &mut grads);
        let (checked, worst) =
            check::max_rel_error_sampled(&mut ps, &grads, f, 1e-5, 149);
        assert!(checked >= 20, "need at least 20 sampled parameters, got {checked}");
        assert!(
            worst < 1e-3,
            "total-loss gradient mismatch: worst rel err {worst:.3e} over {checked} params"
        );
    }

    #[test]
    fn normalize_centers_and_scales() {
        let mut v = vec![1.0, 2.0, 3.0, 4.0];
        normalize(&mut v);
        let mean: f64 = v.iter().sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        let var: f64 = v.iter().map(|x| x * x).sum::<f64>() / 4.0;
        assert!((var - 1.0).abs() < 1e-6);
    }
}
