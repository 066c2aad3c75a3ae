//! Intrinsic reward from model surprise scaled by episodic novelty.
//!
//! The surprise term is a convex combination of the one-step decoder errors
//! (state reconstruction, reward prediction, action prediction), each floored
//! at zero. Novelty is the Euclidean distance from the current event key to
//! its k-th nearest stored key — repeated situations have stored keys nearby
//! and earn little bonus. The final shaping is
//! `r_int = β · α · surprise`, added to the environment reward during
//! rollouts only; none of this participates in gradients.

use ndarray::Array1;

/// Mixing weights over the three surprise components. Always kept on the
/// probability simplex (see [`project_to_simplex`]).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CuriosityWeights {
    pub state: f64,
    pub reward: f64,
    pub action: f64,
}

impl Default for CuriosityWeights {
    fn default() -> Self {
        Self {
            state: 1.0 / 3.0,
            reward: 1.0 / 3.0,
            action: 1.0 / 3.0,
        }
    }
}

impl CuriosityWeights {
    pub fn as_array(&self) -> [f64; 3] {
        [self.state, self.reward, self.action]
    }
}

/// Euclidean projection onto the probability simplex; used to sanitize
/// user-supplied mixing weights at configuration load.
pub fn project_to_simplex(w: [f64; 3]) -> [f64; 3] {
    let mut sorted = w;
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let candidate = (cumsum - 1.0) / (i + 1) as f64;
        if u - candidate > 0.0 {
            tau = candidate;
        }
    }
    let mut out = w;
    for x in &mut out {
        *x = (*x - tau).max(0.0);
    }
    out
}

/// Floored convex combination of the floored per-component errors.
pub fn curiosity_term(
    state_err: f64,
    reward_err: f64,
    action_err: f64,
    weights: &CuriosityWeights,
) -> f64 {
    let combo = weights.state * state_err.max(0.0)
        + weights.reward * reward_err.max(0.0)
        + weights.action * action_err.max(0.0);
    combo.max(0.0)
}

/// Distance from `query` to its k-th nearest key among `keys` (1-based k,
/// self-distances count). Falls back to `alpha_default` when fewer than `k`
/// keys are stored.
pub fn newness<'a, I>(keys: I, query: &Array1<f64>, k: usize, alpha_default: f64) -> f64
where
    I: IntoIterator<Item = &'a Array1<f64>>,
{
    assert!(k >= 1, "k must be at least 1");
    let mut dists: Vec<f64> = keys
        .into_iter()
        .map(|key| {
            debug_assert_eq!(key.len(), query.len());
            key.iter()
                .zip(query.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    if dists.len() < k {
        return alpha_default;
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    dists[k - 1]
}

/// The shaped intrinsic reward added on top of the environment reward.
pub fn intrinsic_reward(beta: f64, alpha: f64, term: f64) -> f64 {
    beta * alpha * term
}
