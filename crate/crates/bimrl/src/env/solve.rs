//! Breadth-first search over full environment state. Only tractable for
//! desk-scale layouts; used by tests and debugging tools to find shortest
//! successful action sequences and to validate reward bookkeeping.

use std::collections::{HashSet, VecDeque};

use super::{Action, GridEnv, TaskSpec};

/// Shortest action sequence that earns the success reward, or `None` if no
/// solution exists within `max_depth` steps.
pub fn solve(task: &TaskSpec, max_depth: usize) -> Option<Vec<Action>> {
    let mut start = GridEnv::new(task.clone());
    start.reset(0).ok()?;
    let mut seen = HashSet::new();
    seen.insert(start.state_key());
    let mut queue = VecDeque::new();
    queue.push_back((start, Vec::new()));

    // Done is a no-op and never helps a search
    let moves = [
        Action::TurnLeft,
        Action::TurnRight,
        Action::Forward,
        Action::Pickup,
        Action::Drop,
        Action::Toggle,
    ];

    while let Some((env, path)) = queue.pop_front() {
        if path.len() >= max_depth {
            continue;
        }
        for action in moves {
            let mut next = env.clone();
            let tr = match next.step(action) {
                Ok(tr) => tr,
                Err(_) => continue,
            };
            let mut next_path = path.clone();
            next_path.push(action);
            if tr.reward > 0.0 {
                return Some(next_path);
            }
            if tr.episode_done {
                continue;
            }
            if seen.insert(next.state_key()) {
                queue.push_back((next, next_path));
            }
        }
    }
    None
}
