//! A four-state, three-action slicing MDP small enough to solve exactly,
//! used to check that the learners find the optimal policy.
//!
//! States encode low/high demand of two slices: 0 = (low, low),
//! 1 = (low, high), 2 = (high, low), 3 = (high, high). Actions split four
//! bandwidth units as (1, 3), (2, 2) or (3, 1). Transitions are
//! deterministic, every state is reachable from every other, and in state
//! 0 the action with the best immediate reward is not optimal.

use crate::error::Result;
use crate::neural::{greedy_action, Brain, BrainConfig, Learner, LocalGraph, LocalObs, NetDims, Transition};
use crate::rng::{stream, Domain};
use crate::trainer::{Agent, EpsilonSchedule};

pub const TOY_STATES: usize = 4;
pub const TOY_ACTIONS: usize = 3;

/// Unit split of each toy action between the two slices.
pub const TOY_SPLITS: [[usize; 2]; TOY_ACTIONS] = [[1, 3], [2, 2], [3, 1]];

#[derive(Debug, Clone, PartialEq)]
pub struct ToyMdp {
    pub rewards: [[f64; TOY_ACTIONS]; TOY_STATES],
    pub next: [[usize; TOY_ACTIONS]; TOY_STATES],
    pub gamma: f64,
}

pub type QTable = [[f64; TOY_ACTIONS]; TOY_STATES];

impl Default for ToyMdp {
    fn default() -> Self {
        ToyMdp {
            rewards: [[0.2, 0.3, 0.0], [0.3, 0.9, 1.0], [0.2, 0.8, 0.3], [0.5, 0.5, 0.6]],
            next: [[1, 0, 0], [3, 3, 1], [0, 3, 3], [2, 0, 1]],
            gamma: 0.9,
        }
    }
}

impl ToyMdp {
    /// Demand seen in state `s`, with both halves of the observation equal.
    pub fn observation(&self, s: usize) -> LocalObs {
        let level = |high: bool| if high { 1.0 } else { 0.25 };
        let d = vec![level(s & 2 != 0), level(s & 1 != 0)];
        LocalObs { prev: vec![d.clone()], cur: d }
    }

    fn backup(&self, v: &[f64; TOY_STATES]) -> QTable {
        std::array::from_fn(|s| std::array::from_fn(|a| self.rewards[s][a] + self.gamma * v[self.next[s][a]]))
    }

    /// Largest `|Q(s,a) − (r + γ max Q(s',·))|`.
    pub fn bellman_residual(&self, q: &QTable) -> f64 {
        let v: [f64; TOY_STATES] = std::array::from_fn(|s| q[s].iter().copied().fold(f64::NEG_INFINITY, f64::max));
        let b = self.backup(&v);
        (0..TOY_STATES).flat_map(|s| (0..TOY_ACTIONS).map(move |a| (s, a))).map(|(s, a)| (q[s][a] - b[s][a]).abs()).fold(0.0, f64::max)
    }

    /// Optimal Q by value iteration to a sup-norm change below `tol`.
    pub fn value_iteration(&self, tol: f64) -> QTable {
        let mut v = [0.0; TOY_STATES];
        loop {
            let q = self.backup(&v);
            let nv: [f64; TOY_STATES] = std::array::from_fn(|s| q[s].iter().copied().fold(f64::NEG_INFINITY, f64::max));
            let delta = nv.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            v = nv;
            if delta < tol {
                return self.backup(&v);
            }
        }
    }

    /// Q of the uniformly random policy.
    pub fn uniform_policy_q(&self, tol: f64) -> QTable {
        let mut v = [0.0; TOY_STATES];
        loop {
            let q = self.backup(&v);
            let nv: [f64; TOY_STATES] = std::array::from_fn(|s| q[s].iter().sum::<f64>() / TOY_ACTIONS as f64);
            let delta = nv.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            v = nv;
            if delta < tol {
                return self.backup(&v);
            }
        }
    }

    pub fn optimal_policy(&self) -> [usize; TOY_STATES] {
        let q = self.value_iteration(1e-12);
        std::array::from_fn(|s| greedy_action(&q[s]))
    }
}

/// Settings of one toy training run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyTraining {
    pub learner: Learner,
    pub updates: usize,
    pub seed: u64,
    pub batch_size: usize,
    pub target_sync: usize,
}

impl ToyTraining {
    pub fn new(learner: Learner, updates: usize, seed: u64) -> Self {
        ToyTraining { learner, updates, seed, batch_size: 32, target_sync: 100 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyOutcome {
    pub policy: [usize; TOY_STATES],
    pub updates: u64,
}

pub fn brain_config(learner: Learner) -> BrainConfig {
    BrainConfig {
        dims: NetDims::new(2, TOY_ACTIONS),
        learner,
        gat: false,
        dueling: true,
        double: true,
        gamma: ToyMdp::default().gamma,
        tau: 1.0,
        lr: 1e-3,
        actor_lr: 3e-4,
        entropy_weight: 0.01,
        importance_clip: 1.0,
    }
}

/// Trains one agent on the toy MDP with the same warm-up, ε ramp, replay
/// and update rules as the full trainer, and reports its greedy policy.
pub fn train(mdp: &ToyMdp, run: ToyTraining) -> Result<ToyOutcome> {
    let brain = Brain::new(brain_config(run.learner), LocalGraph::isolated(0), &mut stream(run.seed, Domain::AgentInit, 0));
    let mut agent = Agent::new(brain, 10_000, run.seed, 0);
    let warmup = (run.updates / 20).max(run.batch_size);
    let periods = warmup + run.updates;
    let mut schedule = EpsilonSchedule::new(periods, 0.0, 0.5, 0.5);
    schedule.warmup = warmup;
    let mut s = 0;
    for t in 0..periods {
        let obs = mdp.observation(s);
        let (a, behaviour_prob) = agent.act(&obs, schedule.value(t));
        let s2 = mdp.next[s][a];
        agent.replay.push(Transition { obs, action: a, reward: mdp.rewards[s][a], next_obs: mdp.observation(s2), behaviour_prob });
        if !schedule.is_warmup(t) {
            agent.learn(run.batch_size);
            if (t + 1 - warmup).is_multiple_of(run.target_sync) {
                agent.brain.sync_target();
            }
        }
        s = s2;
    }
    let policy = std::array::from_fn(|s| agent.brain.greedy(&mdp.observation(s)));
    Ok(ToyOutcome { policy, updates: agent.brain.updates() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_iteration_fixed_point() {
        let mdp = ToyMdp::default();
        let q = mdp.value_iteration(1e-13);
        assert!(mdp.bellman_residual(&q) < 1e-10);
        assert_eq!(mdp.optimal_policy(), [0, 2, 1, 2]);
    }

    #[test]
    fn tables_have_the_intended_structure() {
        let mdp = ToyMdp::default();
        let q = mdp.value_iteration(1e-13);
        let u = mdp.uniform_policy_q(1e-13);
        for s in 0..TOY_STATES {
            let best = greedy_action(&q[s]);
            assert_eq!(greedy_action(&u[s]), best);
            for a in 0..TOY_ACTIONS {
                if a != best {
                    assert!(q[s][best] - q[s][a] > 0.4);
                    assert!(u[s][best] - u[s][a] > 0.4);
                }
            }
        }
        assert_ne!(greedy_action(&mdp.rewards[0]), mdp.optimal_policy()[0]);
        // Reachability from every state.
        for start in 0..TOY_STATES {
            let mut seen = [false; TOY_STATES];
            let mut stack = vec![start];
            while let Some(x) = stack.pop() {
                if !std::mem::replace(&mut seen[x], true) {
                    stack.extend(mdp.next[x]);
                }
            }
            assert!(seen.iter().all(|v| *v));
        }
    }

    #[test]
    fn observations_distinguish_states() {
        let mdp = ToyMdp::default();
        let obs: Vec<LocalObs> = (0..TOY_STATES).map(|s| mdp.observation(s)).collect();
        for i in 0..TOY_STATES {
            for j in i + 1..TOY_STATES {
                assert_ne!(obs[i], obs[j]);
            }
        }
    }
}
