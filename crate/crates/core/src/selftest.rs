//! Quick self-checks run by `slicenet selftest`: gradient checks, action
//! codec round trips, attention normalisation and the toy MDP oracle.

use crate::env::ActionCodec;
use crate::neural::{Brain, BrainConfig, Learner, LocalGraph, NetDims, Transition};
use crate::rng::{stream, Domain};
use crate::scenario::NeighborGraph;
use crate::tensor::gradcheck::max_rel_error;
use crate::tensor::{AttentionMask, Tape, Tensor, Var};
use crate::toy::{self, ToyMdp, ToyTraining};
use rand::Rng;
use std::sync::Arc;

/// Outcome of one named check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Check { name: name.to_string(), passed, detail }
    }
}

fn rand_t(r: usize, c: usize, seed: u64) -> Tensor {
    Tensor::uniform(r, c, -1.0, 1.0, &mut stream(seed, Domain::Toy, 0))
}

type Loss = Box<dyn Fn(&mut Tape, &[Var]) -> Var>;

/// Finite-difference check of every differentiable primitive.
pub fn primitive_gradients() -> Check {
    let a = rand_t(4, 5, 11);
    let b = rand_t(4, 5, 12);
    let w = rand_t(5, 3, 13);
    let row = rand_t(1, 5, 14);
    let col = rand_t(4, 1, 15);
    let mask = Arc::new(AttentionMask { sources: (0..4).map(|i| vec![i, (i + 1) % 4]).collect() });
    let cases: Vec<(&str, Vec<Tensor>, Loss)> = vec![
        ("matmul", vec![a.clone(), w], Box::new(|t, v| { let x = t.matmul(v[0], v[1]); let s = t.square(x); t.mean(s) })),
        ("add", vec![a.clone(), b.clone()], Box::new(|t, v| { let x = t.add(v[0], v[1]); let s = t.square(x); t.mean(s) })),
        ("sub", vec![a.clone(), b.clone()], Box::new(|t, v| { let x = t.sub(v[0], v[1]); let s = t.square(x); t.mean(s) })),
        ("mul", vec![a.clone(), b.clone()], Box::new(|t, v| { let x = t.mul(v[0], v[1]); t.mean(x) })),
        ("add_row", vec![a.clone(), row], Box::new(|t, v| { let x = t.add_row(v[0], v[1]); let s = t.square(x); t.mean(s) })),
        ("add_col", vec![a.clone(), col.clone()], Box::new(|t, v| { let x = t.add_col(v[0], v[1]); let s = t.square(x); t.mean(s) })),
        ("relu", vec![a.clone(), b.clone()], Box::new(|t, v| { let x = t.relu(v[0]); let y = t.mul(x, v[1]); t.mean(y) })),
        ("softmax", vec![a.clone(), b.clone()], Box::new(|t, v| { let x = t.softmax(v[0], 1.7); let y = t.mul(x, v[1]); t.mean(y) })),
        ("log_softmax", vec![a.clone(), b.clone()], Box::new(|t, v| { let x = t.log_softmax(v[0], 0.6); let y = t.mul(x, v[1]); t.mean(y) })),
        ("log", vec![a.map(|x| x.abs() + 0.5)], Box::new(|t, v| { let x = t.log(v[0]); t.mean(x) })),
        ("entropy", vec![a.clone()], Box::new(|t, v| { let p = t.softmax(v[0], 1.0); let h = t.entropy(p); t.mean(h) })),
        ("concat", vec![a.clone(), col, b.clone()], Box::new(|t, v| { let x = t.concat(&[v[0], v[1], v[2]]); let s = t.square(x); let r = t.row_sum(s); t.mean(r) })),
        ("gather_rows", vec![a.clone()], Box::new(|t, v| { let x = t.gather_rows(v[0], &[3, 0, 3, 2]); let s = t.square(x); t.mean(s) })),
        ("pick", vec![a.clone()], Box::new(|t, v| { let x = t.pick(v[0], &[4, 0, 2, 2]); let s = t.square(x); t.mean(s) })),
        ("row_mean", vec![a.clone()], Box::new(|t, v| { let x = t.row_mean(v[0]); let s = t.square(x); t.mean(s) })),
        (
            "masked_attention",
            vec![rand_t(4, 4, 16), rand_t(4, 4, 17), rand_t(4, 6, 18), rand_t(4, 6, 19)],
            Box::new(move |t, v| { let x = t.masked_attention(v[0], v[1], v[2], 2, 1.3, mask.clone()); let y = t.mul(x, v[3]); t.mean(y) }),
        ),
    ];
    let mut worst = (0.0, "");
    for (name, inputs, f) in &cases {
        let err = max_rel_error(inputs, 1e-6, 1e-6, f);
        if err > worst.0 {
            worst = (err, name);
        }
    }
    Check::new("primitive gradients", worst.0 < 1e-4, format!("{} primitives, worst {} rel err {:.2e}", cases.len(), worst.1, worst.0))
}

/// Finite-difference check of both losses through the two-layer GAT on a
/// three-BS path graph.
pub fn end_to_end_gradients() -> Check {
    let graph = NeighborGraph::from_adjacency(vec![vec![1], vec![0, 2], vec![1]]);
    let mut worst: f64 = 0.0;
    for learner in [Learner::Dqn, Learner::A2c] {
        let cfg = BrainConfig {
            dims: NetDims { inputs: 3, embed: 4, key: 3, value: 2, heads: 2, hidden: 5, actions: 4 },
            learner,
            gat: true,
            dueling: true,
            double: true,
            gamma: 0.9,
            tau: 1.0,
            lr: 1e-3,
            actor_lr: 3e-4,
            entropy_weight: 0.01,
            importance_clip: 1.0,
        };
        let brain = Brain::new(cfg, LocalGraph::new(&graph, 0), &mut stream(7, Domain::AgentInit, 0));
        let params: Vec<Tensor> = brain.params.iter().map(|t| t.map(|v| if v.abs() < 1e-3 { 0.05 } else { v })).collect();
        let mut rng = stream(8, Domain::Toy, 0);
        let mut obs = || {
            let prev: Vec<[f64; 3]> = (0..3).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
            let cur: Vec<[f64; 3]> = (0..3).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
            brain.local_obs(&prev, &cur)
        };
        let trs: Vec<Transition> = (0..3).map(|i| Transition { obs: obs(), action: i, reward: 0.3, next_obs: obs(), behaviour_prob: 0.5 }).collect();
        let refs: Vec<&Transition> = trs.iter().collect();
        let err = max_rel_error(&params, 1e-6, 1e-3, |tape, p| match learner {
            Learner::Dqn => brain.dqn_loss(tape, p, &refs, &[0.5, 1.0, 0.2]),
            Learner::A2c => brain.a2c_loss_with(tape, p, &refs, &[0.1, 0.4, 0.3], Some(&[0.7, -0.2, 0.4])).0,
        });
        worst = worst.max(err);
    }
    Check::new("end-to-end gradients (3-BS path)", worst < 1e-3, format!("worst rel err {worst:.2e}"))
}

/// Every attention row over a random graph sums to one.
pub fn attention_rows() -> Check {
    let n = 9;
    let mut rng = stream(9, Domain::Toy, 1);
    let sources: Vec<Vec<usize>> = (0..n).map(|i| (0..n).filter(|&j| j == i || rng.gen_bool(0.4)).collect()).collect();
    let mut t = Tape::new();
    let (q, k, v) = (t.constant(rand_t(n, 8, 1)), t.constant(rand_t(n, 8, 2)), t.constant(rand_t(n, 4, 3)));
    let a = t.masked_attention(q, k, v, 2, 1.0, Arc::new(AttentionMask { sources: sources.clone() }));
    let weights = t.attention_weights(a).expect("attention node");
    let mut offset = 0;
    let mut worst: f64 = 0.0;
    for src in &sources {
        for _head in 0..2 {
            let s: f64 = weights[offset..offset + src.len()].iter().sum();
            worst = worst.max((s - 1.0).abs());
            offset += src.len();
        }
    }
    Check::new("attention rows sum to 1", worst < 1e-9 && offset == weights.len(), format!("max |row sum - 1| = {worst:.1e}"))
}

/// Decode/encode round trip of the coarse and fine action spaces.
pub fn codec_round_trips() -> Check {
    let mut details = Vec::new();
    let mut ok = true;
    for units in [18, 55] {
        let codec = match ActionCodec::new(units, 3) {
            Ok(c) => c,
            Err(e) => return Check::new("action codec round trips", false, e.to_string()),
        };
        let round = (0..codec.count()).all(|i| codec.decode(i).and_then(|u| codec.encode(&u)).map(|j| j == i).unwrap_or(false));
        ok &= round;
        details.push(format!("{units} units: {} actions", codec.count()));
    }
    Check::new("action codec round trips", ok, details.join(", "))
}

/// Trains one agent of `learner` on the toy MDP and compares its greedy
/// policy with value iteration.
pub fn toy_oracle(learner: Learner, updates: usize, seed: u64) -> Check {
    let mdp = ToyMdp::default();
    let optimal = mdp.optimal_policy();
    let name = format!("toy oracle ({learner:?})");
    match toy::train(&mdp, ToyTraining::new(learner, updates, seed)) {
        Ok(out) => Check::new(&name, out.policy == optimal, format!("learned {:?}, optimal {optimal:?}", out.policy)),
        Err(e) => Check::new(&name, false, e.to_string()),
    }
}

/// All checks, with the toy oracle run for `toy_updates` updates.
pub fn run_all(toy_updates: usize) -> Vec<Check> {
    vec![
        primitive_gradients(),
        end_to_end_gradients(),
        attention_rows(),
        codec_round_trips(),
        toy_oracle(Learner::Dqn, toy_updates, 1),
        toy_oracle(Learner::A2c, toy_updates, 1),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_checks_pass() {
        for c in [primitive_gradients(), end_to_end_gradients(), attention_rows(), codec_round_trips()] {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
