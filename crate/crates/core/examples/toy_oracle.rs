//! Solves the four-state toy MDP exactly, then trains DQN and A2C agents on
//! it and compares their greedy policies with the optimum.
//!
//! ```text
//! cargo run --release --example toy_oracle -- [updates] [seeds]
//! ```

use slicenet::neural::Learner;
use slicenet::toy::{train, ToyMdp, ToyTraining, TOY_SPLITS};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let updates: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(20_000);
    let seeds: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(3);

    let mdp = ToyMdp::default();
    let q = mdp.value_iteration(1e-12);
    let optimal = mdp.optimal_policy();
    println!("Bellman residual of value iteration: {:.2e}", mdp.bellman_residual(&q));
    for (s, row) in q.iter().enumerate() {
        println!("state {s}: Q* = {row:.3?}  best split {:?}", TOY_SPLITS[optimal[s]]);
    }
    for learner in [Learner::Dqn, Learner::A2c] {
        for seed in 1..=seeds {
            let out = train(&mdp, ToyTraining::new(learner, updates, seed))?;
            let verdict = if out.policy == optimal { "optimal" } else { "suboptimal" };
            println!("{learner:?} seed {seed}: policy {:?} after {} updates ({verdict})", out.policy, out.updates);
        }
    }
    Ok(())
}
