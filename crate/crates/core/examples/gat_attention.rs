//! How the graph attention stack sees the network: attention weights and
//! the effect of temperature, then which BSs can change one agent's state.

use slicenet::config::RunConfig;
use slicenet::env::Env;
use slicenet::neural::{Brain, Learner, LocalGraph};
use slicenet::rng::{stream, Domain};
use slicenet::tensor::{AttentionMask, Tape, Tensor};
use std::sync::Arc;

fn main() -> anyhow::Result<()> {
    // One query attending over four sources at several temperatures.
    let mut rng = stream(2, Domain::Toy, 0);
    let q = Tensor::uniform(1, 4, -1.0, 1.0, &mut rng);
    let k = Tensor::uniform(4, 4, -1.0, 1.0, &mut rng);
    let v = Tensor::identity(4);
    let mask = Arc::new(AttentionMask { sources: vec![vec![0, 1, 2, 3]] });
    for tau in [0.0, 1.0, 5.0, 50.0] {
        let mut t = Tape::new();
        let (qv, kv, vv) = (t.constant(q.clone()), t.constant(k.clone()), t.constant(v.clone()));
        let a = t.masked_attention(qv, kv, vv, 1, tau, mask.clone());
        println!("τ = {tau:>4}: weights {:.3?}", t.attention_weights(a).expect("attention node"));
    }

    // Perturb each BS's demand and see whose state moves for agent 0.
    let mut cfg = RunConfig::default();
    cfg.scenario.subscribers = [10, 10, 10];
    let env = Env::new(cfg.env.clone(), cfg.scenario.clone(), cfg.traffic.clone(), cfg.radio.clone(), 1)?;
    let graph = &env.scenario().graph;
    let agent = 7;
    let bc = cfg.agent.brain_config(Learner::Dqn, true, 3, env.codec().count(), cfg.env.gamma);
    let brain = Brain::new(bc, LocalGraph::new(graph, agent), &mut stream(1, Domain::AgentInit, agent as u64));
    let base: Vec<[f64; 3]> = vec![[0.5, 0.5, 0.5]; env.num_bs()];
    let s0 = brain.state_vector(&brain.local_obs(&base, &base));
    println!("\nagent {agent} (19-BS layout): neighbours {:?}", graph.neighbors(agent));
    let mut seen = Vec::new();
    for j in 0..env.num_bs() {
        let mut d = base.clone();
        d[j] = [2.0, 0.1, 1.5];
        let s = brain.state_vector(&brain.local_obs(&d, &d));
        let change: f64 = s.iter().zip(&s0).map(|(a, b)| (a - b).abs()).sum();
        if change > 0.0 {
            seen.push(j);
        }
    }
    println!("BSs whose demand changes its state: {seen:?}");
    println!("two-hop set of the graph:            {:?}", graph.two_hop(agent));
    Ok(())
}
