//! Randomised invariants across the simulator and the learners.

use proptest::prelude::*;
use slicenet::config::RunConfig;
use slicenet::env::{hard_units, reward, utility, ActionCodec, Env, UtilityWeights};
use slicenet::neural::{Brain, BrainConfig, Learner, LocalGraph, NetDims};
use slicenet::radio::{slice_ssr, Sla};
use slicenet::rng::{stream, Domain};
use slicenet::scenario::NeighborGraph;
use slicenet::tensor::{softmax_in_place, Tape, Tensor};

fn small_env(seed: u64) -> Env {
    let mut cfg = RunConfig::desk();
    cfg.scenario.subscribers = [8, 12, 10];
    Env::new(cfg.env, cfg.scenario, cfg.traffic, cfg.radio, seed).unwrap()
}

fn gat_brain(graph: &NeighborGraph, m: usize) -> Brain {
    let cfg = BrainConfig {
        dims: NetDims::new(3, 136),
        learner: Learner::Dqn,
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
    Brain::new(cfg, LocalGraph::new(graph, m), &mut stream(17, Domain::AgentInit, m as u64))
}

fn demand() -> impl Strategy<Value = [f64; 3]> {
    prop::array::uniform3(0.0f64..3.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn codec_is_a_bijection_onto_compositions(units in 3usize..70, pick in any::<prop::sample::Index>()) {
        let codec = ActionCodec::new(units, 3).unwrap();
        let i = pick.index(codec.count());
        let c = codec.decode(i).unwrap();
        prop_assert_eq!(c.iter().sum::<usize>(), units);
        prop_assert!(c.iter().all(|&x| x >= 1));
        prop_assert_eq!(codec.encode(&c).unwrap(), i);
        prop_assert!(codec.decode(codec.count()).is_err());
    }

    #[test]
    fn hard_split_is_balanced(units in 3usize..200) {
        let h = hard_units(units);
        prop_assert_eq!(h.iter().sum::<usize>(), units);
        prop_assert!(h[0] >= h[1] && h[1] >= h[2] && h[0] - h[2] <= 1);
    }

    #[test]
    fn reward_stays_in_unit_interval(j in -5.0f64..50.0, ssr in 0.0f64..=1.0, c1 in 0.5f64..20.0, c2 in 0.5f64..5.0, c3 in 0.05f64..=1.0) {
        let w = UtilityWeights { alpha: 0.01, beta: [1.0; 3], c1, c2, c3 };
        let (r, clipped) = reward(j, ssr, &w);
        prop_assert!((0.0..=1.0).contains(&r));
        if ssr < c3 {
            prop_assert!(r <= (c3 / c2).min(1.0) + 1e-15);
        } else if !clipped {
            prop_assert!((r - j / c1).abs() < 1e-12);
        }
    }

    #[test]
    fn utility_is_linear_in_weights(se in 0.0f64..800.0, ssr in prop::array::uniform3(0.0f64..=1.0), k in 0.1f64..10.0) {
        let w = UtilityWeights { alpha: 0.01, beta: [1.0, 2.0, 3.0], c1: 6.0, c2: 2.0, c3: 0.9 };
        let scaled = UtilityWeights { alpha: w.alpha * k, beta: w.beta.map(|b| b * k), ..w };
        prop_assert!((utility(se, &ssr, &scaled) - k * utility(se, &ssr, &w)).abs() < 1e-9 * (1.0 + se));
    }

    #[test]
    fn softmax_rows_sum_to_one(logits in prop::collection::vec(-30.0f64..30.0, 1..20), tau in 0.05f64..20.0) {
        let mut p = logits.clone();
        softmax_in_place(&mut p, tau);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(p.iter().all(|v| *v >= 0.0));
        let mut t = Tape::new();
        let x = t.constant(Tensor::row(logits));
        let lp = t.log_softmax(x, tau);
        let from_log: f64 = t.value(lp).data.iter().map(|v| v.exp()).sum();
        prop_assert!((from_log - 1.0).abs() < 1e-9);
    }

    #[test]
    fn uniform_entropy_is_log_count(n in 1usize..200) {
        let mut t = Tape::new();
        let x = t.constant(Tensor::zeros(1, n));
        let p = t.softmax(x, 1.0);
        let h = t.entropy(p);
        prop_assert!((t.value(h).item() - (n as f64).ln()).abs() < 1e-12);
    }

    /// On the path 0-1-2-3 agent 0 sees BS 2 (two hops) but not BS 3.
    #[test]
    fn gat_state_reaches_exactly_two_hops(d in prop::collection::vec(demand(), 4), bump in 0.5f64..2.0) {
        let graph = NeighborGraph::from_adjacency(vec![vec![1], vec![0, 2], vec![1, 3], vec![2]]);
        let brain = gat_brain(&graph, 0);
        let state = |d: &[[f64; 3]]| brain.state_vector(&brain.local_obs(d, d));
        let base = state(&d);
        let mut far = d.clone();
        far[3] = far[3].map(|x| x + bump);
        prop_assert_eq!(&base, &state(&far));
        let mut two = d.clone();
        two[2] = [d[2][0] + bump, d[2][1] + 2.0 * bump, d[2][2] + 3.0 * bump];
        let moved = state(&two);
        prop_assert!(base.iter().zip(&moved).any(|(a, b)| (a - b).abs() > 1e-12));
    }

    /// Swapping the demands of two leaves of a star leaves the hub's state
    /// unchanged.
    #[test]
    fn gat_state_is_invariant_to_neighbour_order(d in prop::collection::vec(demand(), 4)) {
        let graph = NeighborGraph::from_adjacency(vec![vec![1, 2, 3], vec![0], vec![0], vec![0]]);
        let brain = gat_brain(&graph, 0);
        let state = |d: &[[f64; 3]]| brain.state_vector(&brain.local_obs(d, d));
        let mut swapped = d.clone();
        swapped.swap(1, 3);
        for (a, b) in state(&d).iter().zip(state(&swapped)) {
            prop_assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn packets_are_conserved_under_random_allocations(seed in 0u64..1000, actions in prop::collection::vec(0usize..136, 7 * 25)) {
        let mut env = small_env(seed);
        for chunk in actions.chunks(7) {
            let out = env.step(chunk).unwrap();
            let l = env.packet_ledger();
            prop_assert_eq!(l.arrived, l.delivered + l.dropped + env.pending_packets());
            for (m, met) in out.metrics.iter().enumerate() {
                prop_assert!((0.0..=1.0).contains(&out.rewards[m]));
                for s in 0..3 {
                    prop_assert!((0.0..=1.0).contains(&met.ssr[s]));
                    prop_assert!(met.satisfied[s] <= met.delivered[s]);
                }
            }
        }
    }
}

#[test]
fn empty_packet_set_is_fully_satisfied() {
    assert_eq!(slice_ssr(&[], Sla { rate_bps: 1.0, latency_s: 1.0 }), 1.0);
}
