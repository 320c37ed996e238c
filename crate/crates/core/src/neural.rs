//! Per-agent networks: demand encoders, a two-layer multi-head graph
//! attention stack over the BS neighbourhood, and either a dueling double
//! DQN head or an actor-critic pair.

use crate::error::{Error, Result};
use crate::scenario::NeighborGraph;
use crate::tensor::{softmax_in_place, Adam, AttentionMask, Tape, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetDims {
    /// Demand entries per observation half (one per slice).
    pub inputs: usize,
    /// Encoder output width.
    pub embed: usize,
    /// Attention key/query width per head.
    pub key: usize,
    /// Attention value width per head.
    pub value: usize,
    pub heads: usize,
    pub hidden: usize,
    pub actions: usize,
}

impl NetDims {
    pub fn new(inputs: usize, actions: usize) -> Self {
        NetDims { inputs, embed: 32, key: 32, value: 8, heads: 8, hidden: 128, actions }
    }

    /// Width of the state vector fed to the heads.
    pub fn state_dim(&self, gat: bool) -> usize {
        if gat {
            self.embed + 2 * self.heads * self.value
        } else {
            2 * self.embed
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Learner {
    Dqn,
    A2c,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BrainConfig {
    pub dims: NetDims,
    pub learner: Learner,
    pub gat: bool,
    pub dueling: bool,
    pub double: bool,
    pub gamma: f64,
    /// Attention temperature (multiplies the scores).
    pub tau: f64,
    /// Learning rate of the Q network, or of the critic and shared layers.
    pub lr: f64,
    pub actor_lr: f64,
    pub entropy_weight: f64,
    /// Upper bound on the actor's importance ratio π(a|s) / μ(a|s).
    pub importance_clip: f64,
}

/// The neighbourhood one agent computes over. Positions index into
/// `nodes`, which lists the agent first and then every other BS within
/// two hops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalGraph {
    pub nodes: Vec<usize>,
    /// Positions (in `nodes`) of the agent's neighbours, agent first.
    pub targets: Vec<usize>,
    /// For each target, positions of that target's neighbours.
    pub target_sources: Vec<Vec<usize>>,
}

impl LocalGraph {
    pub fn new(graph: &NeighborGraph, m: usize) -> Self {
        let nodes = graph.two_hop(m);
        let pos = |id: usize| nodes.iter().position(|&x| x == id).expect("neighbour within two hops");
        let mut d_m: Vec<usize> = graph.neighbors(m).iter().copied().filter(|&j| j != m).collect();
        d_m.insert(0, m);
        let targets: Vec<usize> = d_m.iter().map(|&j| pos(j)).collect();
        let target_sources = d_m.iter().map(|&j| graph.neighbors(j).iter().map(|&i| pos(i)).collect()).collect();
        LocalGraph { nodes, targets, target_sources }
    }

    /// A graph with the agent alone.
    pub fn isolated(m: usize) -> Self {
        LocalGraph { nodes: vec![m], targets: vec![0], target_sources: vec![vec![0]] }
    }

    fn layer1_mask(&self, batch: usize) -> AttentionMask {
        let s = self.nodes.len();
        let mut sources = Vec::with_capacity(batch * self.targets.len());
        for b in 0..batch {
            for src in &self.target_sources {
                sources.push(src.iter().map(|&p| b * s + p).collect());
            }
        }
        AttentionMask { sources }
    }

    fn layer2_mask(&self, batch: usize) -> AttentionMask {
        let t = self.targets.len();
        AttentionMask { sources: (0..batch).map(|b| (b * t..(b + 1) * t).collect()).collect() }
    }
}

/// What one agent sees: previous-period demand of every node in its
/// local graph (agent first) and its own current demand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalObs {
    pub prev: Vec<Vec<f64>>,
    pub cur: Vec<f64>,
}

/// Indices of the parameter tensors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub enc_prev_w: usize,
    pub enc_prev_b: usize,
    pub enc_cur_w: usize,
    pub enc_cur_b: usize,
    /// `[W_s, W_t, W_c]` of each attention layer.
    pub gat: Option<[[usize; 3]; 2]>,
    pub head: HeadLayout,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HeadLayout {
    Q { w1: usize, b1: usize, value: Option<(usize, usize)>, adv_w: usize, adv_b: usize },
    ActorCritic { cw1: usize, cb1: usize, cw2: usize, cb2: usize, aw1: usize, ab1: usize, aw2: usize, ab2: usize },
}

/// One agent's networks, target copy and optimiser.
#[derive(Debug, Clone)]
pub struct Brain {
    pub cfg: BrainConfig,
    pub graph: LocalGraph,
    pub layout: Layout,
    pub names: Vec<String>,
    pub params: Vec<Tensor>,
    pub target: Option<Vec<Tensor>>,
    adam: Adam,
    updates: u64,
}

/// One sampled transition as the learners consume it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: LocalObs,
    pub action: usize,
    pub reward: f64,
    pub next_obs: LocalObs,
    /// Probability with which the acting policy chose `action`.
    pub behaviour_prob: f64,
}

/// Diagnostics of one gradient step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    pub loss: f64,
    pub critic_loss: f64,
    pub actor_loss: f64,
}

/// Index of the largest entry; ties go to the lowest index.
pub fn greedy_action(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Draws an index from a probability vector.
pub fn sample_action<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen::<f64>() * probs.iter().sum::<f64>();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

impl Brain {
    pub fn new<R: Rng + ?Sized>(cfg: BrainConfig, graph: LocalGraph, rng: &mut R) -> Self {
        let d = cfg.dims;
        let mut names = Vec::new();
        let mut params = Vec::new();
        let mut lrs = Vec::new();
        let mut add = |name: &str, t: Tensor, lr: f64| {
            names.push(name.to_string());
            params.push(t);
            lrs.push(lr);
            params.len() - 1
        };
        let lr = cfg.lr;
        let enc_prev_w = add("encoder/prev/w", Tensor::glorot(d.inputs, d.embed, rng), lr);
        let enc_prev_b = add("encoder/prev/b", Tensor::zeros(1, d.embed), lr);
        let enc_cur_w = add("encoder/cur/w", Tensor::glorot(d.inputs, d.embed, rng), lr);
        let enc_cur_b = add("encoder/cur/b", Tensor::zeros(1, d.embed), lr);
        let gat = cfg.gat.then(|| {
            let kp = d.heads * d.key;
            let kc = d.heads * d.value;
            let mut layer = |i: usize, input: usize| {
                [
                    add(&format!("gat{i}/source"), Tensor::glorot(input, kp, rng), lr),
                    add(&format!("gat{i}/target"), Tensor::glorot(input, kp, rng), lr),
                    add(&format!("gat{i}/combine"), Tensor::glorot(input, kc, rng), lr),
                ]
            };
            let l1 = layer(1, d.embed);
            let l2 = layer(2, kc);
            [l1, l2]
        });
        let sd = d.state_dim(cfg.gat);
        let head = match cfg.learner {
            Learner::Dqn => {
                let w1 = add("q/hidden/w", Tensor::glorot(sd, d.hidden, rng), lr);
                let b1 = add("q/hidden/b", Tensor::zeros(1, d.hidden), lr);
                let value = cfg.dueling.then(|| {
                    (add("q/value/w", Tensor::glorot(d.hidden, 1, rng), lr), add("q/value/b", Tensor::zeros(1, 1), lr))
                });
                let adv_w = add("q/advantage/w", Tensor::glorot(d.hidden, d.actions, rng), lr);
                let adv_b = add("q/advantage/b", Tensor::zeros(1, d.actions), lr);
                HeadLayout::Q { w1, b1, value, adv_w, adv_b }
            }
            Learner::A2c => {
                let alr = cfg.actor_lr;
                let cw1 = add("critic/hidden/w", Tensor::glorot(sd, d.hidden, rng), lr);
                let cb1 = add("critic/hidden/b", Tensor::zeros(1, d.hidden), lr);
                let cw2 = add("critic/out/w", Tensor::glorot(d.hidden, 1, rng), lr);
                let cb2 = add("critic/out/b", Tensor::zeros(1, 1), lr);
                let aw1 = add("actor/hidden/w", Tensor::glorot(sd, d.hidden, rng), alr);
                let ab1 = add("actor/hidden/b", Tensor::zeros(1, d.hidden), alr);
                let aw2 = add("actor/out/w", Tensor::glorot(d.hidden, d.actions, rng), alr);
                let ab2 = add("actor/out/b", Tensor::zeros(1, d.actions), alr);
                HeadLayout::ActorCritic { cw1, cb1, cw2, cb2, aw1, ab1, aw2, ab2 }
            }
        };
        let layout = Layout { enc_prev_w, enc_prev_b, enc_cur_w, enc_cur_b, gat, head };
        let adam = Adam::new(&params, lrs);
        let target = (cfg.learner == Learner::Dqn).then(|| params.clone());
        Brain { cfg, graph, layout, names, params, target, adam, updates: 0 }
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Copies the online parameters into the target network.
    pub fn sync_target(&mut self) {
        if let Some(t) = &mut self.target {
            t.clone_from(&self.params);
        }
    }

    /// Replaces the parameters with values loaded elsewhere (same shapes).
    pub fn load_params(&mut self, params: Vec<Tensor>) -> Result<()> {
        if params.len() != self.params.len() || params.iter().zip(&self.params).any(|(a, b)| a.shape() != b.shape()) {
            return Err(Error::Checkpoint("parameter shapes do not match this network".into()));
        }
        self.params = params;
        self.sync_target();
        Ok(())
    }

    /// Local observation of this agent from every BS's demand.
    pub fn local_obs(&self, prev: &[[f64; 3]], cur: &[[f64; 3]]) -> LocalObs {
        let me = self.graph.nodes[0];
        let nodes: &[usize] = if self.cfg.gat { &self.graph.nodes } else { &self.graph.nodes[..1] };
        LocalObs { prev: nodes.iter().map(|&j| prev[j].to_vec()).collect(), cur: cur[me].to_vec() }
    }

    fn bind(tape: &mut Tape, params: &[Tensor], trainable: bool) -> Vec<Var> {
        params.iter().map(|p| if trainable { tape.param(p.clone()) } else { tape.constant(p.clone()) }).collect()
    }

    fn dense(tape: &mut Tape, x: Var, w: Var, b: Var) -> Var {
        let h = tape.matmul(x, w);
        tape.add_row(h, b)
    }

    /// Builds the state matrix (one row per observation) on `tape`.
    pub fn forward_state(&self, tape: &mut Tape, p: &[Var], batch: &[&LocalObs]) -> Var {
        let d = self.cfg.dims;
        let l = &self.layout;
        let b = batch.len();
        let cur = tape.constant(Tensor::new(b, d.inputs, batch.iter().flat_map(|o| o.cur.iter().copied()).collect()));
        let pre = Self::dense(tape, cur, p[l.enc_cur_w], p[l.enc_cur_b]);
        let h_cur = tape.relu(pre);
        let Some([[ws1, wt1, wc1], [ws2, wt2, wc2]]) = l.gat else {
            let prev = tape.constant(Tensor::new(b, d.inputs, batch.iter().flat_map(|o| o.prev[0].iter().copied()).collect()));
            let pre = Self::dense(tape, prev, p[l.enc_prev_w], p[l.enc_prev_b]);
            let h_prev = tape.relu(pre);
            return tape.concat(&[h_prev, h_cur]);
        };
        let s = self.graph.nodes.len();
        let t = self.graph.targets.len();
        debug_assert!(batch.iter().all(|o| o.prev.len() == s), "observation does not match the local graph");
        let prev = tape.constant(Tensor::new(b * s, d.inputs, batch.iter().flat_map(|o| o.prev.iter().flatten().copied()).collect()));
        let pre = Self::dense(tape, prev, p[l.enc_prev_w], p[l.enc_prev_b]);
        let h = tape.relu(pre);

        let target_rows: Vec<usize> = (0..b).flat_map(|bi| self.graph.targets.iter().map(move |&q| bi * s + q)).collect();
        let h_targets = tape.gather_rows(h, &target_rows);
        let q1 = tape.matmul(h_targets, p[ws1]);
        let k1 = tape.matmul(h, p[wt1]);
        let v1 = tape.matmul(h, p[wc1]);
        let a1 = tape.masked_attention(q1, k1, v1, d.heads, self.cfg.tau, Arc::new(self.graph.layer1_mask(b)));
        let h1 = tape.relu(a1);

        let own_rows: Vec<usize> = (0..b).map(|bi| bi * t).collect();
        let h1_own = tape.gather_rows(h1, &own_rows);
        let q2 = tape.matmul(h1_own, p[ws2]);
        let k2 = tape.matmul(h1, p[wt2]);
        let v2 = tape.matmul(h1, p[wc2]);
        let a2 = tape.masked_attention(q2, k2, v2, d.heads, self.cfg.tau, Arc::new(self.graph.layer2_mask(b)));
        let h2 = tape.relu(a2);
        tape.concat(&[h_cur, h1_own, h2])
    }

    /// Q-values (dueling when configured), one row per state.
    pub fn forward_q(&self, tape: &mut Tape, p: &[Var], state: Var) -> Var {
        let HeadLayout::Q { w1, b1, value, adv_w, adv_b } = self.layout.head else {
            panic!("forward_q on an actor-critic brain");
        };
        let pre = Self::dense(tape, state, p[w1], p[b1]);
        let z = tape.relu(pre);
        let adv = Self::dense(tape, z, p[adv_w], p[adv_b]);
        let Some((vw, vb)) = value else { return adv };
        let v = Self::dense(tape, z, p[vw], p[vb]);
        let mean = tape.row_mean(adv);
        let neg = tape.scale(mean, -1.0);
        let centred = tape.add_col(adv, neg);
        tape.add_col(centred, v)
    }

    /// `(V, logits)` of the actor-critic head.
    pub fn forward_actor_critic(&self, tape: &mut Tape, p: &[Var], state: Var) -> (Var, Var) {
        let HeadLayout::ActorCritic { cw1, cb1, cw2, cb2, aw1, ab1, aw2, ab2 } = self.layout.head else {
            panic!("forward_actor_critic on a Q brain");
        };
        let pre = Self::dense(tape, state, p[cw1], p[cb1]);
        let zc = tape.relu(pre);
        let v = Self::dense(tape, zc, p[cw2], p[cb2]);
        let pre = Self::dense(tape, state, p[aw1], p[ab1]);
        let za = tape.relu(pre);
        let logits = Self::dense(tape, za, p[aw2], p[ab2]);
        (v, logits)
    }

    fn eval_rows(&self, params: &[Tensor], batch: &[&LocalObs], head: impl Fn(&Self, &mut Tape, &[Var], Var) -> Var) -> Tensor {
        let mut tape = Tape::new();
        let p = Self::bind(&mut tape, params, false);
        let s = self.forward_state(&mut tape, &p, batch);
        let out = head(self, &mut tape, &p, s);
        tape.value(out).clone()
    }

    pub fn state_vector(&self, obs: &LocalObs) -> Vec<f64> {
        self.eval_rows(&self.params, &[obs], |_, _, _, s| s).data
    }

    pub fn q_values(&self, obs: &LocalObs) -> Vec<f64> {
        self.eval_rows(&self.params, &[obs], |b, t, p, s| b.forward_q(t, p, s)).data
    }

    pub fn policy(&self, obs: &LocalObs) -> Vec<f64> {
        self.eval_rows(&self.params, &[obs], |b, t, p, s| {
            let (_, logits) = b.forward_actor_critic(t, p, s);
            t.softmax(logits, 1.0)
        })
        .data
    }

    pub fn state_value(&self, obs: &LocalObs) -> f64 {
        self.eval_rows(&self.params, &[obs], |b, t, p, s| b.forward_actor_critic(t, p, s).0).item()
    }

    /// Action preferred by the current networks: greedy Q for DQN, the
    /// mode of the policy for A2C.
    pub fn greedy(&self, obs: &LocalObs) -> usize {
        match self.cfg.learner {
            Learner::Dqn => greedy_action(&self.q_values(obs)),
            Learner::A2c => greedy_action(&self.policy(obs)),
        }
    }

    /// Bootstrap targets `r + γ·Q_target(s', a*)`. With double learning `a*`
    /// is chosen by the online network, otherwise by the target network.
    pub fn q_targets(&self, batch: &[&Transition]) -> Vec<f64> {
        let next: Vec<&LocalObs> = batch.iter().map(|t| &t.next_obs).collect();
        let target = self.target.as_ref().expect("DQN brain keeps a target network");
        let q_t = self.eval_rows(target, &next, |b, t, p, s| b.forward_q(t, p, s));
        let q_sel = if self.cfg.double { Some(self.eval_rows(&self.params, &next, |b, t, p, s| b.forward_q(t, p, s))) } else { None };
        batch
            .iter()
            .enumerate()
            .map(|(i, tr)| {
                let row = q_t.row_slice(i);
                let boot = match &q_sel {
                    Some(online) => row[greedy_action(online.row_slice(i))],
                    None => row.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                };
                tr.reward + self.cfg.gamma * boot
            })
            .collect()
    }

    /// Squared TD loss on a batch, recorded on `tape` over `p`.
    pub fn dqn_loss(&self, tape: &mut Tape, p: &[Var], batch: &[&Transition], targets: &[f64]) -> Var {
        let obs: Vec<&LocalObs> = batch.iter().map(|t| &t.obs).collect();
        let s = self.forward_state(tape, p, &obs);
        let q = self.forward_q(tape, p, s);
        let actions: Vec<usize> = batch.iter().map(|t| t.action).collect();
        let qa = tape.pick(q, &actions);
        let y = tape.constant(Tensor::col(targets.to_vec()));
        let diff = tape.sub(qa, y);
        let sq = tape.square(diff);
        tape.mean(sq)
    }

    /// TD errors `r + γV(s') − V(s)` under the current critic.
    pub fn td_errors(&self, batch: &[&Transition]) -> Vec<f64> {
        let obs: Vec<&LocalObs> = batch.iter().map(|t| &t.obs).collect();
        let next: Vec<&LocalObs> = batch.iter().map(|t| &t.next_obs).collect();
        let v = self.eval_rows(&self.params, &obs, |b, t, p, s| b.forward_actor_critic(t, p, s).0);
        let vn = self.eval_rows(&self.params, &next, |b, t, p, s| b.forward_actor_critic(t, p, s).0);
        batch.iter().enumerate().map(|(i, tr)| tr.reward + self.cfg.gamma * vn.data[i] - v.data[i]).collect()
    }

    /// Critic loss `mean δ²` plus actor loss `−mean[δ·log π(a|s) + λ·H(π)]`,
    /// with `V(s')` and the `δ` in the actor term held constant. Returns
    /// `(total, critic, actor)`.
    pub fn a2c_loss(&self, tape: &mut Tape, p: &[Var], batch: &[&Transition], next_values: &[f64]) -> (Var, Var, Var) {
        self.a2c_loss_with(tape, p, batch, next_values, None)
    }

    /// [`Brain::a2c_loss`] with the actor's advantage weights optionally
    /// supplied instead of taken from the critic.
    pub fn a2c_loss_with(&self, tape: &mut Tape, p: &[Var], batch: &[&Transition], next_values: &[f64], advantages: Option<&[f64]>) -> (Var, Var, Var) {
        let obs: Vec<&LocalObs> = batch.iter().map(|t| &t.obs).collect();
        let s = self.forward_state(tape, p, &obs);
        let (v, logits) = self.forward_actor_critic(tape, p, s);
        let boot = tape.constant(Tensor::col(batch.iter().zip(next_values).map(|(t, vn)| t.reward + self.cfg.gamma * vn).collect()));
        let delta = tape.sub(boot, v);
        let sq = tape.square(delta);
        let critic = tape.mean(sq);

        let delta_c = match advantages {
            Some(a) => tape.constant(Tensor::col(a.to_vec())),
            None => {
                let logits_v = tape.value(logits);
                let weights = tape.value(delta).data.iter().zip(batch).enumerate().map(|(i, (d, t))| {
                    let mut pi = logits_v.row_slice(i).to_vec();
                    softmax_in_place(&mut pi, 1.0);
                    d * (pi[t.action] / t.behaviour_prob).min(self.cfg.importance_clip)
                });
                tape.constant(Tensor::col(weights.collect()))
            }
        };
        let logp = tape.log_softmax(logits, 1.0);
        let actions: Vec<usize> = batch.iter().map(|t| t.action).collect();
        let logp_a = tape.pick(logp, &actions);
        let weighted = tape.mul(delta_c, logp_a);
        let probs = tape.softmax(logits, 1.0);
        let plogp = tape.mul(probs, logp);
        let neg_h = tape.row_sum(plogp);
        let ent = tape.scale(neg_h, -self.cfg.entropy_weight);
        let objective = tape.add(weighted, ent);
        let mean_obj = tape.mean(objective);
        let actor = tape.scale(mean_obj, -1.0);
        let total = tape.add(critic, actor);
        (total, critic, actor)
    }

    /// One optimiser step on a minibatch.
    pub fn update(&mut self, batch: &[&Transition]) -> UpdateStats {
        let mut tape = Tape::new();
        let stats;
        let p = Self::bind(&mut tape, &self.params, true);
        match self.cfg.learner {
            Learner::Dqn => {
                let y = self.q_targets(batch);
                let loss = self.dqn_loss(&mut tape, &p, batch, &y);
                stats = UpdateStats { loss: tape.value(loss).item(), ..Default::default() };
                tape.backward(loss);
            }
            Learner::A2c => {
                let next: Vec<&LocalObs> = batch.iter().map(|t| &t.next_obs).collect();
                let vn = self.eval_rows(&self.params, &next, |b, t, p, s| b.forward_actor_critic(t, p, s).0).data;
                let (total, critic, actor) = self.a2c_loss(&mut tape, &p, batch, &vn);
                stats = UpdateStats {
                    loss: tape.value(total).item(),
                    critic_loss: tape.value(critic).item(),
                    actor_loss: tape.value(actor).item(),
                };
                tape.backward(total);
            }
        }
        let grads: Vec<Tensor> = p.iter().map(|v| tape.grad(*v)).collect();
        self.adam.update(&mut self.params, &grads);
        self.updates += 1;
        stats
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};
    use crate::tensor::gradcheck::max_rel_error;

    fn cfg(learner: Learner, gat: bool) -> BrainConfig {
        BrainConfig {
            dims: NetDims::new(3, 136),
            learner,
            gat,
            dueling: true,
            double: true,
            gamma: 0.9,
            tau: 1.0,
            lr: 1e-3,
            actor_lr: 3e-4,
            entropy_weight: 0.01,
            importance_clip: 1.0,
        }
    }

    fn path3() -> NeighborGraph {
        NeighborGraph::from_adjacency(vec![vec![1], vec![0, 2], vec![1]])
    }

    fn obs_for(brain: &Brain, seed: u64) -> LocalObs {
        let mut rng = stream(seed, Domain::Toy, 7);
        let prev: Vec<[f64; 3]> = (0..3).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let cur: Vec<[f64; 3]> = (0..3).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        brain.local_obs(&prev, &cur)
    }

    #[test]
    fn local_graph_of_path_end() {
        let g = LocalGraph::new(&path3(), 0);
        assert_eq!(g.nodes, vec![0, 1, 2]);
        assert_eq!(g.targets, vec![0, 1]);
        assert_eq!(g.target_sources, vec![vec![0, 1], vec![0, 1, 2]]);
    }

    #[test]
    fn shapes_and_nonnegative_state() {
        let mut rng = stream(1, Domain::AgentInit, 0);
        let brain = Brain::new(cfg(Learner::Dqn, true), LocalGraph::new(&path3(), 1), &mut rng);
        let o = obs_for(&brain, 2);
        let s = brain.state_vector(&o);
        assert_eq!(s.len(), 160);
        assert!(s.iter().all(|v| *v >= 0.0));
        assert_eq!(brain.q_values(&o).len(), 136);
        let plain = Brain::new(cfg(Learner::Dqn, false), LocalGraph::isolated(1), &mut rng);
        assert_eq!(plain.state_vector(&obs_for(&plain, 2)).len(), 64);
    }

    #[test]
    fn zero_demand_zero_embedding() {
        let mut rng = stream(1, Domain::AgentInit, 0);
        let brain = Brain::new(cfg(Learner::Dqn, false), LocalGraph::isolated(0), &mut rng);
        let o = LocalObs { prev: vec![vec![0.0; 3]], cur: vec![0.0; 3] };
        assert!(brain.state_vector(&o).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn dueling_mean_identity() {
        let mut rng = stream(3, Domain::AgentInit, 0);
        let brain = Brain::new(cfg(Learner::Dqn, true), LocalGraph::new(&path3(), 0), &mut rng);
        let o = obs_for(&brain, 4);
        let mut tape = Tape::new();
        let p = Brain::bind(&mut tape, &brain.params, false);
        let s = brain.forward_state(&mut tape, &p, &[&o]);
        let q = brain.forward_q(&mut tape, &p, s);
        let HeadLayout::Q { w1, b1, value: Some((vw, vb)), .. } = brain.layout.head else { unreachable!() };
        let pre = Brain::dense(&mut tape, s, p[w1], p[b1]);
        let z = tape.relu(pre);
        let v = Brain::dense(&mut tape, z, p[vw], p[vb]);
        let mean_q = tape.value(q).data.iter().sum::<f64>() / 136.0;
        assert!((mean_q - tape.value(v).item()).abs() < 1e-9);
    }

    #[test]
    fn greedy_and_sampling_rules() {
        assert_eq!(greedy_action(&[1.0; 5]), 0);
        assert_eq!(greedy_action(&[0.0, 0.0, 1.0, 0.0]), 2);
        assert_eq!(greedy_action(&[0.0, 0.0, 3.0, 0.0, 0.0, 0.0, 0.0, 3.0]), 2);
        let mut rng = stream(5, Domain::Toy, 0);
        assert!((0..100).all(|_| sample_action(&[0.0, 0.0, 1.0], &mut rng) == 2));
        let probs = [0.1, 0.5, 0.15, 0.25];
        let n = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[sample_action(&probs, &mut rng)] += 1;
        }
        for (c, p) in counts.iter().zip(probs) {
            assert!((*c as f64 / n as f64 - p).abs() < 0.01);
        }
    }

    #[test]
    fn double_target_reduces_to_vanilla_when_tied() {
        let mut rng = stream(6, Domain::AgentInit, 0);
        let mut brain = Brain::new(cfg(Learner::Dqn, true), LocalGraph::new(&path3(), 2), &mut rng);
        let trs: Vec<Transition> = (0..4)
            .map(|i| Transition { obs: obs_for(&brain, i), action: i as usize * 11, reward: 0.25 * i as f64, next_obs: obs_for(&brain, 50 + i), behaviour_prob: 0.5 })
            .collect();
        let refs: Vec<&Transition> = trs.iter().collect();
        let double = brain.q_targets(&refs);
        brain.cfg.double = false;
        let vanilla = brain.q_targets(&refs);
        assert_eq!(double, vanilla);
    }

    #[test]
    fn end_to_end_gradients_on_path_graph() {
        for learner in [Learner::Dqn, Learner::A2c] {
            let mut c = cfg(learner, true);
            c.dims = NetDims { inputs: 3, embed: 4, key: 3, value: 2, heads: 2, hidden: 5, actions: 4 };
            let mut rng = stream(7, Domain::AgentInit, 0);
            let brain = Brain::new(c, LocalGraph::new(&path3(), 0), &mut rng);
            // Keep activations away from ReLU kinks for the difference quotient.
            let params: Vec<Tensor> = brain.params.iter().map(|t| t.map(|v| if v.abs() < 1e-3 { 0.05 } else { v })).collect();
            let trs: Vec<Transition> = (0..3)
                .map(|i| Transition { obs: obs_for(&brain, i), action: i as usize, reward: 0.3, next_obs: obs_for(&brain, 9 + i), behaviour_prob: 0.5 })
                .collect();
            let refs: Vec<&Transition> = trs.iter().collect();
            let err = max_rel_error(&params, 1e-6, 1e-3, |tape, p| match learner {
                Learner::Dqn => brain.dqn_loss(tape, p, &refs, &[0.5, 1.0, 0.2]),
                Learner::A2c => brain.a2c_loss_with(tape, p, &refs, &[0.1, 0.4, 0.3], Some(&[0.7, -0.2, 0.4])).0,
            });
            assert!(err < 1e-3, "{learner:?}: {err}");
        }
    }

    #[test]
    fn a2c_worked_values() {
        let mut c = cfg(Learner::A2c, false);
        c.entropy_weight = 0.0;
        let mut rng = stream(8, Domain::AgentInit, 0);
        let mut brain = Brain::new(c, LocalGraph::isolated(0), &mut rng);
        // Zero the critic output so V ≡ 0.
        let HeadLayout::ActorCritic { cw2, cb2, .. } = brain.layout.head else { unreachable!() };
        brain.params[cw2] = Tensor::zeros(128, 1);
        brain.params[cb2] = Tensor::zeros(1, 1);
        let o = LocalObs { prev: vec![vec![0.2, 0.3, 0.4]], cur: vec![0.1, 0.0, 0.9] };
        let tr = Transition { obs: o.clone(), action: 3, reward: 0.5, next_obs: o, behaviour_prob: 0.5 };
        assert_eq!(brain.td_errors(&[&tr]), vec![0.5]);
        let mut tape = Tape::new();
        let p = Brain::bind(&mut tape, &brain.params, true);
        let (_, critic, _) = brain.a2c_loss(&mut tape, &p, &[&tr], &[0.0]);
        assert!((tape.value(critic).item() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn update_moves_q_towards_target() {
        let mut rng = stream(9, Domain::AgentInit, 0);
        let mut brain = Brain::new(cfg(Learner::Dqn, true), LocalGraph::new(&path3(), 1), &mut rng);
        let o = obs_for(&brain, 1);
        let tr = Transition { obs: o.clone(), action: 5, reward: 1.0, next_obs: o.clone(), behaviour_prob: 0.5 };
        let before = brain.q_values(&o)[5];
        for _ in 0..50 {
            brain.update(&[&tr]);
        }
        assert!(brain.q_values(&o)[5] > before);
    }
}
