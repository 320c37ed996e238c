//! Cell layout, subscriber mobility and base-station association.
//!
//! Base stations sit on a hexagonal lattice centred in a rectangular arena.
//! Subscribers start in four corner clusters and move in straight lines,
//! reflecting specularly off the arena walls. Each subscriber is served by
//! its nearest base station.

use crate::error::{config_err, Result};
use crate::rng::{stream, Domain};
use crate::slice::{Slice, NUM_SLICES};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub type Point = [f64; 2];

#[inline]
pub fn distance(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arena {
    pub width: f64,
    pub height: f64,
}

impl Arena {
    pub fn new(width: f64, height: f64) -> Self {
        Arena { width, height }
    }

    pub fn center(&self) -> Point {
        [self.width / 2.0, self.height / 2.0]
    }

    pub fn contains(&self, p: Point) -> bool {
        p[0] >= 0.0 && p[0] <= self.width && p[1] >= 0.0 && p[1] <= self.height
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Hexagonal rings around the centre cell (2 rings = 19 cells).
    pub rings: usize,
    pub inter_site_distance_m: f64,
    pub arena_m: [f64; 2],
    /// Neighbourhood radius as a multiple of the inter-site distance.
    pub neighbor_radius_factor: f64,
    /// Subscriber counts per slice (VoLTE, eMBB, URLLC).
    pub subscribers: [usize; NUM_SLICES],
    pub speed_min_mps: [f64; NUM_SLICES],
    pub speed_max_mps: [f64; NUM_SLICES],
    /// Side of the square corner region subscribers are spawned in.
    pub corner_extent_m: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            rings: 2,
            inter_site_distance_m: 36.0,
            arena_m: [160.0, 160.0],
            neighbor_radius_factor: 1.1,
            subscribers: [333, 667, 1000],
            speed_min_mps: [1.0, 1.0, 6.0],
            speed_max_mps: [5.0, 3.0, 10.0],
            corner_extent_m: 20.0,
        }
    }
}

impl ScenarioConfig {
    pub fn arena(&self) -> Arena {
        Arena::new(self.arena_m[0], self.arena_m[1])
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.inter_site_distance_m > 0.0) {
            return Err(config_err("scenario.inter_site_distance_m must be > 0"));
        }
        if !(self.neighbor_radius_factor > 0.0) {
            return Err(config_err("scenario.neighbor_radius_factor must be > 0"));
        }
        if !(self.corner_extent_m >= 0.0)
            || self.corner_extent_m > self.arena_m[0].min(self.arena_m[1])
        {
            return Err(config_err("scenario.corner_extent_m must fit inside the arena"));
        }
        for s in Slice::ALL {
            let (lo, hi) = (self.speed_min_mps[s.index()], self.speed_max_mps[s.index()]);
            if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
                return Err(config_err(format!("scenario speed range for {s} is invalid")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseStation {
    pub id: usize,
    pub position: Point,
}

/// Lays out `1 + 3·rings·(rings+1)` base stations on a hexagonal lattice
/// centred in the arena, ordered by ring and then by angle.
pub fn build_hex_layout(rings: usize, inter_site_distance: f64, arena: Arena) -> Result<Vec<BaseStation>> {
    if !(inter_site_distance > 0.0) {
        return Err(config_err("inter-site distance must be positive"));
    }
    let r = rings as i64;
    let c = arena.center();
    let mut cells: Vec<(i64, f64, Point)> = Vec::new();
    for q in -r..=r {
        for s in -r..=r {
            let ring = q.abs().max(s.abs()).max((q + s).abs());
            if ring > r {
                continue;
            }
            let x = inter_site_distance * (q as f64 + s as f64 / 2.0);
            let y = inter_site_distance * (3f64.sqrt() / 2.0) * s as f64;
            let angle = if ring == 0 { 0.0 } else { y.atan2(x).rem_euclid(std::f64::consts::TAU) };
            cells.push((ring, angle, [c[0] + x, c[1] + y]));
        }
    }
    cells.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let bss: Vec<BaseStation> = cells
        .into_iter()
        .enumerate()
        .map(|(id, (_, _, position))| BaseStation { id, position })
        .collect();
    if let Some(bs) = bss.iter().find(|b| !arena.contains(b.position)) {
        return Err(config_err(format!(
            "arena {}x{} m too small for {rings} rings at {inter_site_distance} m spacing (BS {} at {:?})",
            arena.width, arena.height, bs.id, bs.position
        )));
    }
    Ok(bss)
}

/// Euclidean neighbourhoods `D_m` (self included) of every base station.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborGraph {
    adjacency: Vec<Vec<usize>>,
}

impl NeighborGraph {
    pub fn build(bss: &[BaseStation], radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(config_err("neighbour radius must be positive"));
        }
        let adjacency = bss
            .iter()
            .map(|a| {
                bss.iter()
                    .filter(|b| b.id == a.id || distance(a.position, b.position) <= radius)
                    .map(|b| b.id)
                    .collect()
            })
            .collect();
        Ok(NeighborGraph { adjacency })
    }

    /// Graph from explicit neighbour lists. Self loops are added and lists
    /// are sorted; symmetry is the caller's responsibility.
    pub fn from_adjacency(mut adjacency: Vec<Vec<usize>>) -> Self {
        for (m, list) in adjacency.iter_mut().enumerate() {
            if !list.contains(&m) {
                list.push(m);
            }
            list.sort_unstable();
            list.dedup();
        }
        NeighborGraph { adjacency }
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    pub fn neighbors(&self, m: usize) -> &[usize] {
        &self.adjacency[m]
    }

    /// Nodes within two hops of `m`, with `m` first and the rest ascending.
    pub fn two_hop(&self, m: usize) -> Vec<usize> {
        let mut set: Vec<usize> = self.adjacency[m]
            .iter()
            .flat_map(|&j| self.adjacency[j].iter().copied())
            .filter(|&j| j != m)
            .collect();
        set.sort_unstable();
        set.dedup();
        set.insert(0, m);
        set
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subscriber {
    pub id: usize,
    pub slice: Slice,
    pub position: Point,
    pub direction: Point,
    pub speed: f64,
}

/// Places subscribers in four corner clusters (round-robin over corners)
/// with uniformly random headings and per-slice uniform speeds. Ids are
/// assigned slice by slice: VoLTE first, then eMBB, then URLLC.
pub fn spawn_subscribers(cfg: &ScenarioConfig, seed: u64) -> Vec<Subscriber> {
    let arena = cfg.arena();
    let e = cfg.corner_extent_m;
    let corners = [
        [0.0, 0.0],
        [arena.width - e, 0.0],
        [0.0, arena.height - e],
        [arena.width - e, arena.height - e],
    ];
    let mut subs = Vec::with_capacity(cfg.subscribers.iter().sum());
    for slice in Slice::ALL {
        for _ in 0..cfg.subscribers[slice.index()] {
            let id = subs.len();
            let mut rng = stream(seed, Domain::Spawn, id as u64);
            let origin = corners[id % 4];
            let position = [origin[0] + rng.gen::<f64>() * e, origin[1] + rng.gen::<f64>() * e];
            let theta = rng.gen::<f64>() * std::f64::consts::TAU;
            let (lo, hi) = (cfg.speed_min_mps[slice.index()], cfg.speed_max_mps[slice.index()]);
            let speed = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
            subs.push(Subscriber { id, slice, position, direction: [theta.cos(), theta.sin()], speed });
        }
    }
    subs
}

// Folds an unbounded coordinate back into [0, len]; returns the folded
// value and whether an odd number of reflections happened.
fn fold_axis(x: f64, len: f64) -> (f64, bool) {
    let m = x.rem_euclid(2.0 * len);
    if m <= len {
        (m, false)
    } else {
        (2.0 * len - m, true)
    }
}

/// Straight-line motion with specular reflection off the arena walls.
pub fn advance_mobility(subs: &mut [Subscriber], arena: Arena, dt: f64) {
    debug_assert!(dt > 0.0);
    let lens = [arena.width, arena.height];
    for s in subs.iter_mut() {
        for axis in 0..2 {
            let x = s.position[axis] + s.direction[axis] * s.speed * dt;
            let (p, flipped) = fold_axis(x, lens[axis]);
            s.position[axis] = p;
            if flipped {
                s.direction[axis] = -s.direction[axis];
            }
        }
    }
}

/// Nearest base station for every subscriber; ties go to the lowest id.
pub fn associate(subs: &[Subscriber], bss: &[BaseStation]) -> Vec<usize> {
    subs.iter()
        .map(|s| {
            let mut best = (f64::INFINITY, usize::MAX);
            for b in bss {
                let d2 = (s.position[0] - b.position[0]).powi(2) + (s.position[1] - b.position[1]).powi(2);
                if d2 < best.0 {
                    best = (d2, b.id);
                }
            }
            best.1
        })
        .collect()
}

/// Full geometric state of the network.
#[derive(Debug, Clone)]
pub struct ScenarioState {
    pub arena: Arena,
    pub base_stations: Vec<BaseStation>,
    pub graph: NeighborGraph,
    pub subscribers: Vec<Subscriber>,
    pub association: Vec<usize>,
}

impl ScenarioState {
    pub fn new(cfg: &ScenarioConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let arena = cfg.arena();
        let base_stations = build_hex_layout(cfg.rings, cfg.inter_site_distance_m, arena)?;
        let graph = NeighborGraph::build(&base_stations, cfg.neighbor_radius_factor * cfg.inter_site_distance_m)?;
        let subscribers = spawn_subscribers(cfg, seed);
        let association = associate(&subscribers, &base_stations);
        Ok(ScenarioState { arena, base_stations, graph, subscribers, association })
    }

    pub fn num_bs(&self) -> usize {
        self.base_stations.len()
    }

    /// Moves every subscriber by `dt` and re-associates. Returns, per BS,
    /// the number of subscribers handed over into it.
    pub fn step(&mut self, dt: f64) -> Vec<usize> {
        advance_mobility(&mut self.subscribers, self.arena, dt);
        let next = associate(&self.subscribers, &self.base_stations);
        let mut handovers = vec![0; self.num_bs()];
        for (old, &new) in self.association.iter().zip(&next) {
            if *old != new {
                handovers[new] += 1;
            }
        }
        self.association = next;
        handovers
    }

    /// Subscriber ids attached to each BS, ascending.
    pub fn users_per_bs(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_bs()];
        for (u, &m) in self.association.iter().enumerate() {
            out[m].push(u);
        }
        out
    }
}
