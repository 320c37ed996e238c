//! Prints the hexagonal BS layout and the neighbour graph used by the
//! attention layers, for the desk (one ring) and full (two ring) scenarios.

use slicenet::scenario::{build_hex_layout, distance, NeighborGraph, ScenarioConfig};

fn main() -> anyhow::Result<()> {
    for rings in [1, 2] {
        let cfg = ScenarioConfig { rings, ..Default::default() };
        let bss = build_hex_layout(rings, cfg.inter_site_distance_m, cfg.arena())?;
        let radius = cfg.neighbor_radius_factor * cfg.inter_site_distance_m;
        let graph = NeighborGraph::build(&bss, radius)?;
        println!("{rings} ring(s): {} BSs, ISD {} m, neighbour radius {radius:.1} m", bss.len(), cfg.inter_site_distance_m);
        for bs in &bss {
            let others: Vec<usize> = graph.neighbors(bs.id).iter().copied().filter(|&j| j != bs.id).collect();
            let d_center = distance(bs.position, bss[0].position);
            println!(
                "  BS {:>2} at ({:>6.1}, {:>6.1})  {:>5.1} m from centre  neighbours {:?}  two-hop set {:?}",
                bs.id,
                bs.position[0],
                bs.position[1],
                d_center,
                others,
                graph.two_hop(bs.id)
            );
        }
    }
    Ok(())
}
