//! Dimension-order paths on a 4x4x2 torus, then a detour around a dead link.

use torus_fabric::faultinject::parse_fault_spec;
use torus_fabric::sim::{Record, Sim, SimConfig};
use torus_fabric::topology::{Rank, TorusGeometry};

fn main() {
    let g: TorusGeometry = "4x4x2".parse().unwrap();
    println!("{g}: {} tiles, diameter {}, default ttl {}", g.tiles(), g.diameter(), g.default_ttl());

    let (src, dst) = (Rank(0), Rank(27));
    let mut path = vec![src];
    let mut cur = src;
    while let Some(d) = g.dor_hop(cur, dst) {
        cur = g.neighbor(cur, d);
        path.push(cur);
    }
    let shown: Vec<String> = path
        .iter()
        .map(|r| {
            let c = g.rank_to_coords(*r).unwrap();
            format!("{r}({},{},{})", c.x, c.y, c.z)
        })
        .collect();
    println!("dor path {src} -> {dst}: {}", shown.join(" -> "));

    let mut sim = Sim::new(SimConfig::new(g)).unwrap();
    let first = path[0];
    let dir = g.dor_hop(first, dst).unwrap();
    let dead = torus_fabric::topology::LinkId::new(first, dir);
    sim.arm(&parse_fault_spec(&format!("kind=link_kill where={dead} when=at 0")).unwrap()).unwrap();
    sim.register(dst, 0, 64, None).unwrap();
    sim.run_until(100_000).unwrap();
    println!("{dead} avoided by routing: {}", sim.routing_avoids(dead));

    let id = sim.put(src, dst, 0, b"detour".to_vec()).unwrap();
    sim.run_until(200_000).unwrap();
    for line in sim.trace().lines() {
        let r = Record::parse(line).unwrap();
        if r.get_u64("xfer") == Some(id) && r.get("kind") == Some("put") && r.get("ev") == Some("hop") {
            println!(
                "  t={} {}{}",
                r.t,
                r.get("link").unwrap(),
                if r.get("misroute").is_some() { " (misroute)" } else { "" }
            );
        }
    }
    println!("status {:?}", sim.transfer_status(id));
}
