//! Local fault monitors reporting a host crash and a dead link up to the
//! master's table, with detection latency against the analytic bounds.

use torus_fabric::faultinject::parse_fault_spec;
use torus_fabric::sim::{Category, Record, Sim, SimConfig};

fn main() {
    let mut cfg = SimConfig::new("4x2x2".parse().unwrap());
    cfg.trace_packets = false;
    let p = cfg.lofamo;
    let mut sim = Sim::new(cfg).unwrap();
    let spec = "kind=tile_kill_host where=tile(5) when=at 100000\n\
                kind=link_kill where=link(10,-y) when=at 300000\n";
    sim.arm(&parse_fault_spec(spec).unwrap()).unwrap();
    sim.run_until(1_000_000).unwrap();

    let prop = sim.propagation_bound_per_level();
    println!("watchdog bound {} + 2x{prop}, link bound {} + 2x{prop}", p.watchdog_bound(), p.link_bound());
    for line in sim.trace().lines() {
        let r = Record::parse(line).unwrap();
        if r.cat == Category::Fault && r.get("level") == Some("master") || r.cat == Category::Injector {
            println!("{line}");
        }
    }
    for e in sim.master_table().flagged_entities(sim.geometry()) {
        println!("flagged: {e}");
    }
}
