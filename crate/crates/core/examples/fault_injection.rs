//! Probabilistic drop and corrupt probes plus a bandwidth degrade, read from
//! a fault spec, and what they did to a stream of PUTs.

use torus_fabric::faultinject::parse_fault_spec;
use torus_fabric::sim::{Sim, SimConfig};
use torus_fabric::topology::Rank;

const FAULTS: &str = "\
seed=3
kind=link_drop    where=link(0,+x) when=window 0..400000 prob=0.2
kind=link_corrupt where=link(1,+y) when=at 0 prob=0.1
kind=link_degrade where=link(0,+y) when=at 0 factor=4
";

fn main() {
    let spec = parse_fault_spec(FAULTS).unwrap();
    print!("canonical spec:\n{spec}");
    let g = "2x2x2".parse().unwrap();
    spec.validate(&g).unwrap();
    let mut sim = Sim::new(SimConfig::new(g)).unwrap();
    sim.arm(&spec).unwrap();
    for r in [1, 2, 3] {
        sim.register(Rank(r), 0, 1 << 20, None).unwrap();
    }
    let ids: Vec<_> = (0..30)
        .map(|i| sim.put(Rank(0), Rank(1 + i % 3), 8192 * (i as u64 / 3), vec![i as u8; 8192]).unwrap())
        .collect();
    sim.run_until(5_000_000).unwrap();
    let ok = ids.iter().filter(|id| sim.transfer_status(**id).is_some_and(|s| s.to_string() == "complete")).count();
    println!("{ok}/{} transfers complete", ids.len());
    println!("{:?}", sim.stats());
    for s in sim.link_states().filter(|s| s.packets > 0) {
        println!("{:<12} {:?} packets={} busy={}", s.id.to_string(), s.health, s.packets, s.busy_cycles);
    }
}
