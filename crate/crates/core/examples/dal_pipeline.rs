//! Two process networks under a scenario state machine: the filter pipeline
//! runs from the start, the second app is switched on and later stopped by
//! timed triggers.

use torus_fabric::dal::{item_u64, parse_app_spec};
use torus_fabric::sim::{Category, Record, Sim, SimConfig};

const SPEC: &str = "\
app name=filter
process app=filter id=src behavior=source(count=500) weight=2
process app=filter id=scale behavior=affine(mul=3,add=1) weight=8
process app=filter id=table behavior=lookup(table=10:20:30:40)
process app=filter id=out behavior=sink
channel app=filter from=src to=scale capacity=4
channel app=filter from=scale to=table capacity=4
channel app=filter from=table to=out

app name=tick
process app=tick id=src behavior=source(count=100000000)
process app=tick id=out behavior=sink
channel app=tick from=src to=out capacity=2

state name=base apps=filter
state name=busy apps=filter,tick
initial state=base
transition from=base event=start(tick) to=busy
transition from=busy event=stop(tick) to=base
trigger at=50000 event=start(tick)
trigger at=400000 event=stop(tick)
";

fn main() {
    let spec = parse_app_spec(SPEC).unwrap();
    let mut cfg = SimConfig::new("2x2x2".parse().unwrap());
    cfg.trace_packets = false;
    let mut sim = Sim::new(cfg).unwrap();
    sim.deploy_apps(spec).unwrap();
    sim.run_until(3_000_000).unwrap();

    for line in sim.trace().lines() {
        let r = Record::parse(line).unwrap();
        if r.cat == Category::App && matches!(r.get("ev"), Some("fsm" | "state" | "mapped")) {
            println!("{line}");
        }
    }
    let out: Vec<u64> = sim.app_output("filter", "out").unwrap().iter().map(|i| item_u64(i)).collect();
    println!("filter produced {} items, first {:?}", out.len(), &out[..8]);
    println!("tick delivered {} items before it was stopped", sim.app_output("tick", "out").unwrap().len());
    println!("final scenario state {:?}", sim.fsm_state());
}
