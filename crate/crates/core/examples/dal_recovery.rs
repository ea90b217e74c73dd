//! A host crash under a running pipeline. A plain app with a spare restarts
//! on the spare tile; a critical app keeps going on its surviving replicas.

use torus_fabric::dal::parse_app_spec;
use torus_fabric::faultinject::parse_fault_spec;
use torus_fabric::sim::{Sim, SimConfig};
use torus_fabric::topology::Rank;

const PLAIN: &str = "\
app name=p spares=1
process app=p id=src behavior=source(count=2000)
process app=p id=f behavior=affine(mul=5,add=2) weight=20
process app=p id=out behavior=sink
channel app=p from=src to=f capacity=4
channel app=p from=f to=out capacity=4
";

fn run(spec: &str, kill_tile: Option<Rank>) -> Sim {
    let mut cfg = SimConfig::new("2x2x2".parse().unwrap());
    cfg.trace_packets = false;
    let mut sim = Sim::new(cfg).unwrap();
    sim.deploy_apps(parse_app_spec(spec).unwrap()).unwrap();
    if let Some(tile) = kill_tile {
        sim.arm(&parse_fault_spec(&format!("kind=tile_kill_host where=tile({tile}) when=at 20000")).unwrap()).unwrap();
    }
    sim.run_until(20_000_000).unwrap();
    sim
}

/// Placement is deterministic, so a healthy run shows where a process will land.
fn tile_of(spec: &str, pid: &str) -> (Sim, Rank) {
    let sim = run(spec, None);
    let tile = sim.app_status("p").unwrap().mapping.unwrap().tile_of(pid).unwrap();
    println!("{pid} runs on tile {tile}; killing that host at cycle 20000");
    (sim, tile)
}

fn main() {
    let (healthy, tile) = tile_of(PLAIN, "out");
    let want = healthy.app_output("p", "out").unwrap();
    let sim = run(PLAIN, Some(tile));
    let st = sim.app_status("p").unwrap();
    println!(
        "plain: {} after {} restart(s), output identical: {}",
        st.state,
        st.restarts,
        sim.app_output("p", "out").unwrap() == want
    );

    let critical = PLAIN.replace("spares=1", "critical=true");
    let (_, tile) = tile_of(&critical, "f#1");
    let sim = run(&critical, Some(tile));
    let st = sim.app_status("p").unwrap();
    println!(
        "critical: {} with {} restart(s), lost replicas {:?}, output identical: {}, alarms {:?}",
        st.state,
        st.restarts,
        st.lost_replicas,
        sim.app_output("p", "out").unwrap() == want,
        sim.alarms()
    );
}
