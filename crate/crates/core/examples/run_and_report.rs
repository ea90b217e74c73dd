//! A run configuration executed in memory, then summarized the way
//! `tfsim report` does.

use std::path::Path;

use torus_fabric::cli::config::load_faults;
use torus_fabric::cli::{execute, report, RunConfig};

const CONFIG: &str = r#"
topology = "4x2x2"
until = 3000000

[stencil]
iterations = 4
"#;

fn main() {
    let mut plan = RunConfig::parse(CONFIG).unwrap().plan(Path::new(".")).unwrap();
    plan.faults = Some(load_faults("kind=link_kill where=link(3,+y) when=at 200000\n", &plan.sim.geometry).unwrap());
    let run = execute(&plan).unwrap();
    println!("exit {:?}, trace {}", run.exit, run.sim.trace_hash());
    println!("stencil checksum {:?}", run.stencil);
    let rep = report::analyze(&run.sim.trace().lines().join("\n")).unwrap();
    print!("{}", rep.summary());
}
