//! A spiking network split into partitions that exchange spikes over the
//! fabric each millisecond. The raster does not depend on the partitioning.

use torus_fabric::bench::dpsnn::{run_lockstep, DpsnnConfig};
use torus_fabric::bench::fabric::run_dpsnn_on_fabric;
use torus_fabric::sim::SimConfig;

fn main() {
    let base = DpsnnConfig { neurons: 400, synapses_per_neuron: 40, duration_ms: 200, ..DpsnnConfig::default() };
    let oracle = run_lockstep(&base).unwrap();
    println!("lockstep: {} spikes, {:.2} Hz", oracle.len(), oracle.mean_rate_hz(base.neurons, base.duration_ms));
    for p in [1, 2, 4, 8] {
        let cfg = DpsnnConfig { partitions: p, ..base.clone() };
        let mut sim = SimConfig::new("2x2x2".parse().unwrap());
        sim.trace_packets = false;
        let raster = run_dpsnn_on_fabric(&cfg, sim, 10_000_000_000).unwrap();
        println!("P={p}: {} spikes, identical to lockstep: {}", raster.len(), raster == oracle);
    }
    let text = oracle.to_text();
    let head: Vec<&str> = text.lines().take(5).collect();
    println!("raster head:\n{}", head.join("\n"));
}
