//! The 4D halo-exchange stencil decomposed over a 2x2x2 torus, checked
//! against the single-process reference.

use torus_fabric::bench::fabric::run_stencil_on_fabric;
use torus_fabric::bench::stencil::{checksum, reference, StencilConfig};
use torus_fabric::sim::{ServiceNet, SimConfig};

fn main() {
    let cfg = StencilConfig { dims: [8, 8, 8, 8], blocks: [2, 2, 2, 1], iterations: 10, seed: 1 };
    let mut sim = SimConfig::new("2x2x2".parse().unwrap());
    sim.service_net = ServiceNet::Dedicated;
    let got = run_stencil_on_fabric(&cfg, sim, 100_000_000).unwrap();
    let want = checksum(&reference(&cfg).unwrap());
    println!("fabric    {}", got.checksum);
    println!("reference {want}");
    println!("finished at cycle {}", got.finished_at);
    for (l, bytes) in got.link_payload.iter().filter(|(_, b)| **b > 0).take(6) {
        println!("  {l} carried {bytes} payload bytes");
    }
}
