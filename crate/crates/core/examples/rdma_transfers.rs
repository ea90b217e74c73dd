//! PUT, GET and SEND between two tiles, with their completion events.

use torus_fabric::sim::{Sim, SimConfig};
use torus_fabric::topology::Rank;

fn main() {
    let mut sim = Sim::new(SimConfig::new("2x2x2".parse().unwrap())).unwrap();
    let (a, b) = (Rank(0), Rank(7));
    sim.register(b, 0x1000, 1 << 16, None).unwrap();

    let put = sim.put(a, b, 0x1000, (0..10_000u32).map(|i| i as u8).collect()).unwrap();
    sim.run_until(1_000_000).unwrap();
    let get = sim.get(a, b, 0x1000 + 100, 16).unwrap();
    let send = sim.send(b, a, b"hello from 7".to_vec()).unwrap();
    sim.run_until(2_000_000).unwrap();

    for r in [a, b] {
        while let Some(ev) = sim.poll_completion(r) {
            println!("{r}: {ev:?}");
        }
    }
    println!("put {put}: {:?}", sim.transfer_status(put));
    println!("get {get}: {:?}", sim.take_get_data(get));
    println!("send {send}: {:?}", sim.recv_ring(a).map(|e| String::from_utf8_lossy(&e.payload).into_owned()));
    println!("{:?}", sim.stats());
}
