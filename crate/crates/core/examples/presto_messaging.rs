//! Two logical processes passing a counter back and forth with blocking
//! send and receive. Each side adds one before passing it on.

use std::task::Poll;

use torus_fabric::sim::{ProcIo, Process, Sim, SimConfig, Wait};
use torus_fabric::topology::Rank;

struct Relay {
    peer: Rank,
    lead: bool,
    step: u32,
    steps: u32,
    value: u32,
}

impl Process for Relay {
    fn resume(&mut self, io: &mut ProcIo<'_>) -> Wait {
        while self.step < self.steps {
            let sending = self.step.is_multiple_of(2) == self.lead;
            if sending {
                match io.presto_send(self.peer, &(self.value + 1).to_le_bytes()) {
                    Poll::Pending => return Wait::Event,
                    Poll::Ready(r) => r.expect("send failed"),
                }
                println!("t={:>6} {} -> {}: {}", io.now(), io.rank(), self.peer, self.value + 1);
            } else {
                match io.presto_recv(self.peer) {
                    Poll::Pending => return Wait::Event,
                    Poll::Ready(m) => self.value = u32::from_le_bytes(m[..4].try_into().unwrap()),
                }
            }
            self.step += 1;
        }
        Wait::Done
    }
}

fn main() {
    let mut sim = Sim::new(SimConfig::new("2x2x2".parse().unwrap())).unwrap();
    let (a, b) = (Rank(0), Rank(6));
    sim.spawn(a, Box::new(Relay { peer: b, lead: true, step: 0, steps: 6, value: 0 })).unwrap();
    sim.spawn(b, Box::new(Relay { peer: a, lead: false, step: 0, steps: 6, value: 0 })).unwrap();
    sim.run_until(5_000_000).unwrap();
    println!("all done: {}", sim.lps_done());
}
