//! Single Izhikevich neurons of both kinds under constant drive, and the
//! STDP window for one synapse.

use torus_fabric::bench::{
    izhikevich_step, stdp_update, IzhParams, NeuronKind, NeuronState, SpikeEvent, StdpParams, Synapse,
};

fn main() {
    for (name, kind, p) in [
        ("regular spiking", NeuronKind::Excitatory, IzhParams::RS),
        ("fast spiking", NeuronKind::Inhibitory, IzhParams::FS),
    ] {
        let mut n = NeuronState::at_rest(0, kind, p);
        let spikes: Vec<usize> = (0..200).filter(|_| izhikevich_step(&mut n, 10.0).unwrap()).collect();
        println!("{name}: {} spikes in 200 ms, first at {:?}", spikes.len(), &spikes[..spikes.len().min(5)]);
    }

    let sp = StdpParams::default();
    println!("dt   dw");
    for dt in [-40i32, -20, -5, -1, 0, 1, 5, 20, 40] {
        let mut s = Synapse {
            pre_id: 0,
            post_id: 1,
            weight: 5.0,
            delay: 1,
            last_arrival: None,
            last_post_spike: None,
            plastic: true,
        };
        let (pre, post) = if dt >= 0 { (100, 100 + dt as u32) } else { (100 + (-dt) as u32, 100) };
        let mut evs = [(pre, SpikeEvent::PreArrival(pre)), (post, SpikeEvent::Post(post))];
        evs.sort_by_key(|(t, e)| (*t, matches!(e, SpikeEvent::Post(_))));
        for (_, e) in evs {
            stdp_update(&mut s, e, &sp);
        }
        println!("{dt:>3}  {:+.4}", s.weight - 5.0);
    }
}
