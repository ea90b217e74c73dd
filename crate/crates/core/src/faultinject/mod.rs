//! Declarative fault injection: spec parsing, probe decisions and the armed
//! probe table consulted on the packet path.

mod spec;

pub use spec::{parse_fault_spec, FaultClause, FaultKind, FaultSpec, Target, When};

use std::collections::BTreeMap;

use crate::dnp::Packet;
use crate::engine::{CounterRng, RngStream};
use crate::topology::LinkId;

/// Namespace for fault clause streams.
pub const FAULT_STREAM_TAG: u64 = 0xFA17;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PacketAction {
    Deliver,
    Drop,
    /// Flip this bit (payload, or header for empty payloads).
    Corrupt(usize),
}

/// Decide the fate of one packet under one probe clause.
pub fn apply_probe(packet: &Packet, clause: &FaultClause, stream: &mut RngStream) -> PacketAction {
    let prob = clause.prob.unwrap_or(0.0);
    let u = stream.uniform();
    if u >= prob {
        return PacketAction::Deliver;
    }
    match clause.kind {
        FaultKind::LinkDrop => PacketAction::Drop,
        FaultKind::LinkCorrupt => PacketAction::Corrupt(stream.below(packet.corruptible_bits() as u64) as usize),
        _ => PacketAction::Deliver,
    }
}

struct ArmedProbe {
    clause: usize,
    stream: RngStream,
}

/// Probe clauses installed per directed link.
#[derive(Default)]
pub struct ProbeTable {
    clauses: Vec<FaultClause>,
    by_link: BTreeMap<LinkId, Vec<ArmedProbe>>,
}

impl ProbeTable {
    pub fn new(spec: &FaultSpec, rng: &CounterRng) -> Self {
        let mut by_link: BTreeMap<LinkId, Vec<ArmedProbe>> = BTreeMap::new();
        for (i, c) in spec.clauses.iter().enumerate() {
            if let (true, Some(link)) = (c.kind.is_probe(), c.link()) {
                by_link.entry(link).or_default().push(ArmedProbe {
                    clause: i,
                    stream: rng.stream(CounterRng::key(FAULT_STREAM_TAG, c.stream_key)),
                });
            }
        }
        ProbeTable { clauses: spec.clauses.clone(), by_link }
    }

    pub fn is_empty(&self) -> bool {
        self.by_link.is_empty()
    }

    /// Run the probes armed on `link` that cover cycle `t`. The first clause
    /// that does not deliver decides; returns its index and action.
    pub fn inspect(&mut self, link: LinkId, t: u64, packet: &Packet) -> Option<(usize, PacketAction)> {
        let probes = self.by_link.get_mut(&link)?;
        for p in probes.iter_mut() {
            let clause = &self.clauses[p.clause];
            if !clause.when.covers(t) {
                continue;
            }
            let action = apply_probe(packet, clause, &mut p.stream);
            if action != PacketAction::Deliver {
                return Some((p.clause, action));
            }
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dnp::{PacketHeader, PacketKind};
    use crate::topology::Rank;

    fn pkt() -> Packet {
        let h = PacketHeader { kind: PacketKind::Send, src: Rank(0), dst: Rank(1), seq: 0, transfer_id: 1, addr: 0 };
        Packet::seal(0, h, vec![0u8; 32], 8)
    }

    fn clause(text: &str) -> FaultClause {
        parse_fault_spec(text).unwrap().clauses.remove(0)
    }

    #[test]
    fn zero_and_one_probabilities() {
        let rng = CounterRng::new(1);
        let p = pkt();
        let never = clause("kind=link_drop where=link(0,+x) when=at 0 prob=0");
        let always = clause("kind=link_drop where=link(0,+x) when=at 0 prob=1");
        let mut s = rng.stream(1);
        for _ in 0..1000 {
            assert_eq!(apply_probe(&p, &never, &mut s), PacketAction::Deliver);
            assert_eq!(apply_probe(&p, &always, &mut s), PacketAction::Drop);
        }
    }

    #[test]
    fn drop_fraction_within_five_sigma() {
        // n = 1e5, p = 0.1: sigma = sqrt(n p (1-p)) / n ~= 0.000949; 5 sigma < 0.01.
        let rng = CounterRng::new(77);
        let p = pkt();
        let c = clause("kind=link_drop where=link(0,+x) when=at 0 prob=0.1");
        let mut s = rng.stream(3);
        let n = 100_000;
        let drops = (0..n).filter(|_| apply_probe(&p, &c, &mut s) == PacketAction::Drop).count();
        let frac = drops as f64 / n as f64;
        assert!((frac - 0.1).abs() < 0.01, "fraction {frac}");
    }

    #[test]
    fn corrupt_bit_in_range_and_reproducible() {
        let rng = CounterRng::new(5);
        let p = pkt();
        let c = clause("kind=link_corrupt where=link(0,+x) when=at 0 prob=1");
        let run = || {
            let mut s = rng.stream(9);
            (0..100).map(|_| apply_probe(&p, &c, &mut s)).collect::<Vec<_>>()
        };
        let a = run();
        assert_eq!(a, run());
        for act in a {
            match act {
                PacketAction::Corrupt(b) => assert!(b < 256),
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn probes_are_isolated_per_link_and_window() {
        let spec = parse_fault_spec("kind=link_drop where=link(0,+x) when=window 10..20 prob=1").unwrap();
        let mut t = ProbeTable::new(&spec, &CounterRng::new(0));
        let p = pkt();
        let other = LinkId::new(Rank(0), crate::topology::Direction::XMinus);
        let this = LinkId::new(Rank(0), crate::topology::Direction::XPlus);
        assert_eq!(t.inspect(other, 15, &p), None);
        assert_eq!(t.inspect(this, 9, &p), None);
        assert_eq!(t.inspect(this, 15, &p), Some((0, PacketAction::Drop)));
        assert_eq!(t.inspect(this, 21, &p), None);
    }
}
