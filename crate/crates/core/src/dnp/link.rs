use crate::topology::LinkId;

/// 34 Gbps at 1 cycle = 1 ns.
pub const DEFAULT_BANDWIDTH_BITS_PER_CYCLE: u64 = 34;
pub const DEFAULT_HOP_LATENCY: u64 = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LinkParams {
    pub bandwidth_bits_per_cycle: u64,
    pub hop_latency: u64,
}

impl Default for LinkParams {
    fn default() -> Self {
        LinkParams { bandwidth_bits_per_cycle: DEFAULT_BANDWIDTH_BITS_PER_CYCLE, hop_latency: DEFAULT_HOP_LATENCY }
    }
}

impl LinkParams {
    /// Cycles to clock `wire_bytes` onto a link slowed down by `factor`.
    pub fn serialization(&self, wire_bytes: usize, factor: u32) -> u64 {
        let bits = wire_bytes as u64 * 8 * factor.max(1) as u64;
        bits.div_ceil(self.bandwidth_bits_per_cycle)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LinkHealth {
    Up,
    Down,
    Degraded(u32),
}

impl LinkHealth {
    pub fn factor(self) -> u32 {
        match self {
            LinkHealth::Degraded(f) => f.max(1),
            _ => 1,
        }
    }

    pub fn carries(self) -> bool {
        self != LinkHealth::Down
    }
}

/// Physical state and counters of one directed link.
#[derive(Clone, Debug)]
pub struct LinkState {
    pub id: LinkId,
    pub health: LinkHealth,
    pub busy_until: u64,
    pub packets: u64,
    pub wire_bytes: u64,
    pub payload_bytes: u64,
    pub busy_cycles: u64,
}

impl LinkState {
    pub fn new(id: LinkId) -> Self {
        LinkState {
            id,
            health: LinkHealth::Up,
            busy_until: 0,
            packets: 0,
            wire_bytes: 0,
            payload_bytes: 0,
            busy_cycles: 0,
        }
    }

    /// Reserve the link for one packet ready at `now`. Returns
    /// `(departure, arrival)` at the far end.
    pub fn reserve(&mut self, now: u64, wire: usize, payload: usize, p: &LinkParams) -> (u64, u64) {
        let ser = p.serialization(wire, self.health.factor());
        let depart = now.max(self.busy_until);
        self.busy_until = depart + ser;
        self.packets += 1;
        self.wire_bytes += wire as u64;
        self.payload_bytes += payload as u64;
        self.busy_cycles += ser;
        (depart, depart + ser + p.hop_latency)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{Direction, Rank};

    #[test]
    fn serialization_rounds_up() {
        let p = LinkParams::default();
        assert_eq!(p.serialization(4128, 1), 972);
        assert_eq!(p.serialization(1, 1), 1);
        assert_eq!(p.serialization(4128, 4), 3886);
    }

    #[test]
    fn back_to_back_packets_queue() {
        let p = LinkParams::default();
        let mut l = LinkState::new(LinkId::new(Rank(0), Direction::XPlus));
        assert_eq!(l.reserve(0, 4128, 4096, &p), (0, 1072));
        assert_eq!(l.reserve(0, 4128, 4096, &p), (972, 2044));
        assert_eq!(l.reserve(5000, 4128, 4096, &p), (5000, 6072));
    }
}
