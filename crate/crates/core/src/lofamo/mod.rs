//! LO|FA|MO: mutual host/DNP watchdogs, link fault management, diagnostic
//! messages and the hierarchical fault table.
//!
//! This module holds the protocol state; the simulator drives it with
//! periodic events and carries its messages.

mod ldm;
mod table;

pub use ldm::{decode_service, encode_service, DiagnosticMessage, ServiceBody};
pub use table::{Entity, FaultTable, LinkRecord, LinkStatus, TileRecord};

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::topology::{LinkId, Rank, TorusGeometry};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LofamoError {
    #[error("heartbeat period {heartbeat} must be below the watchdog period {t_wd}")]
    HeartbeatTooSlow { heartbeat: u64, t_wd: u64 },
    #[error("{0} must be positive")]
    Zero(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LofamoParams {
    pub heartbeat_period: u64,
    pub t_wd: u64,
    pub t_check: u64,
    pub keepalive_period: u64,
    pub threshold: u32,
    pub controller_keepalive: u64,
    pub host_net_latency: u64,
    /// One-way latency of the dedicated service network.
    pub service_net_latency: u64,
}

impl Default for LofamoParams {
    fn default() -> Self {
        LofamoParams {
            heartbeat_period: 2000,
            t_wd: 10_000,
            t_check: 10_000,
            keepalive_period: 5000,
            threshold: 3,
            controller_keepalive: 5000,
            host_net_latency: 1000,
            service_net_latency: 300,
        }
    }
}

impl LofamoParams {
    pub fn validate(&self) -> Result<(), LofamoError> {
        let fields = [
            ("heartbeat_period", self.heartbeat_period),
            ("t_wd", self.t_wd),
            ("t_check", self.t_check),
            ("keepalive_period", self.keepalive_period),
            ("threshold", self.threshold as u64),
            ("controller_keepalive", self.controller_keepalive),
            ("host_net_latency", self.host_net_latency),
            ("service_net_latency", self.service_net_latency),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(LofamoError::Zero(name));
        }
        if self.heartbeat_period >= self.t_wd {
            return Err(LofamoError::HeartbeatTooSlow { heartbeat: self.heartbeat_period, t_wd: self.t_wd });
        }
        Ok(())
    }

    /// Worst case from a host or DNP kill to the local suspicion event.
    pub fn watchdog_bound(&self) -> u64 {
        self.t_wd + self.t_check + self.heartbeat_period
    }

    /// Worst case from a link kill to both endpoint LINK_FAULT events: the
    /// kill can land just after a tick, then K bad ticks follow.
    pub fn link_bound(&self) -> u64 {
        (self.threshold as u64 + 1) * self.keepalive_period
    }

    /// Worst case from a full tile death to its controller noticing.
    pub fn silence_bound(&self) -> u64 {
        3 * self.controller_keepalive
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Writer {
    Host,
    Dnp,
}

impl Writer {
    pub fn other(self) -> Writer {
        match self {
            Writer::Host => Writer::Dnp,
            Writer::Dnp => Writer::Host,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Writer::Host => "host",
            Writer::Dnp => "dnp",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WatchdogRegister {
    pub last_write: u64,
    pub writer: Writer,
    pub t_wd: u64,
}

impl WatchdogRegister {
    pub fn new(writer: Writer, t_wd: u64) -> Self {
        WatchdogRegister { last_write: 0, writer, t_wd }
    }

    pub fn write(&mut self, t: u64) {
        self.last_write = t;
    }

    pub fn expired(&self, t: u64) -> bool {
        t.saturating_sub(self.last_write) > self.t_wd
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LocalFaultKind {
    HostFaultSuspected,
    DnpFaultSuspected,
    /// Host and DNP both silent, inferred by the tile's controller.
    TileSilent,
    LinkFault(LinkId),
    LinkDegraded(LinkId, u32),
    LinkRestored(LinkId),
    RoutingFailure(Rank),
    CriticalEvent(u16),
}

impl LocalFaultKind {
    pub fn name(&self) -> &'static str {
        match self {
            LocalFaultKind::HostFaultSuspected => "host_fault_suspected",
            LocalFaultKind::DnpFaultSuspected => "dnp_fault_suspected",
            LocalFaultKind::TileSilent => "tile_silent",
            LocalFaultKind::LinkFault(_) => "link_fault",
            LocalFaultKind::LinkDegraded(..) => "link_degraded",
            LocalFaultKind::LinkRestored(_) => "link_restored",
            LocalFaultKind::RoutingFailure(_) => "routing_failure",
            LocalFaultKind::CriticalEvent(_) => "critical_event",
        }
    }

    /// Deduplication key: kind plus target, ignoring parameters.
    fn dedup_key(&self) -> (u8, u64) {
        match *self {
            LocalFaultKind::HostFaultSuspected => (0, 0),
            LocalFaultKind::DnpFaultSuspected => (1, 0),
            LocalFaultKind::TileSilent => (2, 0),
            LocalFaultKind::LinkFault(l) => (3, link_key(l)),
            LocalFaultKind::LinkDegraded(l, _) => (4, link_key(l)),
            LocalFaultKind::LinkRestored(l) => (5, link_key(l)),
            LocalFaultKind::RoutingFailure(r) => (6, r.0 as u64),
            LocalFaultKind::CriticalEvent(c) => (7, c as u64),
        }
    }
}

fn link_key(l: LinkId) -> u64 {
    ((l.src.0 as u64) << 8) | l.dir.index() as u64
}

impl fmt::Display for LocalFaultKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LocalFaultKind::LinkFault(l) | LocalFaultKind::LinkRestored(l) => write!(f, "{} {l}", self.name()),
            LocalFaultKind::LinkDegraded(l, k) => write!(f, "{} {l} factor={k}", self.name()),
            LocalFaultKind::RoutingFailure(r) => write!(f, "{} dst={}", self.name(), r.0),
            LocalFaultKind::CriticalEvent(c) => write!(f, "{} code={c}", self.name()),
            _ => f.write_str(self.name()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LocalFaultEvent {
    pub at: u64,
    pub tile: Rank,
    pub kind: LocalFaultKind,
    pub evidence: String,
}

/// Suppresses repeated events until the fault they describe clears.
#[derive(Clone, Debug, Default)]
pub struct EventDedup {
    active: BTreeSet<(u32, u8, u64)>,
}

impl EventDedup {
    /// True the first time `(tile, kind)` is raised in the current epoch.
    pub fn admit(&mut self, tile: Rank, kind: &LocalFaultKind) -> bool {
        let (k, t) = kind.dedup_key();
        if let LocalFaultKind::LinkRestored(l) = kind {
            self.active.remove(&(tile.0, 3, link_key(*l)));
            self.active.remove(&(tile.0, 4, link_key(*l)));
            return true;
        }
        self.active.insert((tile.0, k, t))
    }

    pub fn clear(&mut self, tile: Rank, kind: &LocalFaultKind) {
        let (k, t) = kind.dedup_key();
        self.active.remove(&(tile.0, k, t));
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Observation {
    Good,
    Bad,
    Degraded(u32),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LinkVerdict {
    Fault,
    Degraded(u32),
    Restored,
}

/// LiFaMa hysteresis for one inbound link.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LinkMonitor {
    bad_run: u32,
    good_run: u32,
    pub down: bool,
    pub degraded: Option<u32>,
}

impl LinkMonitor {
    pub fn observe(&mut self, obs: Observation, k: u32) -> Option<LinkVerdict> {
        match obs {
            Observation::Bad => {
                self.good_run = 0;
                self.bad_run += 1;
                if !self.down && self.bad_run >= k {
                    self.down = true;
                    return Some(LinkVerdict::Fault);
                }
                None
            }
            Observation::Good => {
                self.bad_run = 0;
                self.good_run += 1;
                if (self.down || self.degraded.is_some()) && self.good_run >= k {
                    self.down = false;
                    self.degraded = None;
                    return Some(LinkVerdict::Restored);
                }
                None
            }
            Observation::Degraded(f) => {
                self.bad_run = 0;
                self.good_run = 0;
                if self.down {
                    return None;
                }
                if self.degraded != Some(f) {
                    self.degraded = Some(f);
                    return Some(LinkVerdict::Degraded(f));
                }
                None
            }
        }
    }
}

/// Tile/controller/master tree: one controller per Z-plane, the lowest rank
/// in the plane; the master is the controller of rank 0.
#[derive(Clone, Debug)]
pub struct Hierarchy {
    plane: u32,
    tiles: u32,
}

impl Hierarchy {
    pub fn new(geom: &TorusGeometry) -> Self {
        let [x, y, _] = geom.dims();
        Hierarchy { plane: x * y, tiles: geom.tiles() }
    }

    pub fn controller_of(&self, tile: Rank) -> Rank {
        Rank(tile.0 / self.plane * self.plane)
    }

    pub fn master(&self) -> Rank {
        Rank(0)
    }

    pub fn is_controller(&self, r: Rank) -> bool {
        r.0.is_multiple_of(self.plane)
    }

    pub fn controllers(&self) -> impl Iterator<Item = Rank> + '_ {
        (0..self.tiles).step_by(self.plane as usize).map(Rank)
    }

    pub fn members(&self, controller: Rank) -> impl Iterator<Item = Rank> {
        let c = controller.0;
        (c..c + self.plane).map(Rank)
    }

    /// Next hop up the tree, `None` at the master.
    pub fn parent(&self, node: Rank) -> Option<Rank> {
        let c = self.controller_of(node);
        if c != node {
            Some(c)
        } else if node != self.master() {
            Some(self.master())
        } else {
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::Direction;

    #[test]
    fn watchdog_hand_trace() {
        // beats every 2000; kill at 5000 so the last write is 4000
        let mut w = WatchdogRegister::new(Writer::Host, 10_000);
        w.write(4000);
        assert!(!w.expired(10_000));
        assert!(w.expired(20_000));
        w.write(8000);
        assert!(!w.expired(10_000));
        assert!(!w.expired(18_000));
    }

    #[test]
    fn lifama_threshold_hysteresis() {
        let mut m = LinkMonitor::default();
        assert_eq!(m.observe(Observation::Bad, 3), None);
        assert_eq!(m.observe(Observation::Bad, 3), None);
        for _ in 0..10 {
            assert_eq!(m.observe(Observation::Good, 3), None);
        }
        for _ in 0..2 {
            m.observe(Observation::Bad, 3);
        }
        assert_eq!(m.observe(Observation::Bad, 3), Some(LinkVerdict::Fault));
        assert_eq!(m.observe(Observation::Bad, 3), None);
        m.observe(Observation::Good, 3);
        m.observe(Observation::Good, 3);
        assert_eq!(m.observe(Observation::Good, 3), Some(LinkVerdict::Restored));
        assert_eq!(m.observe(Observation::Degraded(4), 3), Some(LinkVerdict::Degraded(4)));
        assert_eq!(m.observe(Observation::Degraded(4), 3), None);
    }

    #[test]
    fn dedup_until_restored() {
        let mut d = EventDedup::default();
        let l = LinkId::new(Rank(1), Direction::XPlus);
        assert!(d.admit(Rank(0), &LocalFaultKind::LinkFault(l)));
        assert!(!d.admit(Rank(0), &LocalFaultKind::LinkFault(l)));
        assert!(d.admit(Rank(1), &LocalFaultKind::LinkFault(l)));
        assert!(d.admit(Rank(0), &LocalFaultKind::LinkRestored(l)));
        assert!(d.admit(Rank(0), &LocalFaultKind::LinkFault(l)));
    }

    #[test]
    fn hierarchy_by_plane() {
        let g: TorusGeometry = "4x2x2".parse().unwrap();
        let h = Hierarchy::new(&g);
        assert_eq!(h.controller_of(Rank(5)), Rank(0));
        assert_eq!(h.controller_of(Rank(9)), Rank(8));
        assert_eq!(h.controllers().collect::<Vec<_>>(), vec![Rank(0), Rank(8)]);
        assert_eq!(h.parent(Rank(9)), Some(Rank(8)));
        assert_eq!(h.parent(Rank(8)), Some(Rank(0)));
        assert_eq!(h.parent(Rank(0)), None);
    }

    #[test]
    fn params_validation() {
        assert!(LofamoParams::default().validate().is_ok());
        let p = LofamoParams { heartbeat_period: 10_000, ..LofamoParams::default() };
        assert!(p.validate().is_err());
    }
}
