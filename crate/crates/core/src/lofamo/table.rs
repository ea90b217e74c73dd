use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use super::{LocalFaultEvent, LocalFaultKind};
use crate::topology::{LinkId, Rank, TorusGeometry};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum LinkStatus {
    Up,
    Down,
    Degraded(u32),
}

impl fmt::Display for LinkStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LinkStatus::Up => f.write_str("UP"),
            LinkStatus::Down => f.write_str("DOWN"),
            LinkStatus::Degraded(k) => write!(f, "DEGRADED({k})"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TileRecord {
    pub host_down: bool,
    pub dnp_down: bool,
    pub critical: BTreeSet<u16>,
    /// Time of the event that last changed the record.
    pub event_at: u64,
    /// Local time the record was last changed.
    pub updated: u64,
}

impl TileRecord {
    pub fn ok(&self) -> bool {
        !self.host_down && !self.dnp_down
    }

    pub fn health(&self) -> &'static str {
        match (self.host_down, self.dnp_down) {
            (false, false) => "OK",
            (true, false) => "HOST_DOWN",
            (false, true) => "DNP_DOWN",
            (true, true) => "HOST_DOWN+DNP_DOWN",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LinkRecord {
    pub status: LinkStatus,
    pub event_at: u64,
    pub updated: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Entity {
    Tile { rank: Rank, host_down: bool, dnp_down: bool },
    Link { link: LinkId, status: LinkStatus },
    Critical { rank: Rank, code: u16 },
}

impl fmt::Display for Entity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Entity::Tile { rank, host_down, dnp_down } => {
                let rec = TileRecord { host_down: *host_down, dnp_down: *dnp_down, ..Default::default() };
                write!(f, "tile({}) {}", rank.0, rec.health())
            }
            Entity::Link { link, status } => write!(f, "{link} {status}"),
            Entity::Critical { rank, code } => write!(f, "tile({}) CRITICAL({code})", rank.0),
        }
    }
}

/// Fault awareness of one controller. Links are keyed by their undirected
/// identity, so reports from both endpoints land on one entry.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FaultTable {
    tiles: BTreeMap<Rank, TileRecord>,
    links: BTreeMap<LinkId, LinkRecord>,
    routing_failures: BTreeSet<(Rank, Rank)>,
}

impl FaultTable {
    pub fn tile(&self, r: Rank) -> TileRecord {
        self.tiles.get(&r).cloned().unwrap_or_default()
    }

    pub fn tile_ok(&self, r: Rank) -> bool {
        self.tiles.get(&r).is_none_or(|t| t.ok())
    }

    pub fn link(&self, geom: &TorusGeometry, l: LinkId) -> LinkStatus {
        self.links.get(&geom.undirected(l)).map_or(LinkStatus::Up, |r| r.status)
    }

    pub fn link_record(&self, geom: &TorusGeometry, l: LinkId) -> Option<LinkRecord> {
        self.links.get(&geom.undirected(l)).copied()
    }

    pub fn tiles(&self) -> impl Iterator<Item = (&Rank, &TileRecord)> {
        self.tiles.iter()
    }

    pub fn links(&self) -> impl Iterator<Item = (&LinkId, &LinkRecord)> {
        self.links.iter()
    }

    /// Fold one event in; an entry only moves forward in event time.
    /// Returns true if the table changed.
    pub fn merge(&mut self, geom: &TorusGeometry, ev: &LocalFaultEvent, now: u64) -> bool {
        let link_update = |links: &mut BTreeMap<LinkId, LinkRecord>, l: LinkId, status: LinkStatus| {
            let key = geom.undirected(l);
            match links.get(&key) {
                Some(r) if r.event_at > ev.at || r.status == status => false,
                None if status == LinkStatus::Up => false,
                _ => {
                    links.insert(key, LinkRecord { status, event_at: ev.at, updated: now });
                    true
                }
            }
        };
        match ev.kind {
            LocalFaultKind::LinkFault(l) => link_update(&mut self.links, l, LinkStatus::Down),
            LocalFaultKind::LinkDegraded(l, k) => link_update(&mut self.links, l, LinkStatus::Degraded(k)),
            LocalFaultKind::LinkRestored(l) => link_update(&mut self.links, l, LinkStatus::Up),
            LocalFaultKind::RoutingFailure(dst) => self.routing_failures.insert((ev.tile, dst)),
            _ => {
                let rec = self.tiles.entry(ev.tile).or_default();
                let before = rec.clone();
                match ev.kind {
                    LocalFaultKind::HostFaultSuspected => rec.host_down = true,
                    LocalFaultKind::DnpFaultSuspected => rec.dnp_down = true,
                    LocalFaultKind::TileSilent => {
                        rec.host_down = true;
                        rec.dnp_down = true;
                    }
                    LocalFaultKind::CriticalEvent(c) => {
                        rec.critical.insert(c);
                    }
                    _ => unreachable!(),
                }
                if *rec == before {
                    return false;
                }
                rec.event_at = rec.event_at.max(ev.at);
                rec.updated = now;
                true
            }
        }
    }

    /// Faulty entities, with link faults adjacent to a dead DNP folded into
    /// that tile.
    pub fn flagged_entities(&self, geom: &TorusGeometry) -> Vec<Entity> {
        let mut out = Vec::new();
        for (r, t) in &self.tiles {
            if !t.ok() {
                out.push(Entity::Tile { rank: *r, host_down: t.host_down, dnp_down: t.dnp_down });
            }
            for c in &t.critical {
                out.push(Entity::Critical { rank: *r, code: *c });
            }
        }
        let dnp_dead = |r: Rank| self.tiles.get(&r).is_some_and(|t| t.dnp_down);
        for (l, rec) in &self.links {
            if rec.status == LinkStatus::Up {
                continue;
            }
            let far = geom.neighbor(l.src, l.dir);
            if dnp_dead(l.src) || dnp_dead(far) {
                continue;
            }
            out.push(Entity::Link { link: *l, status: rec.status });
        }
        out.sort();
        out
    }

    /// Structured text dump, one entry per line.
    pub fn report(&self, geom: &TorusGeometry) -> String {
        let mut s = String::new();
        for r in geom.ranks() {
            let t = self.tile(r);
            let crit: Vec<String> = t.critical.iter().map(|c| c.to_string()).collect();
            let _ = write!(s, "tile rank={} health={} updated={}", r.0, t.health(), t.updated);
            if !crit.is_empty() {
                let _ = write!(s, " critical={}", crit.join(","));
            }
            s.push('\n');
        }
        for l in geom.undirected_links() {
            match self.links.get(&l) {
                Some(rec) => {
                    let _ = writeln!(s, "link id={l} status={} updated={}", rec.status, rec.updated);
                }
                None => {
                    let _ = writeln!(s, "link id={l} status=UP updated=0");
                }
            }
        }
        for (a, b) in &self.routing_failures {
            let _ = writeln!(s, "routing_failure src={} dst={}", a.0, b.0);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::Direction;

    fn ev(at: u64, tile: u32, kind: LocalFaultKind) -> LocalFaultEvent {
        LocalFaultEvent { at, tile: Rank(tile), kind, evidence: String::new() }
    }

    #[test]
    fn both_endpoints_collapse_to_one_entry() {
        let g: TorusGeometry = "2x2x2".parse().unwrap();
        let mut t = FaultTable::default();
        let l = LinkId::new(Rank(0), Direction::XPlus);
        assert!(t.merge(&g, &ev(10, 1, LocalFaultKind::LinkFault(g.reverse(l))), 12));
        assert!(!t.merge(&g, &ev(11, 0, LocalFaultKind::LinkFault(l)), 13));
        assert_eq!(t.flagged_entities(&g), vec![Entity::Link { link: g.undirected(l), status: LinkStatus::Down }]);
        assert_eq!(t.link(&g, g.reverse(l)), LinkStatus::Down);
    }

    #[test]
    fn older_event_does_not_overwrite() {
        let g: TorusGeometry = "2x2x2".parse().unwrap();
        let mut t = FaultTable::default();
        let l = LinkId::new(Rank(0), Direction::YPlus);
        t.merge(&g, &ev(50, 0, LocalFaultKind::LinkRestored(l)), 50);
        assert!(t.merge(&g, &ev(60, 0, LocalFaultKind::LinkFault(l)), 61));
        assert!(!t.merge(&g, &ev(55, 0, LocalFaultKind::LinkRestored(l)), 62));
        assert_eq!(t.link(&g, l), LinkStatus::Down);
    }

    #[test]
    fn dead_dnp_absorbs_its_links() {
        let g: TorusGeometry = "2x2x2".parse().unwrap();
        let mut t = FaultTable::default();
        t.merge(&g, &ev(5, 3, LocalFaultKind::DnpFaultSuspected), 6);
        for d in Direction::ALL {
            let inbound = g.reverse(LinkId::new(Rank(3), d));
            t.merge(&g, &ev(7, inbound.src.0, LocalFaultKind::LinkFault(inbound)), 8);
        }
        assert_eq!(t.flagged_entities(&g), vec![Entity::Tile { rank: Rank(3), host_down: false, dnp_down: true }]);
        assert!(t.report(&g).contains("tile rank=3 health=DNP_DOWN updated=6"));
    }
}
