//! LO|FA|MO agents: mutual watchdogs, LiFaMa link ticks, keepalives, and
//! diagnostic message propagation up the hierarchy.

use super::{in_link, link_index, Action, Category, ServiceNet, Sim};
use crate::dnp::LinkHealth;
use crate::engine::{EventClass, SimTime};
use crate::lofamo::{
    DiagnosticMessage, LinkVerdict, LocalFaultEvent, LocalFaultKind, Observation, ServiceBody, Writer,
};
use crate::topology::{Direction, Rank};
use crate::trace;

impl Sim {
    pub(super) fn start_lofamo(&mut self) {
        let p = self.cfg.lofamo;
        let at = |t: u64| SimTime(t);
        for r in self.geom.ranks().collect::<Vec<_>>() {
            for w in [Writer::Host, Writer::Dnp] {
                self.sched.schedule(at(0), EventClass::Protocol, Action::Heartbeat { tile: r, writer: w }).ok();
                self.sched.schedule(at(p.t_check), EventClass::Protocol, Action::Check { tile: r, checker: w }).ok();
            }
            self.sched.schedule(at(p.keepalive_period), EventClass::Protocol, Action::LifamaTick { tile: r }).ok();
            if self.hier.parent(r).is_some() {
                self.sched.schedule(at(0), EventClass::Protocol, Action::Keepalive { tile: r }).ok();
            }
            if self.children(r).next().is_some() {
                self.sched
                    .schedule(at(p.controller_keepalive), EventClass::Protocol, Action::SilenceCheck { node: r })
                    .ok();
            }
        }
    }

    /// Nodes whose keepalives and reports go to `node`.
    pub(crate) fn children(&self, node: Rank) -> impl Iterator<Item = Rank> + '_ {
        self.geom.ranks().filter(move |r| self.hier.parent(*r) == Some(node))
    }

    pub(super) fn on_heartbeat(&mut self, tile: Rank, writer: Writer) {
        let now = self.now();
        let t = &mut self.tiles[tile.index()];
        if !t.alive(writer) {
            return;
        }
        match writer {
            Writer::Host => t.hwr.write(now),
            Writer::Dnp => t.dwr.write(now),
        }
        self.sched.schedule_in(
            self.cfg.lofamo.heartbeat_period,
            EventClass::Protocol,
            Action::Heartbeat { tile, writer },
        );
    }

    /// The DNP fault manager checks the host register and vice versa.
    pub(super) fn on_check(&mut self, tile: Rank, checker: Writer) {
        let now = self.now();
        let t = &self.tiles[tile.index()];
        if !t.alive(checker) {
            return;
        }
        let (reg, kind) = match checker {
            Writer::Dnp => (t.hwr, LocalFaultKind::HostFaultSuspected),
            Writer::Host => (t.dwr, LocalFaultKind::DnpFaultSuspected),
        };
        if reg.expired(now) {
            let evidence = format!("{}wr_last={}", &reg.writer.name()[..1], reg.last_write);
            self.raise(tile, tile, kind, evidence, checker);
        }
        self.sched.schedule_in(self.cfg.lofamo.t_check, EventClass::Protocol, Action::Check { tile, checker });
    }

    pub(super) fn on_lifama_tick(&mut self, tile: Rank) {
        if !self.tiles[tile.index()].dnp_alive {
            return;
        }
        let k = self.cfg.lofamo.threshold;
        for d in Direction::ALL {
            let l = in_link(&self.geom, tile, d);
            if self.geom.is_self_link(l) {
                continue;
            }
            let health = self.links[link_index(l)].health;
            let upstream_dead = !self.tiles[l.src.index()].dnp_alive;
            let crc = std::mem::take(&mut self.tiles[tile.index()].crc_errors[d.index()]);
            let obs = match health {
                LinkHealth::Down => Observation::Bad,
                _ if upstream_dead || crc > 0 => Observation::Bad,
                LinkHealth::Degraded(f) => Observation::Degraded(f),
                LinkHealth::Up => Observation::Good,
            };
            let verdict = self.tiles[tile.index()].monitors[d.index()].observe(obs, k);
            let evidence = match (obs, crc) {
                (_, c) if c > 0 => format!("crc_errors={c}"),
                (Observation::Bad, _) if upstream_dead => "upstream_silent".to_string(),
                (Observation::Bad, _) => "keepalive_missed".to_string(),
                _ => "keepalive".to_string(),
            };
            match verdict {
                Some(LinkVerdict::Fault) => self.raise(tile, tile, LocalFaultKind::LinkFault(l), evidence, Writer::Dnp),
                Some(LinkVerdict::Degraded(f)) => {
                    self.raise(tile, tile, LocalFaultKind::LinkDegraded(l, f), evidence, Writer::Dnp)
                }
                Some(LinkVerdict::Restored) => {
                    self.raise(tile, tile, LocalFaultKind::LinkRestored(l), evidence, Writer::Dnp)
                }
                None => {}
            }
        }
        self.sched.schedule_in(self.cfg.lofamo.keepalive_period, EventClass::Protocol, Action::LifamaTick { tile });
    }

    pub(super) fn on_keepalive(&mut self, tile: Rank) {
        let t = &mut self.tiles[tile.index()];
        if !t.host_alive && !t.dnp_alive {
            return;
        }
        let seq = t.keepalive_seq;
        t.keepalive_seq += 1;
        let parent = self.hier.parent(tile).expect("only children send keepalives");
        self.send_service(tile, parent, ServiceBody::Keepalive { from: tile, seq });
        self.sched.schedule_in(self.cfg.lofamo.controller_keepalive, EventClass::Protocol, Action::Keepalive { tile });
    }

    pub(super) fn on_silence_check(&mut self, node: Rank) {
        let t = &self.tiles[node.index()];
        if !t.host_alive && !t.dnp_alive {
            return;
        }
        let now = self.now();
        let period = self.cfg.lofamo.controller_keepalive;
        let silent: Vec<(Rank, u64)> = self
            .children(node)
            .filter_map(|c| {
                let last = t.child_seen.get(&c).map_or(0, |s| s[0].max(s[1]));
                (now - last > 2 * period).then_some((c, last))
            })
            .collect();
        for (c, last) in silent {
            self.raise(node, c, LocalFaultKind::TileSilent, format!("last_keepalive={last}"), Writer::Host);
        }
        self.sched.schedule_in(period, EventClass::Protocol, Action::SilenceCheck { node });
    }

    /// A local fault event observed at `origin` about `tile`. Deduplicated,
    /// traced, applied to routing, and propagated towards the master.
    pub(crate) fn raise(&mut self, origin: Rank, tile: Rank, kind: LocalFaultKind, evidence: String, _side: Writer) {
        if !self.tiles[origin.index()].dedup.admit(tile, &kind) {
            return;
        }
        let now = self.now();
        trace!(
            self.trace,
            now,
            Category::Fault,
            "level=tile origin={origin} tile={tile} {} evidence={evidence}",
            kind_fields(&kind)
        );
        match kind {
            LocalFaultKind::LinkFault(l) => {
                self.known_down.insert(self.geom.undirected(l));
            }
            LocalFaultKind::LinkRestored(l) => {
                self.known_down.remove(&self.geom.undirected(l));
                let t = &mut self.tiles[origin.index()].dedup;
                t.clear(tile, &LocalFaultKind::LinkFault(l));
            }
            _ => {}
        }
        let t = &mut self.tiles[origin.index()];
        let msg_id = t.next_msg;
        t.next_msg += 1;
        let msg = DiagnosticMessage {
            origin,
            msg_id,
            event: LocalFaultEvent { at: now, tile, kind, evidence },
            hop_path: Vec::new(),
        };
        self.on_ldm(origin, msg);
    }

    /// Send `body` from `from` to `to` over every live side.
    pub(crate) fn send_service(&mut self, from: Rank, to: Rank, body: ServiceBody) {
        let t = &self.tiles[from.index()];
        let (host, dnp) = (t.host_alive, t.dnp_alive);
        let p = self.cfg.lofamo;
        if host {
            let body = Box::new(body.clone());
            self.sched.schedule_in(
                p.host_net_latency,
                EventClass::Protocol,
                Action::Service { to, side: Writer::Host, body },
            );
        }
        if dnp {
            if from == to || self.cfg.service_net == ServiceNet::Dedicated {
                let delay = if from == to { 0 } else { p.service_net_latency };
                self.sched.schedule_in(
                    delay,
                    EventClass::Protocol,
                    Action::Service { to, side: Writer::Dnp, body: Box::new(body) },
                );
            } else {
                self.send_service_packet(from, to, &body);
            }
        }
    }

    pub(crate) fn on_service(&mut self, at: Rank, side: Writer, body: ServiceBody) {
        match body {
            ServiceBody::Keepalive { from, .. } => {
                let now = self.now();
                let s = self.tiles[at.index()].child_seen.entry(from).or_insert([0, 0]);
                s[(side == Writer::Dnp) as usize] = now;
            }
            ServiceBody::Ldm(msg) => self.on_ldm(at, msg),
            ServiceBody::Control(bytes) => self.on_control(at, side, &bytes),
        }
    }

    /// Merge at controllers and the master, then forward upwards.
    fn on_ldm(&mut self, at: Rank, mut msg: DiagnosticMessage) {
        let now = self.now();
        let t = &mut self.tiles[at.index()];
        if !t.seen_msgs.insert((msg.origin.0, msg.msg_id)) {
            return;
        }
        msg.hop_path.push(at);
        if self.hier.is_controller(at) {
            let changed = t.table.merge(&self.geom, &msg.event, now);
            if changed {
                let level = if at == self.hier.master() { "master" } else { "controller" };
                let ev = &msg.event;
                trace!(
                    self.trace,
                    now,
                    Category::Fault,
                    "level={level} node={at} origin={} tile={} {} event_at={} path={}",
                    msg.origin,
                    ev.tile,
                    kind_fields(&ev.kind),
                    ev.at,
                    msg.hop_path.iter().map(|r| r.to_string()).collect::<Vec<_>>().join(">")
                );
                if at == self.hier.master() {
                    let ev = msg.event.clone();
                    self.on_master_update(&ev);
                }
            }
        }
        if let Some(parent) = self.hier.parent(at) {
            self.send_service(at, parent, ServiceBody::Ldm(msg));
        }
    }
}

/// `kind=... [param=...]` trace fields for a fault kind.
pub(crate) fn kind_fields(k: &LocalFaultKind) -> String {
    let name = k.name();
    match k {
        LocalFaultKind::LinkFault(l) | LocalFaultKind::LinkRestored(l) => format!("kind={name} link={l}"),
        LocalFaultKind::LinkDegraded(l, f) => format!("kind={name} link={l} factor={f}"),
        LocalFaultKind::RoutingFailure(r) => format!("kind={name} dst={r}"),
        LocalFaultKind::CriticalEvent(c) => format!("kind={name} code={c}"),
        _ => format!("kind={name}"),
    }
}
