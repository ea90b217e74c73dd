//! Scheduled fault clauses: kills, degradations and synthetic critical events.

use super::{Action, Category, Sim};
use crate::dnp::LinkHealth;
use crate::engine::{EventClass, SimTime};
use crate::faultinject::{FaultKind, Target, When};
use crate::lofamo::{LocalFaultKind, Writer};
use crate::trace;

impl Sim {
    pub(super) fn arm_faults(&mut self) {
        for (i, c) in self.faults.clauses.iter().enumerate() {
            if c.kind.is_probe() {
                continue;
            }
            let (first, restore_at) = match c.when {
                When::At(t) => (t, None),
                When::Periodic { start, .. } => (start, None),
                When::Window(a, b) => {
                    (a, matches!(c.kind, FaultKind::LinkKill | FaultKind::LinkDegrade(_)).then_some(b))
                }
            };
            self.sched.schedule(SimTime(first), EventClass::Fault, Action::Inject { clause: i, restore: false }).ok();
            if let Some(b) = restore_at {
                self.sched.schedule(SimTime(b), EventClass::Fault, Action::Inject { clause: i, restore: true }).ok();
            }
        }
    }

    pub(super) fn on_inject(&mut self, idx: usize, restore: bool) {
        let c = self.faults.clauses[idx].clone();
        let now = self.now();
        let target = match c.target {
            Target::Link(l) => format!("{l} peer={}", self.geom.reverse(l)),
            Target::Tile(r) => format!("tile({r})"),
        };
        let action = if restore { "restore" } else { c.kind.name() };
        trace!(self.trace, now, Category::Injector, "origin=injector action={action} target={target} clause={idx}");
        match (c.kind, c.target) {
            (FaultKind::LinkKill | FaultKind::LinkDegrade(_), Target::Link(l)) => {
                let h = match c.kind {
                    _ if restore => LinkHealth::Up,
                    FaultKind::LinkDegrade(f) => LinkHealth::Degraded(f),
                    _ => LinkHealth::Down,
                };
                self.set_link_health(l, h);
                self.set_link_health(self.geom.reverse(l), h);
            }
            (FaultKind::TileKillHost, Target::Tile(r)) => {
                self.tiles[r.index()].host_alive = false;
                self.host_died(r);
            }
            (FaultKind::TileKillDnp, Target::Tile(r)) => self.tiles[r.index()].dnp_alive = false,
            (FaultKind::CriticalEvent(code), Target::Tile(r)) => {
                let side = if self.tiles[r.index()].host_alive { Writer::Host } else { Writer::Dnp };
                if self.tiles[r.index()].alive(side) {
                    let kind = LocalFaultKind::CriticalEvent(code);
                    self.tiles[r.index()].dedup.clear(r, &kind);
                    self.raise(r, r, kind, format!("code={code}"), side);
                }
            }
            _ => {}
        }
        if let (When::Periodic { interval, .. }, false) = (c.when, restore) {
            self.sched.schedule_in(interval, EventClass::Fault, Action::Inject { clause: idx, restore: false });
        }
    }
}
