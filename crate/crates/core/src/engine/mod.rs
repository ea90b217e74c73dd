//! Discrete-event kernel: logical time, a strictly ordered event queue and
//! keyed random streams.
//!
//! Events are ordered by `(at, class, seq)`. The class ordering puts fault
//! injection ahead of network traffic, network ahead of protocol agents and
//! protocol agents ahead of application wakeups, so that a fault armed for
//! cycle `t` sees the traffic of cycle `t` before it is delivered.

mod rng;

pub use rng::{CounterRng, RngStream};

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;

use sha2::{Digest, Sha256};
use thiserror::Error;

/// Simulation time in cycles. One cycle is one nanosecond.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub fn cycles(self) -> u64 {
        self.0
    }

    pub fn after(self, delta: u64) -> SimTime {
        SimTime(self.0.saturating_add(delta))
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Priority class used to break ties between events at the same cycle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventClass {
    Fault = 0,
    Network = 1,
    Protocol = 2,
    Application = 3,
}

impl EventClass {
    pub fn name(self) -> &'static str {
        match self {
            EventClass::Fault => "fault",
            EventClass::Network => "network",
            EventClass::Protocol => "protocol",
            EventClass::Application => "application",
        }
    }
}

/// How events sharing `(at, class)` are ordered.
///
/// `Fifo` dispatches them in issue order. `Permuted` dispatches them in a
/// seed-dependent pseudo-random order; both orders are legal schedules, which
/// is what the Kahn-determinism harness relies on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TieBreak {
    Fifo,
    Permuted(u64),
}

#[derive(Debug)]
pub struct Event<A> {
    pub at: SimTime,
    pub class: EventClass,
    pub seq: u64,
    pub action: A,
    tie: u64,
}

impl<A> Event<A> {
    fn key(&self) -> (SimTime, EventClass, u64, u64) {
        (self.at, self.class, self.tie, self.seq)
    }
}

impl<A> PartialEq for Event<A> {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl<A> Eq for Event<A> {}

impl<A> PartialOrd for Event<A> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<A> Ord for Event<A> {
    // Reversed so that BinaryHeap acts as a min-heap.
    fn cmp(&self, other: &Self) -> Ordering {
        other.key().cmp(&self.key())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EngineError {
    #[error("event scheduled in the past: at={at} but now={now}")]
    ScheduledInPast { at: SimTime, now: SimTime },
    #[error("{class:?} event scheduled at t={at} while a {current:?} event of that cycle is running")]
    EarlierClass { at: SimTime, class: EventClass, current: EventClass },
    #[error("run aborted at t={at} ({class}) seq={seq} while handling {label}: {message}")]
    Aborted { at: SimTime, class: &'static str, seq: u64, label: String, message: String },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunStats {
    pub dispatched: u64,
    pub final_time: SimTime,
}

/// The event queue plus the logical clock.
pub struct Scheduler<A> {
    queue: BinaryHeap<Event<A>>,
    now: SimTime,
    next_seq: u64,
    tie: TieBreak,
    dispatched: u64,
    last_key: Option<(SimTime, EventClass, u64, u64)>,
    log: Sha256,
}

impl<A: fmt::Debug> Default for Scheduler<A> {
    fn default() -> Self {
        Self::new(TieBreak::Fifo)
    }
}

impl<A: fmt::Debug> Scheduler<A> {
    pub fn new(tie: TieBreak) -> Self {
        Scheduler {
            queue: BinaryHeap::new(),
            now: SimTime::ZERO,
            next_seq: 0,
            tie,
            dispatched: 0,
            last_key: None,
            log: Sha256::new(),
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn dispatched(&self) -> u64 {
        self.dispatched
    }

    /// Enqueue `action` at `at`. Returns the issue sequence number.
    pub fn schedule(&mut self, at: SimTime, class: EventClass, action: A) -> Result<u64, EngineError> {
        if at < self.now {
            return Err(EngineError::ScheduledInPast { at, now: self.now });
        }
        let seq = self.next_seq;
        let mut tie = match self.tie {
            TieBreak::Fifo => 0,
            TieBreak::Permuted(seed) => rng::mix64(seed ^ rng::mix64(seq)),
        };
        if let Some((t, current, cur_tie, _)) = self.last_key {
            if at == t && class < current {
                return Err(EngineError::EarlierClass { at, class, current });
            }
            if at == t && class == current {
                tie = tie.max(cur_tie);
            }
        }
        self.next_seq += 1;
        self.queue.push(Event { at, class, seq, action, tie });
        Ok(seq)
    }

    /// Schedule `delta` cycles from now; never fails. A zero delay into a
    /// class that already ran this cycle lands on the next cycle.
    pub fn schedule_in(&mut self, delta: u64, class: EventClass, action: A) -> u64 {
        let mut at = self.now.after(delta);
        if let Some((t, current, _, _)) = self.last_key {
            if at == t && class < current {
                at = at.after(1);
            }
        }
        self.schedule(at, class, action).expect("relative schedule is never in the past")
    }

    /// Pop the next event with `at <= t_end`, advancing the clock to it.
    pub fn pop_due(&mut self, t_end: SimTime) -> Option<Event<A>> {
        if self.queue.peek()?.at > t_end {
            return None;
        }
        let ev = self.queue.pop()?;
        let key = ev.key();
        if let Some(prev) = self.last_key {
            assert!(prev < key, "event dispatched out of order: {prev:?} then {key:?}");
        }
        self.last_key = Some(key);
        self.now = ev.at;
        self.dispatched += 1;
        self.log.update(ev.at.0.to_le_bytes());
        self.log.update([ev.class as u8]);
        self.log.update(ev.seq.to_le_bytes());
        Some(ev)
    }

    /// Close a run window: the clock moves to `t_end` if it is ahead.
    pub fn settle(&mut self, t_end: SimTime) {
        if t_end > self.now {
            self.now = t_end;
        }
    }

    /// Dispatch every event with `at <= t_end` through `handler`.
    pub fn run_until<E, F>(&mut self, t_end: SimTime, mut handler: F) -> Result<RunStats, EngineError>
    where
        E: fmt::Display,
        F: FnMut(&mut Self, &A) -> Result<(), E>,
    {
        let start = self.dispatched;
        while let Some(ev) = self.pop_due(t_end) {
            if let Err(e) = handler(self, &ev.action) {
                return Err(EngineError::Aborted {
                    at: ev.at,
                    class: ev.class.name(),
                    seq: ev.seq,
                    label: format!("{:?}", ev.action),
                    message: e.to_string(),
                });
            }
        }
        self.settle(t_end);
        Ok(RunStats { dispatched: self.dispatched - start, final_time: self.now })
    }

    /// Hex SHA-256 over the `(at, class, seq)` dispatch log so far.
    pub fn dispatch_hash(&self) -> String {
        hex::encode(self.log.clone().finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_cycle_scheduling_stays_in_order() {
        for tie in [TieBreak::Fifo, TieBreak::Permuted(9)] {
            let mut s: Scheduler<u32> = Scheduler::new(tie);
            for i in 0..20 {
                s.schedule(SimTime(5), EventClass::Protocol, i).unwrap();
            }
            let mut n = 0;
            while let Some(ev) = s.pop_due(SimTime(10)) {
                n += 1;
                if ev.action < 20 {
                    s.schedule_in(0, EventClass::Protocol, ev.action + 100);
                    s.schedule_in(0, EventClass::Network, ev.action + 200);
                }
            }
            assert_eq!(n, 60);
        }
        let mut s: Scheduler<u32> = Scheduler::default();
        s.schedule(SimTime(3), EventClass::Application, 0).unwrap();
        s.pop_due(SimTime(3)).unwrap();
        let e = s.schedule(SimTime(3), EventClass::Fault, 1).unwrap_err();
        assert!(matches!(e, EngineError::EarlierClass { .. }));
        s.schedule_in(0, EventClass::Fault, 2);
        assert_eq!(s.pop_due(SimTime(9)).unwrap().at, SimTime(4));
    }

    fn drain(s: &mut Scheduler<u32>, t: u64) -> Vec<u32> {
        let mut out = Vec::new();
        s.run_until(SimTime(t), |_, a| {
            out.push(*a);
            Ok::<(), String>(())
        })
        .unwrap();
        out
    }

    #[test]
    fn time_then_class_then_seq() {
        let mut s = Scheduler::new(TieBreak::Fifo);
        s.schedule(SimTime(1), EventClass::Fault, 3).unwrap();
        s.schedule(SimTime(0), EventClass::Application, 1).unwrap();
        s.schedule(SimTime(0), EventClass::Application, 2).unwrap();
        s.schedule(SimTime(0), EventClass::Fault, 0).unwrap();
        assert_eq!(drain(&mut s, 10), vec![0, 1, 2, 3]);
    }

    #[test]
    fn past_is_rejected() {
        let mut s: Scheduler<u32> = Scheduler::default();
        s.schedule(SimTime(5), EventClass::Network, 0).unwrap();
        drain(&mut s, 5);
        assert_eq!(
            s.schedule(SimTime(4), EventClass::Network, 1),
            Err(EngineError::ScheduledInPast { at: SimTime(4), now: SimTime(5) })
        );
    }

    #[test]
    fn far_horizon_event_stays_queued() {
        let mut s: Scheduler<u32> = Scheduler::default();
        s.schedule(SimTime(1 << 63), EventClass::Network, 9).unwrap();
        let stats = s.run_until(SimTime(1000), |_, _| Ok::<(), String>(())).unwrap();
        assert_eq!(stats.dispatched, 0);
        assert_eq!(s.pending(), 1);
    }

    #[test]
    fn empty_run_advances_clock() {
        let mut s: Scheduler<u32> = Scheduler::default();
        let stats = s.run_until(SimTime(100), |_, _| Ok::<(), String>(())).unwrap();
        assert_eq!(stats, RunStats { dispatched: 0, final_time: SimTime(100) });
        assert_eq!(s.now(), SimTime(100));
    }

    fn chain(split: bool) -> (Vec<(u64, u32)>, String) {
        let mut s: Scheduler<u32> = Scheduler::default();
        for i in 0..5 {
            s.schedule(SimTime(i * 17), EventClass::Network, i as u32).unwrap();
        }
        let mut seen = Vec::new();
        let mut step = |s: &mut Scheduler<u32>, a: &u32| {
            seen.push((s.now().0, *a));
            if *a < 40 {
                s.schedule_in(7, EventClass::Protocol, a + 10);
            }
            Ok::<(), String>(())
        };
        if split {
            s.run_until(SimTime(50), &mut step).unwrap();
            s.run_until(SimTime(100), &mut step).unwrap();
        } else {
            s.run_until(SimTime(100), &mut step).unwrap();
        }
        let h = s.dispatch_hash();
        (seen, h)
    }

    #[test]
    fn resumable_runs_match_single_run() {
        assert_eq!(chain(true), chain(false));
    }

    #[test]
    fn handler_error_names_the_event() {
        let mut s: Scheduler<u32> = Scheduler::default();
        s.schedule(SimTime(3), EventClass::Protocol, 77).unwrap();
        let err = s.run_until(SimTime(10), |_, _| Err::<(), _>("boom")).unwrap_err();
        match err {
            EngineError::Aborted { at, label, .. } => {
                assert_eq!(at, SimTime(3));
                assert_eq!(label, "77");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn permuted_tiebreak_only_reorders_same_slot() {
        let mut s = Scheduler::new(TieBreak::Permuted(12345));
        for i in 0..50u32 {
            s.schedule(SimTime((i / 10) as u64), EventClass::Application, i).unwrap();
        }
        let out = drain(&mut s, 100);
        for w in out.windows(2) {
            assert!(w[0] / 10 <= w[1] / 10);
        }
        assert_ne!(out, (0..50).collect::<Vec<_>>());
    }
}
