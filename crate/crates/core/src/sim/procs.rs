//! Logical processes: cooperative activities resumed by the scheduler.
//!
//! A process runs until it returns a [`Wait`]. It is resumed when one of its
//! transfers completes, when a SEND lands in its tile's ring, or when its
//! timer expires. Resumption may be spurious; processes re-check their state.

use std::collections::VecDeque;
use std::task::Poll;

use super::{Action, Sim, SimError};
use crate::dnp::{CompletionEvent, MemoryError, Owner, RingEntry, TransferKind, TransferStatus};
use crate::engine::{EventClass, SimTime};
use crate::topology::Rank;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Wait {
    /// Until a completion or ring arrival.
    Event,
    /// Until the given cycle, or an earlier event.
    Until(u64),
    Done,
}

pub trait Process {
    fn resume(&mut self, io: &mut ProcIo<'_>) -> Wait;
}

pub(crate) struct LpSlot {
    rank: Rank,
    process: Option<Box<dyn Process>>,
    inbox: VecDeque<CompletionEvent>,
    wake_pending: bool,
    done: bool,
    presto_send: Option<u64>,
}

/// A process's view of its tile.
pub struct ProcIo<'a> {
    sim: &'a mut Sim,
    lp: u32,
    rank: Rank,
}

impl ProcIo<'_> {
    pub fn rank(&self) -> Rank {
        self.rank
    }

    pub fn now(&self) -> u64 {
        self.sim.now()
    }

    pub fn tiles(&self) -> u32 {
        self.sim.geom.tiles()
    }

    pub fn put(&mut self, dst: Rank, addr: u64, data: Vec<u8>) -> Result<u64, SimError> {
        self.sim.start_transfer(TransferKind::Put, self.rank, dst, data, addr, 0, Owner::Lp(self.lp))
    }

    pub fn get(&mut self, dst: Rank, addr: u64, len: usize) -> Result<u64, SimError> {
        self.sim.start_transfer(TransferKind::Get, self.rank, dst, Vec::new(), addr, len, Owner::Lp(self.lp))
    }

    pub fn send(&mut self, dst: Rank, data: Vec<u8>) -> Result<u64, SimError> {
        self.sim.start_transfer(TransferKind::Send, self.rank, dst, data, 0, 0, Owner::Lp(self.lp))
    }

    /// Next completion of a transfer this process initiated or a PUT into
    /// one of its regions.
    pub fn next_completion(&mut self) -> Option<CompletionEvent> {
        self.sim.lps[self.lp as usize].inbox.pop_front()
    }

    pub fn status(&self, transfer: u64) -> Option<TransferStatus> {
        self.sim.transfer_status(transfer)
    }

    pub fn take_get(&mut self, transfer: u64) -> Option<Vec<u8>> {
        self.sim.take_get_data(transfer)
    }

    pub fn recv(&mut self) -> Option<RingEntry> {
        self.sim.recv_ring(self.rank)
    }

    pub fn recv_from(&mut self, src: Rank) -> Option<RingEntry> {
        self.sim.recv_ring_from(self.rank, src)
    }

    /// Register a region owned by this process.
    pub fn register(&mut self, base: u64, len: usize) -> Result<(), SimError> {
        self.sim.register(self.rank, base, len, Some(Owner::Lp(self.lp)))
    }

    pub fn read(&self, addr: u64, len: usize) -> Result<&[u8], MemoryError> {
        self.sim.read_memory(self.rank, addr, len)
    }

    pub fn write(&mut self, addr: u64, data: &[u8]) -> Result<(), MemoryError> {
        self.sim.write_memory(self.rank, addr, data)
    }

    /// Blocking send. The first call starts the transfer; later calls poll
    /// it and ignore their arguments until it finishes.
    pub fn presto_send(&mut self, dst: Rank, data: &[u8]) -> Poll<Result<(), TransferStatus>> {
        let slot = self.lp as usize;
        let Some(id) = self.sim.lps[slot].presto_send else {
            match self.send(dst, data.to_vec()) {
                Ok(id) => self.sim.lps[slot].presto_send = Some(id),
                Err(_) => return Poll::Ready(Err(TransferStatus::Failed(crate::dnp::FailReason::Route))),
            }
            return Poll::Pending;
        };
        match self.sim.transfer_status(id) {
            Some(TransferStatus::InFlight) | None => Poll::Pending,
            Some(s) => {
                self.sim.lps[slot].presto_send = None;
                self.sim.lps[slot].inbox.retain(|e| e.transfer_id != id);
                Poll::Ready(if s == TransferStatus::Complete { Ok(()) } else { Err(s) })
            }
        }
    }

    /// Blocking receive of the oldest message from `src`.
    pub fn presto_recv(&mut self, src: Rank) -> Poll<Vec<u8>> {
        match self.recv_from(src) {
            Some(e) => Poll::Ready(e.payload),
            None => Poll::Pending,
        }
    }
}

impl Sim {
    /// Start a logical process on `rank`; first resumed at the current cycle.
    pub fn spawn(&mut self, rank: Rank, process: Box<dyn Process>) -> Result<u32, SimError> {
        if !self.geom.contains(rank) {
            return Err(SimError::Config(format!("rank {rank} does not exist in {}", self.geom)));
        }
        let lp = self.lps.len() as u32;
        self.lps.push(LpSlot {
            rank,
            process: Some(process),
            inbox: VecDeque::new(),
            wake_pending: false,
            done: false,
            presto_send: None,
        });
        self.schedule_wake(lp);
        Ok(lp)
    }

    /// Whether a logical process has returned [`Wait::Done`].
    pub fn lp_done(&self, lp: u32) -> bool {
        self.lps.get(lp as usize).is_some_and(|s| s.done)
    }

    pub fn lps_done(&self) -> bool {
        self.lps.iter().all(|s| s.done)
    }

    fn schedule_wake(&mut self, lp: u32) {
        let s = &mut self.lps[lp as usize];
        if s.wake_pending || s.done {
            return;
        }
        s.wake_pending = true;
        self.sched.schedule_in(0, EventClass::Application, Action::Wake { lp });
    }

    pub(super) fn on_wake(&mut self, lp: u32) {
        let slot = &mut self.lps[lp as usize];
        slot.wake_pending = false;
        let rank = slot.rank;
        if slot.done || !self.tiles[rank.index()].host_alive {
            return;
        }
        let Some(mut p) = self.lps[lp as usize].process.take() else { return };
        let w = p.resume(&mut ProcIo { sim: self, lp, rank });
        let slot = &mut self.lps[lp as usize];
        slot.process = Some(p);
        match w {
            Wait::Done => slot.done = true,
            Wait::Event => {}
            Wait::Until(t) => {
                let at = SimTime(t.max(self.now()));
                self.sched.schedule(at, EventClass::Application, Action::Wake { lp }).ok();
            }
        }
    }

    pub(crate) fn lp_notify(&mut self, lp: u32, ev: CompletionEvent) {
        self.lps[lp as usize].inbox.push_back(ev);
        self.schedule_wake(lp);
    }

    pub(crate) fn wake_rank(&mut self, rank: Rank) {
        for lp in 0..self.lps.len() as u32 {
            if self.lps[lp as usize].rank == rank {
                self.schedule_wake(lp);
            }
        }
    }

    /// Processes on a dead host never resume.
    pub(crate) fn host_died(&mut self, rank: Rank) {
        for s in self.lps.iter_mut().filter(|s| s.rank == rank) {
            s.done = true;
        }
    }
}
