use std::collections::BTreeSet;
use std::fmt;

use crate::topology::Rank;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TransferKind {
    Put,
    Get,
    Send,
}

impl TransferKind {
    pub fn name(self) -> &'static str {
        match self {
            TransferKind::Put => "put",
            TransferKind::Get => "get",
            TransferKind::Send => "send",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FailReason {
    Route,
    Timeout,
    Remote,
    DeadEndpoint,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TransferStatus {
    InFlight,
    Complete,
    Failed(FailReason),
}

impl fmt::Display for TransferStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransferStatus::InFlight => f.write_str("in_flight"),
            TransferStatus::Complete => f.write_str("complete"),
            TransferStatus::Failed(r) => write!(f, "failed({})", format!("{r:?}").to_lowercase()),
        }
    }
}

/// Who is told about a completion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Owner {
    /// The rank's completion queue, drained by `poll_completion`.
    User,
    /// A logical process, woken with the event.
    Lp(u32),
    /// Simulator-internal consumer; the tag is interpreted by the caller.
    Internal(u64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Side {
    Initiator,
    Target,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CompletionEvent {
    pub transfer_id: u64,
    pub kind: TransferKind,
    pub at: u64,
    pub status: TransferStatus,
    pub rank: Rank,
    pub side: Side,
    /// Remote address of a PUT or GET, the service tag of a SEND.
    pub addr: u64,
}

#[derive(Clone, Debug)]
pub struct Transfer {
    pub id: u64,
    pub kind: TransferKind,
    pub initiator: Rank,
    pub target: Rank,
    pub total_len: usize,
    pub packets_total: u32,
    pub received: BTreeSet<u32>,
    pub status: TransferStatus,
    pub owner: Owner,
    pub started: u64,
    pub remote_addr: u64,
    /// GET: local landing buffer, filled by replies.
    pub buffer: Vec<u8>,
}

impl Transfer {
    pub fn packets_outstanding(&self) -> u32 {
        self.packets_total - self.received.len() as u32
    }

    pub fn in_flight(&self) -> bool {
        self.status == TransferStatus::InFlight
    }
}

/// Packets needed for `len` bytes (at least one).
pub fn packet_count(len: usize, mtu: usize) -> u32 {
    len.div_ceil(mtu).max(1) as u32
}
