//! Distributed Network Processor: packet format, links, transfers, receive
//! rings and registered memory.

mod link;
mod memory;
mod packet;
mod ring;
mod transfer;

pub use link::{LinkHealth, LinkParams, LinkState, DEFAULT_BANDWIDTH_BITS_PER_CYCLE, DEFAULT_HOP_LATENCY};
pub use memory::{MemoryError, MemoryMap};
pub use packet::{crc32, Packet, PacketHeader, PacketKind, CRC_BYTES, DEFAULT_MTU, HEADER_BYTES, MAX_ADDR};
pub use ring::{RingBuffer, RingEntry, DEFAULT_RING_CAPACITY};
pub use transfer::{packet_count, CompletionEvent, FailReason, Owner, Side, Transfer, TransferKind, TransferStatus};
