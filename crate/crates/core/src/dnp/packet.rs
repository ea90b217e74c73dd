//! Wire format of a DNP packet.
//!
//! ```text
//! header (24 bytes, little endian)
//!   0  kind      u8     1 PUT, 2 GET_REQ, 3 GET_REPLY, 4 SEND, 5 LDM, 6 ACK
//!   1  service   u8     LDM service class, 0 otherwise
//!   2  src       u16
//!   4  dst       u16
//!   6  seq       u32    packet index inside the transfer
//!  10  transfer  u64
//!  18  addr      u48    remote address of the first payload byte
//! trailer
//!      header_crc  u32
//!      payload_crc u32
//! ```

use crate::topology::Rank;

pub const HEADER_BYTES: usize = 24;
pub const CRC_BYTES: usize = 8;
pub const DEFAULT_MTU: usize = 4096;
pub const MAX_ADDR: u64 = (1 << 48) - 1;

/// CRC-32 (ISO-HDLC: reflected, polynomial 0x04C11DB7, init and final xor all ones).
pub fn crc32(bytes: &[u8]) -> u32 {
    crc32fast::hash(bytes)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PacketKind {
    Put,
    GetReq,
    GetReply,
    Send,
    Ldm(u8),
    Ack,
}

impl PacketKind {
    fn code(self) -> (u8, u8) {
        match self {
            PacketKind::Put => (1, 0),
            PacketKind::GetReq => (2, 0),
            PacketKind::GetReply => (3, 0),
            PacketKind::Send => (4, 0),
            PacketKind::Ldm(s) => (5, s),
            PacketKind::Ack => (6, 0),
        }
    }

    fn from_code(kind: u8, service: u8) -> Option<Self> {
        Some(match kind {
            1 => PacketKind::Put,
            2 => PacketKind::GetReq,
            3 => PacketKind::GetReply,
            4 => PacketKind::Send,
            5 => PacketKind::Ldm(service),
            6 => PacketKind::Ack,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            PacketKind::Put => "put",
            PacketKind::GetReq => "get_req",
            PacketKind::GetReply => "get_reply",
            PacketKind::Send => "send",
            PacketKind::Ldm(_) => "ldm",
            PacketKind::Ack => "ack",
        }
    }

    /// Service-class traffic (diagnostics and control).
    pub fn is_service(self) -> bool {
        matches!(self, PacketKind::Ldm(_))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PacketHeader {
    pub kind: PacketKind,
    pub src: Rank,
    pub dst: Rank,
    pub seq: u32,
    pub transfer_id: u64,
    pub addr: u64,
}

impl PacketHeader {
    pub fn encode(&self) -> [u8; HEADER_BYTES] {
        let mut b = [0u8; HEADER_BYTES];
        let (k, s) = self.kind.code();
        b[0] = k;
        b[1] = s;
        b[2..4].copy_from_slice(&(self.src.0 as u16).to_le_bytes());
        b[4..6].copy_from_slice(&(self.dst.0 as u16).to_le_bytes());
        b[6..10].copy_from_slice(&self.seq.to_le_bytes());
        b[10..18].copy_from_slice(&self.transfer_id.to_le_bytes());
        b[18..24].copy_from_slice(&self.addr.to_le_bytes()[..6]);
        b
    }

    pub fn decode(b: &[u8; HEADER_BYTES]) -> Option<Self> {
        let mut addr = [0u8; 8];
        addr[..6].copy_from_slice(&b[18..24]);
        Some(PacketHeader {
            kind: PacketKind::from_code(b[0], b[1])?,
            src: Rank(u16::from_le_bytes([b[2], b[3]]) as u32),
            dst: Rank(u16::from_le_bytes([b[4], b[5]]) as u32),
            seq: u32::from_le_bytes(b[6..10].try_into().ok()?),
            transfer_id: u64::from_le_bytes(b[10..18].try_into().ok()?),
            addr: u64::from_le_bytes(addr),
        })
    }
}

/// A packet in flight. `header_bytes` is what travels; the decoded view is
/// only trusted once `header_ok()` holds.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Packet {
    pub id: u64,
    header_bytes: [u8; HEADER_BYTES],
    pub payload: Vec<u8>,
    pub header_crc: u32,
    pub payload_crc: u32,
    pub ttl: u32,
    pub prev_hop: Option<Rank>,
    pub hops: u32,
    pub misroutes: u32,
    /// Ground truth for accounting: set when a bit was flipped in flight.
    /// Never consulted by the receiver, which only has the CRCs.
    pub corrupted: bool,
}

impl Packet {
    pub fn seal(id: u64, header: PacketHeader, payload: Vec<u8>, ttl: u32) -> Self {
        let header_bytes = header.encode();
        Packet {
            id,
            header_crc: crc32(&header_bytes),
            payload_crc: crc32(&payload),
            header_bytes,
            payload,
            ttl,
            prev_hop: None,
            hops: 0,
            misroutes: 0,
            corrupted: false,
        }
    }

    pub fn header(&self) -> Option<PacketHeader> {
        PacketHeader::decode(&self.header_bytes)
    }

    pub fn header_bytes(&self) -> &[u8; HEADER_BYTES] {
        &self.header_bytes
    }

    pub fn header_ok(&self) -> bool {
        crc32(&self.header_bytes) == self.header_crc && self.header().is_some()
    }

    pub fn payload_ok(&self) -> bool {
        crc32(&self.payload) == self.payload_crc
    }

    pub fn intact(&self) -> bool {
        self.header_ok() && self.payload_ok()
    }

    /// Bytes on the wire: header, payload and both checksums.
    pub fn wire_bytes(&self) -> usize {
        HEADER_BYTES + self.payload.len() + CRC_BYTES
    }

    /// Number of bits a corruption may target: the payload, or the header
    /// when the payload is empty.
    pub fn corruptible_bits(&self) -> usize {
        if self.payload.is_empty() {
            HEADER_BYTES * 8
        } else {
            self.payload.len() * 8
        }
    }

    /// Flip one bit of the payload (or of the header for empty payloads).
    pub fn flip_bit(&mut self, bit: usize) {
        let bit = bit % self.corruptible_bits();
        let target: &mut [u8] = if self.payload.is_empty() { &mut self.header_bytes } else { &mut self.payload };
        target[bit / 8] ^= 1 << (bit % 8);
        self.corrupted = true;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Bitwise reference CRC-32, independent of the table-driven crate.
    fn crc32_bitwise(data: &[u8]) -> u32 {
        let mut crc = 0xFFFF_FFFFu32;
        for &b in data {
            crc ^= b as u32;
            for _ in 0..8 {
                crc = if crc & 1 != 0 { (crc >> 1) ^ 0xEDB8_8320 } else { crc >> 1 };
            }
        }
        !crc
    }

    #[test]
    fn crc_known_values() {
        assert_eq!(crc32(b""), 0);
        assert_eq!(crc32(b"123456789"), 0xCBF4_3926);
        assert_eq!(crc32_bitwise(b"123456789"), 0xCBF4_3926);
    }

    #[test]
    fn crc_matches_reference_on_varied_inputs() {
        let mut data = Vec::new();
        for i in 0..300u32 {
            data.push((i.wrapping_mul(2_654_435_761) >> 13) as u8);
            assert_eq!(crc32(&data), crc32_bitwise(&data));
        }
    }

    fn sample(payload: Vec<u8>) -> Packet {
        let h = PacketHeader {
            kind: PacketKind::Put,
            src: Rank(3),
            dst: Rank(12),
            seq: 7,
            transfer_id: 0xDEAD_BEEF_0042,
            addr: 0x1234_5678,
        };
        Packet::seal(1, h, payload, 16)
    }

    #[test]
    fn header_roundtrip() {
        let p = sample(vec![1, 2, 3]);
        let h = p.header().unwrap();
        assert_eq!(h.src, Rank(3));
        assert_eq!(h.addr, 0x1234_5678);
        assert_eq!(PacketHeader::decode(&h.encode()), Some(h));
        assert!(p.intact());
        assert_eq!(p.wire_bytes(), 24 + 3 + 8);
    }

    #[test]
    fn every_single_bit_flip_is_detected() {
        let payload: Vec<u8> = (0..64u8).map(|i| i.wrapping_mul(37)).collect();
        let clean = sample(payload);
        for bit in 0..clean.corruptible_bits() {
            let mut p = clean.clone();
            p.flip_bit(bit);
            assert!(!p.payload_ok(), "bit {bit}");
        }
        let empty = sample(Vec::new());
        for bit in 0..empty.corruptible_bits() {
            let mut p = empty.clone();
            p.flip_bit(bit);
            assert!(!p.header_ok(), "header bit {bit}");
        }
    }
}
