//! Byte codec for service-class messages.

use super::{LocalFaultEvent, LocalFaultKind};
use crate::topology::{Direction, LinkId, Rank};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DiagnosticMessage {
    pub origin: Rank,
    /// Unique per origin; receivers drop copies they have already merged.
    pub msg_id: u64,
    pub event: LocalFaultEvent,
    pub hop_path: Vec<Rank>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ServiceBody {
    Ldm(DiagnosticMessage),
    Keepalive {
        from: Rank,
        seq: u64,
    },
    /// Application-layer control, opaque here.
    Control(Vec<u8>),
}

impl ServiceBody {
    /// Service code carried in the packet header.
    pub fn code(&self) -> u8 {
        match self {
            ServiceBody::Ldm(_) => 1,
            ServiceBody::Keepalive { .. } => 2,
            ServiceBody::Control(_) => 3,
        }
    }
}

struct W(Vec<u8>);

impl W {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn link(&mut self, l: LinkId) {
        self.u32(l.src.0);
        self.u8(l.dir.index() as u8);
    }
}

struct R<'a>(&'a [u8]);

impl R<'_> {
    fn take(&mut self, n: usize) -> Option<&[u8]> {
        if self.0.len() < n {
            return None;
        }
        let (a, b) = self.0.split_at(n);
        self.0 = b;
        Some(a)
    }
    fn u8(&mut self) -> Option<u8> {
        Some(self.take(1)?[0])
    }
    fn u16(&mut self) -> Option<u16> {
        Some(u16::from_le_bytes(self.take(2)?.try_into().ok()?))
    }
    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }
    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }
    fn link(&mut self) -> Option<LinkId> {
        let src = Rank(self.u32()?);
        let d = self.u8()? as usize;
        (d < 6).then(|| LinkId::new(src, Direction::from_index(d)))
    }
}

fn put_kind(w: &mut W, k: &LocalFaultKind) {
    match *k {
        LocalFaultKind::HostFaultSuspected => w.u8(0),
        LocalFaultKind::DnpFaultSuspected => w.u8(1),
        LocalFaultKind::TileSilent => w.u8(2),
        LocalFaultKind::LinkFault(l) => {
            w.u8(3);
            w.link(l);
        }
        LocalFaultKind::LinkDegraded(l, f) => {
            w.u8(4);
            w.link(l);
            w.u32(f);
        }
        LocalFaultKind::LinkRestored(l) => {
            w.u8(5);
            w.link(l);
        }
        LocalFaultKind::RoutingFailure(r) => {
            w.u8(6);
            w.u32(r.0);
        }
        LocalFaultKind::CriticalEvent(c) => {
            w.u8(7);
            w.u16(c);
        }
    }
}

fn get_kind(r: &mut R) -> Option<LocalFaultKind> {
    Some(match r.u8()? {
        0 => LocalFaultKind::HostFaultSuspected,
        1 => LocalFaultKind::DnpFaultSuspected,
        2 => LocalFaultKind::TileSilent,
        3 => LocalFaultKind::LinkFault(r.link()?),
        4 => LocalFaultKind::LinkDegraded(r.link()?, r.u32()?),
        5 => LocalFaultKind::LinkRestored(r.link()?),
        6 => LocalFaultKind::RoutingFailure(Rank(r.u32()?)),
        7 => LocalFaultKind::CriticalEvent(r.u16()?),
        _ => return None,
    })
}

pub fn encode_service(body: &ServiceBody) -> Vec<u8> {
    let mut w = W(Vec::new());
    w.u8(body.code());
    match body {
        ServiceBody::Ldm(m) => {
            w.u32(m.origin.0);
            w.u64(m.msg_id);
            w.u64(m.event.at);
            w.u32(m.event.tile.0);
            put_kind(&mut w, &m.event.kind);
            w.u16(m.event.evidence.len() as u16);
            w.0.extend_from_slice(m.event.evidence.as_bytes());
            w.u16(m.hop_path.len() as u16);
            for h in &m.hop_path {
                w.u32(h.0);
            }
        }
        ServiceBody::Keepalive { from, seq } => {
            w.u32(from.0);
            w.u64(*seq);
        }
        ServiceBody::Control(b) => w.0.extend_from_slice(b),
    }
    w.0
}

pub fn decode_service(bytes: &[u8]) -> Option<ServiceBody> {
    let mut r = R(bytes);
    let body = match r.u8()? {
        1 => {
            let origin = Rank(r.u32()?);
            let msg_id = r.u64()?;
            let at = r.u64()?;
            let tile = Rank(r.u32()?);
            let kind = get_kind(&mut r)?;
            let n = r.u16()? as usize;
            let evidence = String::from_utf8(r.take(n)?.to_vec()).ok()?;
            let hops = r.u16()? as usize;
            let hop_path = (0..hops).map(|_| r.u32().map(Rank)).collect::<Option<Vec<_>>>()?;
            ServiceBody::Ldm(DiagnosticMessage {
                origin,
                msg_id,
                event: LocalFaultEvent { at, tile, kind, evidence },
                hop_path,
            })
        }
        2 => ServiceBody::Keepalive { from: Rank(r.u32()?), seq: r.u64()? },
        3 => return Some(ServiceBody::Control(r.0.to_vec())),
        _ => return None,
    };
    r.0.is_empty().then_some(body)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_every_kind() {
        let l = LinkId::new(Rank(3), Direction::ZMinus);
        let kinds = [
            LocalFaultKind::HostFaultSuspected,
            LocalFaultKind::DnpFaultSuspected,
            LocalFaultKind::TileSilent,
            LocalFaultKind::LinkFault(l),
            LocalFaultKind::LinkDegraded(l, 4),
            LocalFaultKind::LinkRestored(l),
            LocalFaultKind::RoutingFailure(Rank(9)),
            LocalFaultKind::CriticalEvent(77),
        ];
        for kind in kinds {
            let b = ServiceBody::Ldm(DiagnosticMessage {
                origin: Rank(3),
                msg_id: 12,
                event: LocalFaultEvent { at: 99, tile: Rank(3), kind, evidence: "crc x3".into() },
                hop_path: vec![Rank(3), Rank(0)],
            });
            assert_eq!(decode_service(&encode_service(&b)), Some(b));
        }
        let k = ServiceBody::Keepalive { from: Rank(5), seq: 7 };
        assert_eq!(decode_service(&encode_service(&k)), Some(k));
        let c = ServiceBody::Control(vec![1, 2, 3]);
        assert_eq!(decode_service(&encode_service(&c)), Some(c));
    }

    #[test]
    fn truncated_and_trailing_bytes_rejected() {
        let b = encode_service(&ServiceBody::Keepalive { from: Rank(5), seq: 7 });
        assert_eq!(decode_service(&b[..b.len() - 1]), None);
        let mut long = b.clone();
        long.push(0);
        assert_eq!(decode_service(&long), None);
        assert_eq!(decode_service(&[]), None);
    }
}
