//! Packets, routing, links, transfers, rings and registered memory.

use std::collections::BTreeSet;

use super::{link_index, Action, Category, Sim, SimError};
use crate::dnp::{
    packet_count, CompletionEvent, FailReason, LinkHealth, MemoryError, Owner, Packet, PacketHeader, PacketKind,
    RingEntry, Side, Transfer, TransferKind, TransferStatus, MAX_ADDR,
};
use crate::engine::{EventClass, SimTime};
use crate::faultinject::PacketAction;
use crate::lofamo::{encode_service, LocalFaultKind, ServiceBody, Writer};
use crate::topology::{LinkId, Rank};
use crate::trace;

/// SEND tag for application-layer channel traffic, which bypasses the ring.
pub(crate) const DAL_TAG: u64 = 0xDA1;

impl Sim {
    fn check_rank(&self, r: Rank) -> Result<(), SimError> {
        self.geom.check_rank(r).map(|_| ()).map_err(|e| SimError::Config(e.to_string()))
    }

    /// Register `[base, base+len)` on `rank` for remote access. `owner`
    /// receives a target-side completion for every PUT landing there.
    pub fn register(&mut self, rank: Rank, base: u64, len: usize, owner: Option<Owner>) -> Result<(), SimError> {
        self.check_rank(rank)?;
        self.tiles[rank.index()].memory.register(base, len, owner).map_err(|e| SimError::Config(e.to_string()))
    }

    pub fn read_memory(&self, rank: Rank, addr: u64, len: usize) -> Result<&[u8], MemoryError> {
        self.tiles[rank.index()].memory.read(addr, len)
    }

    pub fn write_memory(&mut self, rank: Rank, addr: u64, data: &[u8]) -> Result<(), MemoryError> {
        self.tiles[rank.index()].memory.write(addr, data)
    }

    /// RDMA PUT of `data` into `dst`'s registered region at `addr`.
    pub fn put(&mut self, src: Rank, dst: Rank, addr: u64, data: Vec<u8>) -> Result<u64, SimError> {
        self.start_transfer(TransferKind::Put, src, dst, data, addr, 0, Owner::User)
    }

    /// RDMA GET of `len` bytes at `addr` on `dst`, landing at `src`.
    pub fn get(&mut self, src: Rank, dst: Rank, addr: u64, len: usize) -> Result<u64, SimError> {
        self.start_transfer(TransferKind::Get, src, dst, Vec::new(), addr, len, Owner::User)
    }

    /// SEND into `dst`'s receive ring.
    pub fn send(&mut self, src: Rank, dst: Rank, data: Vec<u8>) -> Result<u64, SimError> {
        self.start_transfer(TransferKind::Send, src, dst, data, 0, 0, Owner::User)
    }

    pub fn poll_completion(&mut self, rank: Rank) -> Option<CompletionEvent> {
        self.tiles[rank.index()].cq.pop_front()
    }

    pub fn recv_ring(&mut self, rank: Rank) -> Option<RingEntry> {
        let e = self.tiles[rank.index()].ring.pop();
        self.after_ring_pop(rank);
        e
    }

    pub(crate) fn recv_ring_from(&mut self, rank: Rank, src: Rank) -> Option<RingEntry> {
        let e = self.tiles[rank.index()].ring.pop_from(src);
        if e.is_some() {
            self.after_ring_pop(rank);
        }
        e
    }

    pub fn ring_len(&self, rank: Rank) -> usize {
        self.tiles[rank.index()].ring.len()
    }

    fn after_ring_pop(&mut self, rank: Rank) {
        if self.tiles[rank.index()].ring.held() > 0 {
            self.sched.schedule_in(1, EventClass::Network, Action::RingRetry { rank });
        }
    }

    pub fn transfer_status(&self, id: u64) -> Option<TransferStatus> {
        self.transfers.get(&id).map(|t| t.status).or_else(|| self.finished.get(&id).copied())
    }

    pub fn take_get_data(&mut self, id: u64) -> Option<Vec<u8>> {
        self.get_data.remove(&id)
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn start_transfer(
        &mut self,
        kind: TransferKind,
        src: Rank,
        dst: Rank,
        data: Vec<u8>,
        addr: u64,
        get_len: usize,
        owner: Owner,
    ) -> Result<u64, SimError> {
        self.check_rank(src)?;
        self.check_rank(dst)?;
        let mtu = self.cfg.mtu;
        let total_len = if kind == TransferKind::Get { get_len } else { data.len() };
        if total_len == 0 {
            return Err(SimError::Config(format!("empty {} transfer", kind.name())));
        }
        if kind != TransferKind::Send && addr.saturating_add(total_len as u64) > MAX_ADDR {
            return Err(SimError::Config(format!("address {addr:#x} out of range")));
        }
        if kind == TransferKind::Send && addr == 0 && data.len() > mtu {
            return Err(SimError::Config(format!("SEND of {} bytes exceeds the ring entry size {mtu}", data.len())));
        }
        let id = self.next_xfer;
        self.next_xfer += 1;
        let now = self.now();
        let packets_total = packet_count(total_len, mtu);
        self.transfers.insert(
            id,
            Transfer {
                id,
                kind,
                initiator: src,
                target: dst,
                total_len,
                packets_total,
                received: BTreeSet::new(),
                status: TransferStatus::InFlight,
                owner,
                started: now,
                remote_addr: addr,
                buffer: if kind == TransferKind::Send && addr != 0 || kind == TransferKind::Get {
                    vec![0; total_len]
                } else {
                    Vec::new()
                },
            },
        );
        if !self.tiles[src.index()].dnp_alive {
            self.finish_transfer(id, TransferStatus::Failed(FailReason::DeadEndpoint));
            return Ok(id);
        }
        let factor = if kind == TransferKind::Get { 2 } else { 1 };
        let timeout = 10 * factor * self.worst_path_latency(packets_total);
        self.sched.schedule_in(timeout, EventClass::Network, Action::Timeout { transfer: id });
        match kind {
            TransferKind::Get => {
                let h = PacketHeader { kind: PacketKind::GetReq, src, dst, seq: 0, transfer_id: id, addr };
                self.inject(src, h, (get_len as u64).to_le_bytes().to_vec());
            }
            _ => {
                let pk = if kind == TransferKind::Put { PacketKind::Put } else { PacketKind::Send };
                for (i, chunk) in data.chunks(mtu).enumerate() {
                    let a = if kind == TransferKind::Put { addr + (i * mtu) as u64 } else { addr };
                    let h = PacketHeader { kind: pk, src, dst, seq: i as u32, transfer_id: id, addr: a };
                    self.inject(src, h, chunk.to_vec());
                }
            }
        }
        Ok(id)
    }

    /// Seal a packet and hand it to the router of `at`.
    pub(crate) fn inject(&mut self, at: Rank, h: PacketHeader, payload: Vec<u8>) {
        let pkt = Box::new(Packet::seal(self.next_pkt, h, payload, self.cfg.ttl));
        self.next_pkt += 1;
        self.stats.injected += 1;
        self.stats.in_flight += 1;
        if self.trace.packets {
            trace!(
                self.trace,
                self.now(),
                Category::Packet,
                "ev=send pkt={} kind={} src={} dst={} xfer={} seq={} bytes={}",
                pkt.id,
                h.kind.name(),
                h.src,
                h.dst,
                h.transfer_id,
                h.seq,
                pkt.wire_bytes()
            );
        }
        if h.dst == at {
            self.sched.schedule_in(0, EventClass::Network, Action::Loopback { rank: at, pkt });
        } else {
            self.forward(at, pkt);
        }
    }

    pub(crate) fn send_service_packet(&mut self, from: Rank, to: Rank, body: &ServiceBody) {
        let h =
            PacketHeader { kind: PacketKind::Ldm(body.code()), src: from, dst: to, seq: 0, transfer_id: 0, addr: 0 };
        self.inject(from, h, encode_service(body));
    }

    fn packet_gone(&mut self, pkt: &Packet, ev: &str, reason: &str, link: Option<LinkId>) {
        self.stats.in_flight -= 1;
        if self.trace.packets {
            let h = pkt.header();
            let (kind, src, dst, x, seq) =
                h.map_or(("?", 0, 0, 0, 0), |h| (h.kind.name(), h.src.0, h.dst.0, h.transfer_id, h.seq));
            match link {
                Some(l) => trace!(
                    self.trace,
                    self.now(),
                    Category::Packet,
                    "ev={ev} pkt={} kind={kind} src={src} dst={dst} xfer={x} seq={seq} link={l} reason={reason}",
                    pkt.id
                ),
                None => trace!(
                    self.trace,
                    self.now(),
                    Category::Packet,
                    "ev={ev} pkt={} kind={kind} src={src} dst={dst} xfer={x} seq={seq} reason={reason}",
                    pkt.id
                ),
            }
        }
    }

    /// Route `pkt`, currently held by `cur`, one hop further.
    fn forward(&mut self, cur: Rank, mut pkt: Box<Packet>) {
        let h = pkt.header().expect("forwarded packets passed the header check");
        if h.dst == cur {
            self.deliver(cur, *pkt);
            return;
        }
        let step = {
            let (geom, known) = (&self.geom, &self.known_down);
            geom.route_next_hop(cur, h.dst, |l| !known.contains(&geom.undirected(l)), pkt.prev_hop, pkt.ttl)
        };
        let step = match step {
            Ok(s) => s,
            Err(u) => {
                self.stats.undeliverable += 1;
                self.packet_gone(&pkt, "undeliverable", &u.to_string().replace(' ', "_"), None);
                if h.transfer_id != 0 {
                    self.fail_transfer(h.transfer_id, FailReason::Route);
                }
                if self.cfg.lofamo_enabled {
                    self.raise(cur, cur, LocalFaultKind::RoutingFailure(h.dst), format!("at={cur}"), Writer::Dnp);
                }
                return;
            }
        };
        if step.misroute {
            pkt.ttl -= 1;
            pkt.misroutes += 1;
        }
        let l = LinkId::new(cur, step.dir);
        let now = self.now();
        let (wire, payload) = (pkt.wire_bytes(), pkt.payload.len());
        let ls = &mut self.links[link_index(l)];
        if !ls.health.carries() {
            self.stats.lost += 1;
            self.packet_gone(&pkt, "drop", "link_down", Some(l));
            return;
        }
        let (depart, arrival) = ls.reserve(now, wire, payload, &self.cfg.link);
        let busy = arrival - depart - self.cfg.link.hop_latency;
        if self.trace.packets {
            trace!(
                self.trace,
                now,
                Category::Packet,
                "ev=hop pkt={} kind={} src={} dst={} xfer={} seq={} link={l} bytes={wire} payload={payload} depart={depart} busy={busy} arrive={arrival}{}",
                pkt.id,
                h.kind.name(),
                h.src,
                h.dst,
                h.transfer_id,
                h.seq,
                if step.misroute { " misroute=1" } else { "" }
            );
        }
        self.sched
            .schedule(SimTime(arrival), EventClass::Network, Action::Arrive { link: l, pkt })
            .expect("arrival is in the future");
    }

    pub(super) fn on_arrive(&mut self, link: LinkId, mut pkt: Box<Packet>) {
        let to = self.geom.neighbor(link.src, link.dir);
        if let Some((clause, action)) = self.probes.inspect(link, self.now(), &pkt) {
            match action {
                PacketAction::Drop => {
                    trace!(
                        self.trace,
                        self.now(),
                        Category::Injector,
                        "origin=injector action=drop clause={clause} link={link} pkt={}",
                        pkt.id
                    );
                    self.stats.dropped_probe += 1;
                    self.packet_gone(&pkt, "drop", "probe", Some(link));
                    return;
                }
                PacketAction::Corrupt(bit) => {
                    trace!(
                        self.trace,
                        self.now(),
                        Category::Injector,
                        "origin=injector action=corrupt clause={clause} link={link} pkt={} bit={bit}",
                        pkt.id
                    );
                    pkt.flip_bit(bit);
                    self.stats.corrupted += 1;
                }
                PacketAction::Deliver => {}
            }
        }
        if !self.links[link_index(link)].health.carries() {
            self.stats.lost += 1;
            self.packet_gone(&pkt, "drop", "link_down", Some(link));
            return;
        }
        if !self.tiles[to.index()].dnp_alive {
            self.stats.lost += 1;
            self.packet_gone(&pkt, "drop", "dnp_dead", Some(link));
            return;
        }
        if !pkt.intact() {
            self.tiles[to.index()].crc_errors[link.dir.opposite().index()] += 1;
            self.stats.dropped_crc += 1;
            self.packet_gone(&pkt, "drop", "crc", Some(link));
            return;
        }
        if pkt.corrupted {
            self.stats.crc_escapes += 1;
            self.alarm(format!("corrupted packet {} passed the CRC check", pkt.id));
        }
        pkt.hops += 1;
        pkt.prev_hop = Some(link.src);
        self.forward(to, pkt);
    }

    /// Final delivery at the destination DNP.
    pub(super) fn deliver(&mut self, rank: Rank, pkt: Packet) {
        let h = pkt.header().expect("delivered packets passed the header check");
        self.stats.in_flight -= 1;
        self.stats.delivered += 1;
        let now = self.now();
        if self.trace.packets {
            trace!(
                self.trace,
                now,
                Category::Packet,
                "ev=deliver pkt={} kind={} src={} dst={} xfer={} seq={} hops={} misroutes={}",
                pkt.id,
                h.kind.name(),
                h.src,
                h.dst,
                h.transfer_id,
                h.seq,
                pkt.hops,
                pkt.misroutes
            );
        }
        let Packet { payload, .. } = pkt;
        match h.kind {
            PacketKind::Put => {
                let Some(tr) = self.transfers.get(&h.transfer_id) else { return };
                if tr.received.contains(&h.seq) {
                    return;
                }
                if self.tiles[rank.index()].memory.write(h.addr, &payload).is_err() {
                    self.nack(rank, h, FailReason::Remote);
                    return;
                }
                let tr = self.transfers.get_mut(&h.transfer_id).expect("checked above");
                tr.received.insert(h.seq);
                if tr.packets_outstanding() == 0 {
                    self.finish_transfer(h.transfer_id, TransferStatus::Complete);
                }
            }
            PacketKind::Send => {
                let mtu = self.cfg.mtu;
                let Some(tr) = self.transfers.get_mut(&h.transfer_id) else { return };
                if !tr.received.insert(h.seq) {
                    return;
                }
                if h.addr != 0 {
                    let off = h.seq as usize * mtu;
                    tr.buffer[off..off + payload.len()].copy_from_slice(&payload);
                    if tr.packets_outstanding() == 0 {
                        self.finish_transfer(h.transfer_id, TransferStatus::Complete);
                    }
                    return;
                }
                let entry = RingEntry { src: h.src, transfer_id: h.transfer_id, payload, at: now };
                if self.tiles[rank.index()].ring.offer(entry) {
                    self.finish_transfer(h.transfer_id, TransferStatus::Complete);
                    self.wake_rank(rank);
                }
            }
            PacketKind::GetReq => {
                let len =
                    u64::from_le_bytes(payload.get(..8).and_then(|b| b.try_into().ok()).unwrap_or([0; 8])) as usize;
                let data = match self.tiles[rank.index()].memory.read(h.addr, len) {
                    Ok(d) => d.to_vec(),
                    Err(_) => {
                        self.nack(rank, h, FailReason::Remote);
                        return;
                    }
                };
                let mtu = self.cfg.mtu;
                for (i, chunk) in data.chunks(mtu).enumerate() {
                    let r = PacketHeader {
                        kind: PacketKind::GetReply,
                        src: rank,
                        dst: h.src,
                        seq: i as u32,
                        transfer_id: h.transfer_id,
                        addr: h.addr + (i * mtu) as u64,
                    };
                    self.inject(rank, r, chunk.to_vec());
                }
            }
            PacketKind::GetReply => {
                let mtu = self.cfg.mtu;
                let Some(tr) = self.transfers.get_mut(&h.transfer_id) else { return };
                if !tr.received.insert(h.seq) {
                    return;
                }
                let off = h.seq as usize * mtu;
                tr.buffer[off..off + payload.len()].copy_from_slice(&payload);
                if tr.packets_outstanding() == 0 {
                    self.finish_transfer(h.transfer_id, TransferStatus::Complete);
                }
            }
            PacketKind::Ack => {
                let reason = match payload.first() {
                    Some(1) => FailReason::Remote,
                    Some(2) => FailReason::Route,
                    _ => FailReason::DeadEndpoint,
                };
                self.fail_transfer(h.transfer_id, reason);
            }
            PacketKind::Ldm(_) => match crate::lofamo::decode_service(&payload) {
                Some(body) => self.on_service(rank, Writer::Dnp, body),
                None => self.alarm(format!("malformed service packet at tile {rank}")),
            },
        }
    }

    /// Tell the initiator its transfer failed at the target.
    fn nack(&mut self, at: Rank, h: PacketHeader, reason: FailReason) {
        let code = match reason {
            FailReason::Remote => 1,
            FailReason::Route => 2,
            _ => 3,
        };
        let a =
            PacketHeader { kind: PacketKind::Ack, src: at, dst: h.src, seq: 0, transfer_id: h.transfer_id, addr: 0 };
        self.inject(at, a, vec![code]);
    }

    pub(super) fn on_ring_retry(&mut self, rank: Rank) {
        let now = self.now();
        let mut admitted = Vec::new();
        while let Some(e) = self.tiles[rank.index()].ring.admit_held(now) {
            admitted.push(e.transfer_id);
        }
        for id in &admitted {
            self.finish_transfer(*id, TransferStatus::Complete);
        }
        if !admitted.is_empty() {
            self.wake_rank(rank);
        }
    }

    pub(super) fn on_timeout(&mut self, id: u64) {
        let Some(tr) = self.transfers.get(&id) else { return };
        // delivered but held back by a full ring
        if tr.kind == TransferKind::Send && tr.packets_outstanding() == 0 {
            return;
        }
        self.fail_transfer(id, FailReason::Timeout);
    }

    fn fail_transfer(&mut self, id: u64, reason: FailReason) {
        if self.transfers.get(&id).is_some_and(|t| t.in_flight()) {
            self.finish_transfer(id, TransferStatus::Failed(reason));
        }
    }

    pub(crate) fn finish_transfer(&mut self, id: u64, status: TransferStatus) {
        let Some(tr) = self.transfers.remove(&id) else { return };
        self.finished.insert(id, status);
        let now = self.now();
        trace!(
            self.trace,
            now,
            Category::Packet,
            "ev=complete xfer={id} kind={} src={} dst={} len={} status={status} latency={}",
            tr.kind.name(),
            tr.initiator,
            tr.target,
            tr.total_len,
            now - tr.started
        );
        let ev = |rank, side| CompletionEvent {
            transfer_id: id,
            kind: tr.kind,
            at: now,
            status,
            rank,
            side,
            addr: tr.remote_addr,
        };
        let target_owner = match (tr.kind, status) {
            (TransferKind::Put, TransferStatus::Complete) => self.tiles[tr.target.index()].memory.owner(tr.remote_addr),
            _ => None,
        };
        self.notify(tr.owner, ev(tr.initiator, Side::Initiator));
        if let Some(o) = target_owner {
            self.notify(o, ev(tr.target, Side::Target));
        }
        match (tr.kind, status) {
            (TransferKind::Get, TransferStatus::Complete) => {
                self.get_data.insert(id, tr.buffer);
            }
            (TransferKind::Send, TransferStatus::Complete) if tr.remote_addr == DAL_TAG => {
                self.dal_receive(tr.target, tr.buffer);
            }
            _ => {}
        }
    }

    fn notify(&mut self, owner: Owner, ev: CompletionEvent) {
        match owner {
            Owner::User => self.tiles[ev.rank.index()].cq.push_back(ev),
            Owner::Lp(lp) => self.lp_notify(lp, ev),
            Owner::Internal(_) => self.dal_completion(ev),
        }
    }

    /// Kill or restore one direction of a link.
    pub(crate) fn set_link_health(&mut self, l: LinkId, h: LinkHealth) {
        self.links[link_index(l)].health = h;
    }
}
