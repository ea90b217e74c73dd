//! The simulated fabric: one scheduler driving DNPs, links, LO|FA|MO agents,
//! injected faults, logical processes and the application runtime.

mod dal_rt;
mod inject;
mod lofamo_rt;
mod net;
mod procs;
pub mod trace;

pub use dal_rt::{AppState, AppStatus};
pub use procs::{ProcIo, Process, Wait};
pub use trace::{Category, Record, Trace};

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use thiserror::Error;

use crate::dal::AppSpec;
use crate::dnp::{
    CompletionEvent, LinkParams, LinkState, MemoryMap, Packet, RingBuffer, Transfer, TransferStatus, DEFAULT_MTU,
    DEFAULT_RING_CAPACITY, HEADER_BYTES,
};
use crate::engine::{CounterRng, EngineError, RunStats, Scheduler, SimTime, TieBreak};
use crate::faultinject::{FaultSpec, ProbeTable};
use crate::lofamo::{
    EventDedup, FaultTable, Hierarchy, LinkMonitor, LofamoParams, ServiceBody, WatchdogRegister, Writer,
};
use crate::topology::{Direction, LinkId, Rank, TorusGeometry};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// How LO|FA|MO and control messages travel on the DNP side.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ServiceNet {
    /// Service packets share the torus links.
    Shared,
    /// A separate network with a fixed one-way latency.
    Dedicated,
}

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub geometry: TorusGeometry,
    pub link: LinkParams,
    pub mtu: usize,
    pub ring_capacity: usize,
    pub lofamo: LofamoParams,
    pub lofamo_enabled: bool,
    pub service_net: ServiceNet,
    pub seed: u64,
    pub tie: TieBreak,
    pub ttl: u32,
    /// An INSTALL not acknowledged within this window counts as a NACK.
    pub control_timeout: u64,
    /// Interval of the zero-progress check while apps run.
    pub watchdog_interval: u64,
    /// A stopping app that has not drained after this long is removed.
    pub stop_grace: u64,
    pub keep_trace: bool,
    pub trace_packets: bool,
}

impl SimConfig {
    pub fn new(geometry: TorusGeometry) -> Self {
        SimConfig {
            geometry,
            link: LinkParams::default(),
            mtu: DEFAULT_MTU,
            ring_capacity: DEFAULT_RING_CAPACITY,
            lofamo: LofamoParams::default(),
            lofamo_enabled: true,
            service_net: ServiceNet::Shared,
            seed: 1,
            tie: TieBreak::Fifo,
            ttl: geometry.default_ttl(),
            control_timeout: 50_000,
            watchdog_interval: 1_000_000,
            stop_grace: 500_000,
            keep_trace: true,
            trace_packets: true,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.lofamo.validate().map_err(|e| SimError::Config(e.to_string()))?;
        if self.link.bandwidth_bits_per_cycle == 0 {
            return Err(SimError::Config("link bandwidth must be positive".into()));
        }
        if self.mtu == 0 || self.mtu > 1 << 20 {
            return Err(SimError::Config(format!("mtu {} out of range", self.mtu)));
        }
        if self.ring_capacity == 0 {
            return Err(SimError::Config("ring capacity must be positive".into()));
        }
        if self.geometry.tiles() > u16::MAX as u32 {
            return Err(SimError::Config("at most 65535 tiles fit the packet header".into()));
        }
        for (name, v) in [
            ("control_timeout", self.control_timeout),
            ("watchdog_interval", self.watchdog_interval),
            ("stop_grace", self.stop_grace),
        ] {
            if v == 0 {
                return Err(SimError::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Packet accounting. At quiescence
/// `injected == delivered + dropped_probe + dropped_crc + lost + undeliverable`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct NetStats {
    pub injected: u64,
    pub delivered: u64,
    pub dropped_probe: u64,
    pub dropped_crc: u64,
    /// Sent onto a dead link or into a dead DNP.
    pub lost: u64,
    pub undeliverable: u64,
    pub corrupted: u64,
    /// Corrupted packets that passed the CRC check. Always zero.
    pub crc_escapes: u64,
    pub in_flight: u64,
}

impl NetStats {
    pub fn conserved(&self) -> bool {
        self.injected
            == self.delivered + self.dropped_probe + self.dropped_crc + self.lost + self.undeliverable + self.in_flight
    }
}

#[derive(Debug)]
pub(crate) enum Action {
    Arrive { link: LinkId, pkt: Box<Packet> },
    Loopback { rank: Rank, pkt: Box<Packet> },
    RingRetry { rank: Rank },
    Timeout { transfer: u64 },
    Inject { clause: usize, restore: bool },
    Heartbeat { tile: Rank, writer: Writer },
    Check { tile: Rank, checker: Writer },
    LifamaTick { tile: Rank },
    Keepalive { tile: Rank },
    SilenceCheck { node: Rank },
    Service { to: Rank, side: Writer, body: Box<ServiceBody> },
    Wake { lp: u32 },
    Dal(dal_rt::DalAction),
}

pub(crate) struct Tile {
    pub host_alive: bool,
    pub dnp_alive: bool,
    /// Written by the host, checked by the DNP fault manager.
    pub hwr: WatchdogRegister,
    /// Written by the DNP, checked by the host fault manager.
    pub dwr: WatchdogRegister,
    pub ring: RingBuffer,
    pub memory: MemoryMap,
    pub cq: VecDeque<CompletionEvent>,
    /// Inbound links, indexed by the direction they come from.
    pub monitors: [LinkMonitor; 6],
    pub crc_errors: [u32; 6],
    pub table: FaultTable,
    pub seen_msgs: BTreeSet<(u32, u64)>,
    pub next_msg: u64,
    pub dedup: EventDedup,
    /// Last keepalive per child, host side then DNP side.
    pub child_seen: BTreeMap<Rank, [u64; 2]>,
    pub keepalive_seq: u64,
}

impl Tile {
    fn new(cfg: &SimConfig) -> Self {
        Tile {
            host_alive: true,
            dnp_alive: true,
            hwr: WatchdogRegister::new(Writer::Host, cfg.lofamo.t_wd),
            dwr: WatchdogRegister::new(Writer::Dnp, cfg.lofamo.t_wd),
            ring: RingBuffer::new(cfg.ring_capacity),
            memory: MemoryMap::default(),
            cq: VecDeque::new(),
            monitors: [LinkMonitor::default(); 6],
            crc_errors: [0; 6],
            table: FaultTable::default(),
            seen_msgs: BTreeSet::new(),
            next_msg: 0,
            dedup: EventDedup::default(),
            child_seen: BTreeMap::new(),
            keepalive_seq: 0,
        }
    }

    pub fn alive(&self, side: Writer) -> bool {
        match side {
            Writer::Host => self.host_alive,
            Writer::Dnp => self.dnp_alive,
        }
    }

    pub fn healthy(&self) -> bool {
        self.host_alive && self.dnp_alive
    }
}

pub struct Sim {
    pub(crate) cfg: SimConfig,
    pub(crate) geom: TorusGeometry,
    pub(crate) hier: Hierarchy,
    pub(crate) sched: Scheduler<Action>,
    pub(crate) trace: Trace,
    pub(crate) tiles: Vec<Tile>,
    pub(crate) links: Vec<LinkState>,
    /// Links the routing layer avoids, by undirected identity.
    pub(crate) known_down: BTreeSet<LinkId>,
    pub(crate) transfers: BTreeMap<u64, Transfer>,
    pub(crate) finished: BTreeMap<u64, TransferStatus>,
    pub(crate) get_data: BTreeMap<u64, Vec<u8>>,
    pub(crate) next_xfer: u64,
    pub(crate) next_pkt: u64,
    pub(crate) stats: NetStats,
    pub(crate) probes: ProbeTable,
    pub(crate) faults: FaultSpec,
    pub(crate) lps: Vec<procs::LpSlot>,
    pub(crate) dal: Option<dal_rt::DalRuntime>,
    pub(crate) alarms: Vec<String>,
    started: bool,
}

impl Sim {
    pub fn new(cfg: SimConfig) -> Result<Sim, SimError> {
        cfg.validate()?;
        let geom = cfg.geometry;
        let links = geom
            .ranks()
            .flat_map(|r| Direction::ALL.into_iter().map(move |d| LinkState::new(LinkId::new(r, d))))
            .collect();
        let mut trace = Trace::new(cfg.keep_trace);
        trace.packets = cfg.trace_packets;
        Ok(Sim {
            hier: Hierarchy::new(&geom),
            sched: Scheduler::new(cfg.tie),
            trace,
            tiles: geom.ranks().map(|_| Tile::new(&cfg)).collect(),
            links,
            known_down: BTreeSet::new(),
            transfers: BTreeMap::new(),
            finished: BTreeMap::new(),
            get_data: BTreeMap::new(),
            next_xfer: 1,
            next_pkt: 0,
            stats: NetStats::default(),
            probes: ProbeTable::default(),
            faults: FaultSpec::default(),
            lps: Vec::new(),
            dal: None,
            alarms: Vec::new(),
            started: false,
            geom,
            cfg,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn geometry(&self) -> &TorusGeometry {
        &self.geom
    }

    pub fn hierarchy(&self) -> &Hierarchy {
        &self.hier
    }

    pub fn now(&self) -> u64 {
        self.sched.now().0
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    /// Hash of the trace so far.
    pub fn trace_hash(&self) -> String {
        self.trace.hash()
    }

    /// Hash of the event dispatch log so far.
    pub fn dispatch_hash(&self) -> String {
        self.sched.dispatch_hash()
    }

    pub fn stats(&self) -> NetStats {
        self.stats
    }

    pub fn link(&self, l: LinkId) -> &LinkState {
        &self.links[link_index(l)]
    }

    /// Every directed link between distinct tiles.
    pub fn link_states(&self) -> impl Iterator<Item = &LinkState> + '_ {
        self.links.iter().filter(|l| !self.geom.is_self_link(l.id))
    }

    /// The master's fault table.
    pub fn master_table(&self) -> &FaultTable {
        &self.tiles[self.hier.master().index()].table
    }

    pub fn controller_table(&self, controller: Rank) -> &FaultTable {
        &self.tiles[controller.index()].table
    }

    pub fn routing_avoids(&self, l: LinkId) -> bool {
        self.known_down.contains(&self.geom.undirected(l))
    }

    /// Integrity alarms raised so far (replica divergence, CRC escapes).
    pub fn alarms(&self) -> &[String] {
        &self.alarms
    }

    pub fn tile_alive(&self, r: Rank, side: Writer) -> bool {
        self.tiles[r.index()].alive(side)
    }

    /// Arm a fault spec. Must precede the first `run_until`.
    pub fn arm(&mut self, spec: &FaultSpec) -> Result<(), SimError> {
        if self.started {
            return Err(SimError::Config("faults must be armed before the run starts".into()));
        }
        spec.validate(&self.geom).map_err(|e| SimError::Config(e.to_string()))?;
        let rng = CounterRng::new(spec.seed.unwrap_or(self.cfg.seed));
        self.probes = ProbeTable::new(spec, &rng);
        self.faults = spec.clone();
        Ok(())
    }

    /// Install the application layer. Must precede the first `run_until`.
    pub fn deploy_apps(&mut self, spec: AppSpec) -> Result<(), SimError> {
        if self.started {
            return Err(SimError::Config("apps must be installed before the run starts".into()));
        }
        self.dal = Some(dal_rt::DalRuntime::new(spec, &self.geom).map_err(SimError::Config)?);
        Ok(())
    }

    fn start(&mut self) {
        self.started = true;
        self.arm_faults();
        if self.cfg.lofamo_enabled {
            self.start_lofamo();
        }
        if self.dal.is_some() {
            self.start_dal();
        }
    }

    /// Dispatch every event up to and including `t_end`.
    pub fn run_until(&mut self, t_end: u64) -> Result<RunStats, SimError> {
        if !self.started {
            self.start();
        }
        let before = self.sched.dispatched();
        while let Some(ev) = self.sched.pop_due(SimTime(t_end)) {
            self.dispatch(ev.action);
        }
        self.sched.settle(SimTime(t_end));
        Ok(RunStats { dispatched: self.sched.dispatched() - before, final_time: self.sched.now() })
    }

    fn dispatch(&mut self, a: Action) {
        match a {
            Action::Arrive { link, pkt } => self.on_arrive(link, pkt),
            Action::Loopback { rank, pkt } => self.deliver(rank, *pkt),
            Action::RingRetry { rank } => self.on_ring_retry(rank),
            Action::Timeout { transfer } => self.on_timeout(transfer),
            Action::Inject { clause, restore } => self.on_inject(clause, restore),
            Action::Heartbeat { tile, writer } => self.on_heartbeat(tile, writer),
            Action::Check { tile, checker } => self.on_check(tile, checker),
            Action::LifamaTick { tile } => self.on_lifama_tick(tile),
            Action::Keepalive { tile } => self.on_keepalive(tile),
            Action::SilenceCheck { node } => self.on_silence_check(node),
            Action::Service { to, side, body } => {
                if self.tiles[to.index()].alive(side) {
                    self.on_service(to, side, *body);
                }
            }
            Action::Wake { lp } => self.on_wake(lp),
            Action::Dal(d) => self.on_dal(d),
        }
    }

    pub(crate) fn alarm(&mut self, msg: String) {
        crate::trace!(self.trace, self.now(), Category::App, "ev=alarm msg={}", msg.replace(' ', "_"));
        self.alarms.push(msg);
    }

    /// Largest packet on the wire.
    pub(crate) fn max_wire(&self) -> usize {
        HEADER_BYTES + self.cfg.mtu + crate::dnp::CRC_BYTES
    }

    /// Longest time a packet of a `packets`-long transfer can take end to
    /// end on an idle fabric: every packet serialized, then the longest
    /// path the misroute budget allows.
    pub fn worst_path_latency(&self, packets: u32) -> u64 {
        let ser = self.cfg.link.serialization(self.max_wire(), 1);
        let hops = (self.geom.diameter() + self.cfg.ttl) as u64;
        packets as u64 * ser + hops * (self.cfg.link.hop_latency + ser)
    }

    /// Upper bound on one level of LDM propagation.
    pub fn propagation_bound_per_level(&self) -> u64 {
        let torus = match self.cfg.service_net {
            ServiceNet::Shared => {
                let ser = self.cfg.link.serialization(HEADER_BYTES + 256 + crate::dnp::CRC_BYTES, 1);
                self.geom.diameter() as u64 * (self.cfg.link.hop_latency + ser)
            }
            ServiceNet::Dedicated => self.cfg.lofamo.service_net_latency,
        };
        self.cfg.lofamo.host_net_latency.max(torus)
    }
}

pub(crate) fn link_index(l: LinkId) -> usize {
    l.src.index() * 6 + l.dir.index()
}

/// Inbound link of `tile` coming from direction `d`.
pub(crate) fn in_link(geom: &TorusGeometry, tile: Rank, d: Direction) -> LinkId {
    geom.reverse(LinkId::new(tile, d))
}
