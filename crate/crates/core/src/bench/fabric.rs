//! The benchmarks running on the simulated fabric: the stencil as logical
//! processes exchanging halos by RDMA PUT, the spiking network as a DAL
//! process network.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::rc::Rc;

use thiserror::Error;

use super::dpsnn::{decode_spikes, DpsnnConfig, DpsnnError, SpikeRaster};
use super::stencil::{checksum, decode_face, encode_face, gather, StencilBlock, StencilConfig, StencilError};
use crate::dal::{AppSpec, BehaviorSpec, ChannelSpec, ProcessNetwork, ProcessSpec};
use crate::dnp::{Side, TransferStatus};
use crate::sim::{AppState, ProcIo, Process, Sim, SimConfig, SimError, Wait};
use crate::topology::{Coord, LinkId, Rank, TorusGeometry};

/// Halo regions start here on every tile.
pub const HALO_BASE: u64 = 0x1000_0000;

/// Cycles simulated between completion checks.
const SLICE: u64 = 50_000;

#[derive(Debug, Error)]
pub enum FabricError {
    #[error(transparent)]
    Stencil(#[from] StencilError),
    #[error(transparent)]
    Dpsnn(#[from] DpsnnError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("block {block}: {msg}")]
    Transfer { block: usize, msg: String },
    #[error("app {app} ended {state}: {reason}")]
    App { app: String, state: AppState, reason: String },
    #[error("not finished by cycle {0}")]
    Deadline(u64),
}

/// Tile hosting a block. A block grid that fits the torus keeps its x, y, z
/// layout; anything else is dealt round robin.
pub fn block_rank(cfg: &StencilConfig, geom: &TorusGeometry, block: usize) -> Rank {
    let d = geom.dims();
    let fits = cfg.blocks[3] == 1 && (0..3).all(|i| cfg.blocks[i] <= d[i] as usize);
    if fits {
        let c = cfg.block_coords(block);
        geom.coords_to_rank(Coord::new(c[0] as u32, c[1] as u32, c[2] as u32)).expect("block grid fits")
    } else {
        Rank((block % geom.tiles() as usize) as u32)
    }
}

/// Halo slots of one block: two parities, four dims, two sides.
#[derive(Clone, Debug)]
struct Layout {
    offsets: [[[u64; 2]; 4]; 2],
    span: u64,
}

impl Layout {
    fn new(cfg: &StencilConfig) -> Self {
        let mut offsets = [[[0; 2]; 4]; 2];
        let mut at = 0u64;
        for par in offsets.iter_mut() {
            for (dim, sides) in par.iter_mut().enumerate() {
                for side in sides.iter_mut() {
                    *side = at;
                    at += cfg.face_bytes(dim) as u64;
                }
            }
        }
        Layout { offsets, span: at.next_multiple_of(4096) }
    }

    fn base(&self, block: usize) -> u64 {
        HALO_BASE + block as u64 * self.span
    }

    fn slot(&self, block: usize, parity: usize, dim: usize, plus: bool) -> u64 {
        self.base(block) + self.offsets[parity][dim][plus as usize]
    }

    fn parity_of(&self, block: usize, addr: u64) -> usize {
        (addr - self.base(block) >= self.offsets[1][0][0]) as usize
    }
}

#[derive(Default)]
struct Shared {
    blocks: BTreeMap<usize, StencilBlock>,
    failures: Vec<(usize, String)>,
    finished_at: u64,
}

struct StencilLp {
    cfg: StencilConfig,
    layout: Layout,
    ranks: Rc<Vec<Rank>>,
    block: Option<StencilBlock>,
    index: usize,
    iter: u32,
    started: bool,
    sent: bool,
    arrived: [usize; 2],
    remote: usize,
    shared: Rc<RefCell<Shared>>,
}

impl StencilLp {
    fn fail(&mut self, msg: String) -> Wait {
        self.shared.borrow_mut().failures.push((self.index, msg));
        Wait::Done
    }

    fn send_faces(&mut self, io: &mut ProcIo<'_>) -> Result<(), String> {
        let par = (self.iter % 2) as usize;
        let block = self.block.as_mut().expect("block present while running");
        for dim in 0..4 {
            for plus in [false, true] {
                let nb = self.cfg.neighbor_block(self.index, dim, plus);
                let face = block.face(dim, plus);
                if nb == self.index {
                    block.set_halo(dim, !plus, &face).map_err(|e| e.to_string())?;
                } else {
                    let addr = self.layout.slot(nb, par, dim, !plus);
                    io.put(self.ranks[nb], addr, encode_face(&face)).map_err(|e| e.to_string())?;
                }
            }
        }
        Ok(())
    }

    fn absorb_halos(&mut self, io: &ProcIo<'_>) -> Result<(), String> {
        let par = (self.iter % 2) as usize;
        let block = self.block.as_mut().expect("block present while running");
        for dim in 0..4 {
            for plus in [false, true] {
                if self.cfg.neighbor_block(self.index, dim, plus) == self.index {
                    continue;
                }
                let addr = self.layout.slot(self.index, par, dim, plus);
                let bytes = io.read(addr, self.cfg.face_bytes(dim)).map_err(|e| e.to_string())?;
                block.set_halo(dim, plus, &decode_face(bytes)).map_err(|e| e.to_string())?;
            }
        }
        Ok(())
    }
}

impl Process for StencilLp {
    fn resume(&mut self, io: &mut ProcIo<'_>) -> Wait {
        if !self.started {
            self.started = true;
            let base = self.layout.base(self.index);
            if let Err(e) = io.register(base, self.layout.span as usize) {
                return self.fail(e.to_string());
            }
        }
        while let Some(ev) = io.next_completion() {
            match (ev.side, ev.status) {
                (Side::Target, TransferStatus::Complete) => {
                    self.arrived[self.layout.parity_of(self.index, ev.addr)] += 1;
                }
                (Side::Initiator, TransferStatus::Complete) => {}
                (_, s) => return self.fail(format!("halo transfer {} {s:?}", ev.transfer_id)),
            }
        }
        loop {
            if self.iter == self.cfg.iterations {
                let mut sh = self.shared.borrow_mut();
                sh.blocks.insert(self.index, self.block.take().expect("block present while running"));
                sh.finished_at = sh.finished_at.max(io.now());
                return Wait::Done;
            }
            if !self.sent {
                if let Err(e) = self.send_faces(io) {
                    return self.fail(e);
                }
                self.sent = true;
            }
            let par = (self.iter % 2) as usize;
            if self.arrived[par] < self.remote {
                return Wait::Event;
            }
            self.arrived[par] -= self.remote;
            if let Err(e) = self.absorb_halos(io) {
                return self.fail(e);
            }
            self.block.as_mut().expect("block present while running").update();
            self.iter += 1;
            self.sent = false;
        }
    }
}

/// A stencil decomposed over logical processes of a running simulation.
pub struct StencilJob {
    cfg: StencilConfig,
    lps: Vec<u32>,
    shared: Rc<RefCell<Shared>>,
}

impl StencilJob {
    /// One process per block, placed by [`block_rank`].
    pub fn spawn(sim: &mut Sim, cfg: &StencilConfig) -> Result<StencilJob, FabricError> {
        cfg.validate()?;
        let layout = Layout::new(cfg);
        let ranks: Rc<Vec<Rank>> =
            Rc::new((0..cfg.block_count()).map(|b| block_rank(cfg, sim.geometry(), b)).collect());
        let shared = Rc::new(RefCell::new(Shared::default()));
        let mut lps = Vec::new();
        for b in 0..cfg.block_count() {
            let remote =
                (0..4).flat_map(|d| [false, true].map(|p| cfg.neighbor_block(b, d, p))).filter(|&nb| nb != b).count();
            let lp = StencilLp {
                cfg: cfg.clone(),
                layout: layout.clone(),
                ranks: ranks.clone(),
                block: Some(StencilBlock::new(cfg, b)?),
                index: b,
                iter: 0,
                started: false,
                sent: false,
                arrived: [0; 2],
                remote,
                shared: shared.clone(),
            };
            lps.push(sim.spawn(ranks[b], Box::new(lp))?);
        }
        Ok(StencilJob { cfg: cfg.clone(), lps, shared })
    }

    pub fn finished(&self, sim: &Sim) -> bool {
        self.lps.iter().all(|&lp| sim.lp_done(lp))
    }

    /// The gathered field once every block is done.
    pub fn result(&self) -> Result<Vec<f64>, FabricError> {
        let sh = self.shared.borrow();
        if let Some((block, msg)) = sh.failures.first() {
            return Err(FabricError::Transfer { block: *block, msg: msg.clone() });
        }
        if sh.blocks.len() != self.cfg.block_count() {
            let missing = (0..self.cfg.block_count()).find(|b| !sh.blocks.contains_key(b)).unwrap_or(0);
            return Err(FabricError::Transfer { block: missing, msg: "did not finish".into() });
        }
        let blocks: Vec<StencilBlock> = sh.blocks.values().cloned().collect();
        Ok(gather(&self.cfg, &blocks))
    }

    /// Cycle at which the last block finished.
    pub fn finished_at(&self) -> u64 {
        self.shared.borrow().finished_at
    }
}

#[derive(Clone, Debug)]
pub struct FabricStencil {
    pub field: Vec<f64>,
    pub checksum: String,
    pub finished_at: u64,
    /// Payload bytes carried per directed link, links that carried none
    /// omitted.
    pub link_payload: BTreeMap<LinkId, u64>,
}

/// Run the stencil on a fresh simulation until done or `deadline`.
pub fn run_stencil_on_fabric(
    cfg: &StencilConfig,
    sim_cfg: SimConfig,
    deadline: u64,
) -> Result<FabricStencil, FabricError> {
    let mut sim = Sim::new(sim_cfg)?;
    let job = StencilJob::spawn(&mut sim, cfg)?;
    run_sliced(&mut sim, deadline, |s| job.finished(s))?;
    let field = job.result()?;
    let link_payload = sim.link_states().filter(|l| l.payload_bytes > 0).map(|l| (l.id, l.payload_bytes)).collect();
    Ok(FabricStencil { checksum: checksum(&field), field, finished_at: job.finished_at(), link_payload })
}

fn run_sliced(sim: &mut Sim, deadline: u64, mut done: impl FnMut(&Sim) -> bool) -> Result<(), FabricError> {
    loop {
        let t = (sim.now() + SLICE).min(deadline);
        sim.run_until(t)?;
        if done(sim) {
            return Ok(());
        }
        if t >= deadline {
            return Err(FabricError::Deadline(deadline));
        }
    }
}

/// Name of the app built by [`build_dpsnn`].
pub const DPSNN_APP: &str = "dpsnn";
/// Its raster sink process.
pub const DPSNN_SINK: &str = "raster";

/// Fully connected partitions, each also feeding the raster sink. Only
/// size, partitioning, duration and seed travel in a behavior, so every
/// other parameter must be at its default.
pub fn build_dpsnn(cfg: &DpsnnConfig) -> Result<ProcessNetwork, DpsnnError> {
    cfg.validate()?;
    let carried = DpsnnConfig {
        neurons: cfg.neurons,
        synapses_per_neuron: cfg.synapses_per_neuron,
        partitions: cfg.partitions,
        duration_ms: cfg.duration_ms,
        seed: cfg.seed,
        ..DpsnnConfig::default()
    };
    if carried != *cfg {
        return Err(DpsnnError::Config(
            "only neurons, synapses_per_neuron, partitions, duration_ms and seed can run as an app".into(),
        ));
    }
    let of = cfg.partitions;
    let mut net = ProcessNetwork::new(DPSNN_APP);
    let name = |p: u32| format!("p{p}");
    for part in 0..of {
        let behavior = BehaviorSpec::Dpsnn {
            part,
            of,
            neurons: cfg.neurons,
            synapses: cfg.synapses_per_neuron,
            ms: cfg.duration_ms,
            seed: cfg.seed,
        };
        let weight = cfg.partition_range(part).len().max(1) as u64;
        net.processes.push(ProcessSpec { id: name(part), behavior, weight });
    }
    net.processes.push(ProcessSpec { id: DPSNN_SINK.into(), behavior: BehaviorSpec::RasterSink, weight: 1 });
    for from in 0..of {
        for to in (0..of).filter(|&t| t != from) {
            net.channels.push(ChannelSpec { from: name(from), to: name(to), capacity: 2 });
        }
        net.channels.push(ChannelSpec { from: name(from), to: DPSNN_SINK.into(), capacity: 2 });
    }
    net.validate().map_err(DpsnnError::Config)?;
    Ok(net)
}

/// Spikes recorded by a raster sink, in canonical order.
pub fn raster_from_items(items: &[Vec<u8>]) -> Option<SpikeRaster> {
    let mut r = SpikeRaster(Vec::new());
    for item in items {
        let (t, ids) = decode_spikes(item)?;
        r.0.extend(ids.into_iter().map(|id| (t, id)));
    }
    r.canonicalize();
    Some(r)
}

/// Deploy [`build_dpsnn`] on a fresh simulation and collect its raster.
pub fn run_dpsnn_on_fabric(cfg: &DpsnnConfig, sim_cfg: SimConfig, deadline: u64) -> Result<SpikeRaster, FabricError> {
    let mut sim = Sim::new(sim_cfg)?;
    sim.deploy_apps(AppSpec::from_apps(vec![build_dpsnn(cfg)?]))?;
    let ended = |s: &Sim| {
        s.app_status(DPSNN_APP)
            .is_some_and(|st| matches!(st.state, AppState::Completed | AppState::Failed | AppState::Stopped))
    };
    run_sliced(&mut sim, deadline, ended)?;
    let st = sim.app_status(DPSNN_APP).expect("deployed");
    if st.state != AppState::Completed {
        return Err(FabricError::App { app: st.name, state: st.state, reason: st.reason.unwrap_or_default() });
    }
    let items = sim.app_output(DPSNN_APP, DPSNN_SINK).unwrap_or_default();
    raster_from_items(&items).ok_or_else(|| FabricError::App {
        app: DPSNN_APP.into(),
        state: st.state,
        reason: "malformed spike list".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::dpsnn::run_lockstep;
    use crate::bench::stencil::reference;
    use crate::sim::ServiceNet;
    use crate::topology::Direction;

    fn quiet(dims: &str) -> SimConfig {
        let mut c = SimConfig::new(dims.parse().unwrap());
        c.service_net = ServiceNet::Dedicated;
        c
    }

    #[test]
    fn stencil_matches_reference_and_loads_plus_links() {
        let cfg = StencilConfig { iterations: 3, ..StencilConfig::default() };
        let run = run_stencil_on_fabric(&cfg, quiet("2x2x2"), 50_000_000).unwrap();
        assert_eq!(run.checksum, checksum(&reference(&cfg).unwrap()));
        let geom: TorusGeometry = "2x2x2".parse().unwrap();
        for l in geom.links() {
            let want = if l.dir.is_plus() { 3 * 2 * cfg.face_bytes(l.dir.axis()) as u64 } else { 0 };
            assert_eq!(run.link_payload.get(&l).copied().unwrap_or(0), want, "{l}");
        }
        assert_eq!(cfg.face_bytes(Direction::XPlus.axis()), 1024);
    }

    #[test]
    fn single_block_needs_no_network() {
        let cfg = StencilConfig { blocks: [1, 1, 1, 1], iterations: 2, ..StencilConfig::default() };
        let run = run_stencil_on_fabric(&cfg, quiet("2x2x2"), 1_000_000).unwrap();
        assert_eq!(run.field, reference(&cfg).unwrap());
        assert!(run.link_payload.is_empty());
    }

    #[test]
    fn uneven_grid_deals_blocks_round_robin() {
        let cfg = StencilConfig { blocks: [2, 1, 1, 2], iterations: 2, ..StencilConfig::default() };
        let geom: TorusGeometry = "2x2x2".parse().unwrap();
        assert_eq!(block_rank(&cfg, &geom, 3), Rank(3));
        let run = run_stencil_on_fabric(&cfg, quiet("2x2x2"), 50_000_000).unwrap();
        assert_eq!(run.checksum, checksum(&reference(&cfg).unwrap()));
    }

    #[test]
    fn dpsnn_app_matches_lockstep() {
        let cfg = DpsnnConfig {
            neurons: 240,
            synapses_per_neuron: 20,
            partitions: 3,
            duration_ms: 40,
            seed: 5,
            ..DpsnnConfig::default()
        };
        let want = run_lockstep(&cfg).unwrap();
        let got = run_dpsnn_on_fabric(&cfg, SimConfig::new("2x2x2".parse().unwrap()), 200_000_000).unwrap();
        assert_eq!(got, want);
        assert!(!got.is_empty());
    }

    #[test]
    fn dpsnn_rejects_uncarried_parameters() {
        let cfg = DpsnnConfig { heterogeneous: true, ..DpsnnConfig::default() };
        assert!(build_dpsnn(&cfg).is_err());
        let net = build_dpsnn(&DpsnnConfig { partitions: 4, ..DpsnnConfig::default() }).unwrap();
        assert_eq!(net.processes.len(), 5);
        assert_eq!(net.channels.len(), 4 * 3 + 4);
    }
}
