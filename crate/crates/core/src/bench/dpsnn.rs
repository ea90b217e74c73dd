//! Distributed polychronous spiking network with STDP.
//!
//! Every random quantity (cell parameters, targets, delays, thalamic input)
//! is drawn from a stream keyed by a global id, so a partition can rebuild
//! exactly its share of the network without knowing how many partitions
//! exist. Synaptic currents are summed per target in ascending synapse order
//! and cells are stepped in ascending id, which makes the raster
//! bit-identical for any partition count.

use std::fmt::Write as _;

use thiserror::Error;

use super::neuron::{
    izhikevich_step, stdp_update, IzhParams, NeuronError, NeuronKind, NeuronState, SpikeEvent, StdpParams, Synapse,
};
use crate::engine::CounterRng;

const TAG_NEURON: u64 = 0xD501;
const TAG_SYNAPSE: u64 = 0xD502;
const TAG_THALAMIC: u64 = 0xD503;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DpsnnError {
    #[error("invalid DPSNN configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Neuron(#[from] NeuronError),
    #[error("partition {part} expected step {expected}, got {got}")]
    OutOfStep { part: u32, expected: u32, got: u32 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DpsnnConfig {
    pub neurons: u32,
    pub synapses_per_neuron: u32,
    pub partitions: u32,
    pub duration_ms: u32,
    pub seed: u64,
    pub max_delay_ms: u32,
    pub excitatory_fraction: f64,
    pub thalamic_current: f64,
    pub initial_excitatory_weight: f64,
    pub inhibitory_weight: f64,
    /// Draw per-cell a,b,c,d from the heterogeneous families instead of the
    /// fixed regular-spiking / fast-spiking constants.
    pub heterogeneous: bool,
    /// Fixed delay for inhibitory synapses; `None` draws them like the
    /// excitatory ones.
    pub inhibitory_delay_ms: Option<u32>,
    pub stdp: StdpParams,
}

impl Default for DpsnnConfig {
    fn default() -> Self {
        DpsnnConfig {
            neurons: 1000,
            synapses_per_neuron: 100,
            partitions: 1,
            duration_ms: 1000,
            seed: 1,
            max_delay_ms: 20,
            excitatory_fraction: 0.8,
            thalamic_current: 20.0,
            initial_excitatory_weight: 6.0,
            inhibitory_weight: 5.0,
            heterogeneous: false,
            inhibitory_delay_ms: Some(1),
            stdp: StdpParams::default(),
        }
    }
}

impl DpsnnConfig {
    pub fn validate(&self) -> Result<(), DpsnnError> {
        let err = |m: String| Err(DpsnnError::Config(m));
        if self.neurons < 2 {
            return err(format!("need at least 2 neurons, got {}", self.neurons));
        }
        if self.partitions == 0 || !self.neurons.is_multiple_of(self.partitions) {
            return err(format!("{} neurons not divisible into {} partitions", self.neurons, self.partitions));
        }
        if self.synapses_per_neuron >= self.neurons {
            return err(format!(
                "{} synapses per neuron needs more than {} neurons",
                self.synapses_per_neuron, self.neurons
            ));
        }
        if self.max_delay_ms == 0 {
            return err("max delay must be >= 1 ms".into());
        }
        if let Some(d) = self.inhibitory_delay_ms.filter(|&d| d == 0 || d > self.max_delay_ms) {
            return err(format!("inhibitory delay {d} outside [1,{}]", self.max_delay_ms));
        }
        if !(0.0..=1.0).contains(&self.excitatory_fraction) {
            return err(format!("excitatory fraction {} outside [0,1]", self.excitatory_fraction));
        }
        if self.excitatory_count() < 1 {
            return err("network has no excitatory neurons".into());
        }
        Ok(())
    }

    pub fn excitatory_count(&self) -> u32 {
        (self.neurons as f64 * self.excitatory_fraction).round() as u32
    }

    pub fn kind_of(&self, id: u32) -> NeuronKind {
        if id < self.excitatory_count() {
            NeuronKind::Excitatory
        } else {
            NeuronKind::Inhibitory
        }
    }

    pub fn partition_range(&self, part: u32) -> std::ops::Range<u32> {
        let per = self.neurons / self.partitions;
        part * per..(part + 1) * per
    }

    pub fn partition_of(&self, id: u32) -> u32 {
        id / (self.neurons / self.partitions)
    }

    pub fn total_synapses(&self) -> u64 {
        self.neurons as u64 * self.synapses_per_neuron as u64
    }

    fn rng(&self) -> CounterRng {
        CounterRng::new(self.seed)
    }

    pub fn neuron(&self, id: u32) -> NeuronState {
        let mut s = self.rng().stream(CounterRng::key(TAG_NEURON, id as u64));
        let r = s.uniform();
        let kind = self.kind_of(id);
        let params = match (kind, self.heterogeneous) {
            (NeuronKind::Excitatory, true) => IzhParams::excitatory(r),
            (NeuronKind::Inhibitory, true) => IzhParams::inhibitory(r),
            (NeuronKind::Excitatory, false) => IzhParams::RS,
            (NeuronKind::Inhibitory, false) => IzhParams::FS,
        };
        NeuronState::at_rest(id, kind, params)
    }

    /// Outgoing synapses of `pre`, in generation order.
    ///
    /// Excitatory cells project to any other cell, inhibitory cells to
    /// excitatory cells only; targets are distinct.
    pub fn outgoing(&self, pre: u32) -> Vec<Synapse> {
        let mut s = self.rng().stream(CounterRng::key(TAG_SYNAPSE, pre as u64));
        let kind = self.kind_of(pre);
        let pool = match kind {
            NeuronKind::Excitatory => self.neurons,
            NeuronKind::Inhibitory => self.excitatory_count(),
        };
        // inhibitory cells may have fewer eligible targets than requested
        let want = self.synapses_per_neuron.min(pool - u32::from(pre < pool));
        let mut targets: Vec<u32> = Vec::with_capacity(want as usize);
        while (targets.len() as u32) < want {
            let t = s.below(pool as u64) as u32;
            if t != pre && !targets.contains(&t) {
                targets.push(t);
            }
        }
        targets
            .into_iter()
            .map(|post| {
                let drawn = 1 + s.below(self.max_delay_ms as u64) as u32;
                let delay = match kind {
                    NeuronKind::Inhibitory => self.inhibitory_delay_ms.unwrap_or(drawn),
                    NeuronKind::Excitatory => drawn,
                };
                let (weight, plastic) = match kind {
                    NeuronKind::Excitatory => (self.initial_excitatory_weight, true),
                    NeuronKind::Inhibitory => (self.inhibitory_weight, false),
                };
                Synapse {
                    pre_id: pre,
                    post_id: post,
                    weight,
                    delay,
                    last_arrival: None,
                    last_post_spike: None,
                    plastic,
                }
            })
            .collect()
    }

    /// The cell receiving the thalamic kick at `t_ms`.
    pub fn thalamic_target(&self, t_ms: u32) -> u32 {
        let v = self.rng().value_at(CounterRng::key(TAG_THALAMIC, 0), t_ms as u64);
        ((u128::from(v) * u128::from(self.neurons)) >> 64) as u32
    }
}

/// Canonical spike list: `(t_ms, neuron id)` sorted.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SpikeRaster(pub Vec<(u32, u32)>);

impl SpikeRaster {
    pub fn canonicalize(&mut self) {
        self.0.sort_unstable();
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Text form: one `<t_ms> <neuron_id>` line per spike.
    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(self.0.len() * 10);
        for (t, id) in &self.0 {
            let _ = writeln!(s, "{t} {id}");
        }
        s
    }

    pub fn from_text(text: &str) -> Option<Self> {
        let mut v = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let mut it = line.split_whitespace();
            let t = it.next()?.parse().ok()?;
            let id = it.next()?.parse().ok()?;
            v.push((t, id));
        }
        Some(SpikeRaster(v))
    }

    /// Mean rate in Hz over `neurons` cells and `duration_ms`.
    pub fn mean_rate_hz(&self, neurons: u32, duration_ms: u32) -> f64 {
        self.0.len() as f64 / neurons as f64 / (duration_ms as f64 / 1000.0)
    }
}

/// Spike list for one ms, as carried between partitions.
pub fn encode_spikes(t_ms: u32, ids: &[u32]) -> Vec<u8> {
    let mut b = Vec::with_capacity(4 + 4 * ids.len());
    b.extend_from_slice(&t_ms.to_le_bytes());
    for id in ids {
        b.extend_from_slice(&id.to_le_bytes());
    }
    b
}

pub fn decode_spikes(b: &[u8]) -> Option<(u32, Vec<u32>)> {
    if b.len() < 4 || !b.len().is_multiple_of(4) {
        return None;
    }
    let word = |c: &[u8]| u32::from_le_bytes([c[0], c[1], c[2], c[3]]);
    let t = word(&b[..4]);
    Some((t, b[4..].chunks(4).map(word).collect()))
}

/// The share of the network owned by one partition.
pub struct DpsnnPartition {
    cfg: DpsnnConfig,
    part: u32,
    first: u32,
    neurons: Vec<NeuronState>,
    /// Incoming synapses of owned cells, sorted by (post, pre).
    synapses: Vec<Synapse>,
    /// `post_start[i]..post_start[i+1]`: synapses of the i-th owned cell.
    post_start: Vec<usize>,
    /// Local synapse indices per global pre-synaptic id.
    by_pre: Vec<Vec<u32>>,
    /// Pending arrivals, indexed by arrival ms modulo the delay ring size.
    pending: Vec<Vec<u32>>,
    next_ms: u32,
    spike_counts: Vec<u64>,
}

impl DpsnnPartition {
    pub fn new(cfg: &DpsnnConfig, part: u32) -> Result<Self, DpsnnError> {
        cfg.validate()?;
        if part >= cfg.partitions {
            return Err(DpsnnError::Config(format!("partition {part} of {}", cfg.partitions)));
        }
        let range = cfg.partition_range(part);
        let neurons: Vec<NeuronState> = range.clone().map(|id| cfg.neuron(id)).collect();
        let mut synapses: Vec<Synapse> =
            (0..cfg.neurons).flat_map(|pre| cfg.outgoing(pre)).filter(|s| range.contains(&s.post_id)).collect();
        synapses.sort_by_key(|s| (s.post_id, s.pre_id));
        let mut post_start = Vec::with_capacity(neurons.len() + 1);
        let mut i = 0;
        for id in range.clone() {
            post_start.push(i);
            while i < synapses.len() && synapses[i].post_id == id {
                i += 1;
            }
        }
        post_start.push(synapses.len());
        let mut by_pre = vec![Vec::new(); cfg.neurons as usize];
        for (idx, s) in synapses.iter().enumerate() {
            by_pre[s.pre_id as usize].push(idx as u32);
        }
        Ok(DpsnnPartition {
            part,
            first: range.start,
            spike_counts: vec![0; neurons.len()],
            neurons,
            synapses,
            post_start,
            by_pre,
            pending: vec![Vec::new(); cfg.max_delay_ms as usize + 1],
            next_ms: 0,
            cfg: cfg.clone(),
        })
    }

    pub fn part(&self) -> u32 {
        self.part
    }

    pub fn next_ms(&self) -> u32 {
        self.next_ms
    }

    pub fn finished(&self) -> bool {
        self.next_ms >= self.cfg.duration_ms
    }

    pub fn synapses(&self) -> &[Synapse] {
        &self.synapses
    }

    pub fn neurons(&self) -> &[NeuronState] {
        &self.neurons
    }

    /// Per-cell spike counts, indexed from the first owned id.
    pub fn spike_counts(&self) -> &[u64] {
        &self.spike_counts
    }

    /// Advance one ms. `previous` holds every spike of ms `t - 1` across the
    /// whole network (any order). Returns this partition's spikes at `t`,
    /// ascending.
    pub fn step(&mut self, previous: &[u32]) -> Result<Vec<u32>, DpsnnError> {
        let t = self.next_ms;
        let ring = self.pending.len() as u32;
        if t > 0 {
            let mut pre_ids = previous.to_vec();
            pre_ids.sort_unstable();
            for pre in pre_ids {
                for &syn in &self.by_pre[pre as usize] {
                    let arrival = t - 1 + self.synapses[syn as usize].delay;
                    self.pending[(arrival % ring) as usize].push(syn);
                }
            }
        }
        let mut arrivals = std::mem::take(&mut self.pending[(t % ring) as usize]);
        arrivals.sort_unstable();

        let mut current = vec![0.0f64; self.neurons.len()];
        for &syn in &arrivals {
            let s = &mut self.synapses[syn as usize];
            let sign = if s.plastic { 1.0 } else { -1.0 };
            current[(s.post_id - self.first) as usize] += sign * s.weight;
        }
        let kick = self.cfg.thalamic_target(t);
        if let Some(i) = kick.checked_sub(self.first).filter(|&i| (i as usize) < current.len()) {
            current[i as usize] += self.cfg.thalamic_current;
        }

        let mut fired = Vec::new();
        for (i, n) in self.neurons.iter_mut().enumerate() {
            if izhikevich_step(n, current[i])? {
                fired.push(n.global_id);
                self.spike_counts[i] += 1;
            }
        }

        // potentiation for cells that fired, then depression for arrivals
        // at cells that did not fire at t
        let stdp = self.cfg.stdp;
        for &id in &fired {
            let i = (id - self.first) as usize;
            for s in &mut self.synapses[self.post_start[i]..self.post_start[i + 1]] {
                stdp_update(s, SpikeEvent::Post(t), &stdp);
            }
        }
        for &syn in &arrivals {
            stdp_update(&mut self.synapses[syn as usize], SpikeEvent::PreArrival(t), &stdp);
        }
        arrivals.clear();
        self.pending[(t % ring) as usize] = arrivals;
        self.next_ms += 1;
        Ok(fired)
    }
}

/// Run all partitions in lock step without any network model.
pub fn run_lockstep(cfg: &DpsnnConfig) -> Result<SpikeRaster, DpsnnError> {
    let mut parts: Vec<DpsnnPartition> =
        (0..cfg.partitions).map(|p| DpsnnPartition::new(cfg, p)).collect::<Result<_, _>>()?;
    let mut raster = SpikeRaster::default();
    let mut previous: Vec<u32> = Vec::new();
    for t in 0..cfg.duration_ms {
        let mut now = Vec::new();
        for p in &mut parts {
            now.extend(p.step(&previous)?);
        }
        raster.0.extend(now.iter().map(|&id| (t, id)));
        previous = now;
    }
    raster.canonicalize();
    Ok(raster)
}
