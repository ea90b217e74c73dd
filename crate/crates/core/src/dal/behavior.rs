//! Process behaviors: each firing consumes a fixed demand of input items and
//! emits at most one item per output port.

use std::collections::VecDeque;

use super::spec::BehaviorSpec;
use crate::bench::dpsnn::{decode_spikes, encode_spikes, DpsnnConfig, DpsnnPartition};

pub type Item = Vec<u8>;

pub fn u64_item(v: u64) -> Item {
    v.to_le_bytes().to_vec()
}

pub fn item_u64(i: &[u8]) -> u64 {
    let mut b = [0u8; 8];
    let n = i.len().min(8);
    b[..n].copy_from_slice(&i[..n]);
    u64::from_le_bytes(b)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Demand {
    /// Items needed from each input port.
    Ports(Vec<usize>),
    /// One item from whichever live port has one, lowest first.
    AnyOne,
    Done,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Firing {
    pub outputs: Vec<Option<Item>>,
    pub alarm: Option<String>,
}

impl Firing {
    fn broadcast(n: usize, item: Item) -> Self {
        Firing { outputs: vec![Some(item); n], alarm: None }
    }

    fn silent(n: usize) -> Self {
        Firing { outputs: vec![None; n], alarm: None }
    }
}

pub trait Behavior {
    /// What the next firing needs. `live[i]` is false once port i is closed
    /// and drained.
    fn demand(&self, live: &[bool]) -> Demand;
    fn fire(&mut self, inputs: Vec<Vec<Item>>) -> Result<Firing, String>;
    /// Items consumed by a sink, in order.
    fn recorded(&self) -> Option<&[Item]> {
        None
    }
}

struct Source {
    next: u64,
    step: u64,
    left: u64,
    outs: usize,
}

impl Behavior for Source {
    fn demand(&self, _: &[bool]) -> Demand {
        if self.left == 0 {
            Demand::Done
        } else {
            Demand::Ports(Vec::new())
        }
    }

    fn fire(&mut self, _: Vec<Vec<Item>>) -> Result<Firing, String> {
        let v = self.next;
        self.next = self.next.wrapping_add(self.step);
        self.left -= 1;
        Ok(Firing::broadcast(self.outs, u64_item(v)))
    }
}

struct Map<F: FnMut(u64) -> u64> {
    f: F,
    outs: usize,
    raw: bool,
}

impl<F: FnMut(u64) -> u64> Behavior for Map<F> {
    fn demand(&self, live: &[bool]) -> Demand {
        if live[0] {
            Demand::Ports(vec![1])
        } else {
            Demand::Done
        }
    }

    fn fire(&mut self, mut inputs: Vec<Vec<Item>>) -> Result<Firing, String> {
        let item = inputs[0].pop().ok_or("missing input")?;
        let out = if self.raw { item } else { u64_item((self.f)(item_u64(&item))) };
        Ok(Firing::broadcast(self.outs, out))
    }
}

/// Round-robin reader over live ports; `record` keeps what it read.
struct RoundRobin {
    next: usize,
    ports: usize,
    outs: usize,
    record: Option<Vec<Item>>,
}

impl Behavior for RoundRobin {
    fn demand(&self, live: &[bool]) -> Demand {
        let pick = (0..self.ports).map(|k| (self.next + k) % self.ports).find(|&p| live[p]);
        match pick {
            Some(p) => {
                let mut d = vec![0; self.ports];
                d[p] = 1;
                Demand::Ports(d)
            }
            None => Demand::Done,
        }
    }

    fn fire(&mut self, inputs: Vec<Vec<Item>>) -> Result<Firing, String> {
        let (p, item) =
            inputs.into_iter().enumerate().find_map(|(p, mut v)| v.pop().map(|i| (p, i))).ok_or("missing input")?;
        self.next = (p + 1) % self.ports;
        match &mut self.record {
            Some(r) => {
                r.push(item);
                Ok(Firing::silent(self.outs))
            }
            None => Ok(Firing::broadcast(self.outs, item)),
        }
    }

    fn recorded(&self) -> Option<&[Item]> {
        self.record.as_deref()
    }
}

struct RasterSink {
    ports: usize,
    record: Vec<Item>,
}

impl Behavior for RasterSink {
    fn demand(&self, live: &[bool]) -> Demand {
        if live.iter().all(|&l| l) {
            Demand::Ports(vec![1; self.ports])
        } else {
            Demand::Done
        }
    }

    fn fire(&mut self, inputs: Vec<Vec<Item>>) -> Result<Firing, String> {
        for mut v in inputs {
            self.record.push(v.pop().ok_or("missing input")?);
        }
        Ok(Firing::default())
    }

    fn recorded(&self) -> Option<&[Item]> {
        Some(&self.record)
    }
}

/// Forwards the first copy of each item from two replica streams and checks
/// the later copy against it.
struct Comparator {
    seen: [u64; 2],
    /// Forwarded items not yet matched by the lagging replica; the front
    /// has index `base`.
    log: VecDeque<Item>,
    base: u64,
}

impl Behavior for Comparator {
    fn demand(&self, live: &[bool]) -> Demand {
        if live.iter().any(|&l| l) {
            Demand::AnyOne
        } else {
            Demand::Done
        }
    }

    fn fire(&mut self, inputs: Vec<Vec<Item>>) -> Result<Firing, String> {
        let (r, item) =
            inputs.into_iter().enumerate().find_map(|(p, mut v)| v.pop().map(|i| (p, i))).ok_or("missing input")?;
        let idx = self.seen[r];
        self.seen[r] += 1;
        let forwarded = self.base + self.log.len() as u64;
        let mut firing = Firing { outputs: vec![None], alarm: None };
        if idx == forwarded {
            self.log.push_back(item.clone());
            firing.outputs[0] = Some(item);
        } else if let Some(first) = idx.checked_sub(self.base).and_then(|k| self.log.get(k as usize)) {
            if *first != item {
                firing.alarm = Some(format!("replica divergence at item {idx}"));
            }
        }
        while self.base < self.seen[0].min(self.seen[1]) {
            self.log.pop_front();
            self.base += 1;
        }
        Ok(firing)
    }
}

struct Dpsnn {
    part: DpsnnPartition,
    outs: usize,
    ins: usize,
    own_last: Vec<u32>,
}

impl Behavior for Dpsnn {
    fn demand(&self, live: &[bool]) -> Demand {
        if self.part.finished() {
            Demand::Done
        } else if self.part.next_ms() == 0 {
            Demand::Ports(vec![0; self.ins])
        } else if live.iter().all(|&l| l) {
            Demand::Ports(vec![1; self.ins])
        } else {
            Demand::Done
        }
    }

    fn fire(&mut self, inputs: Vec<Vec<Item>>) -> Result<Firing, String> {
        let t = self.part.next_ms();
        let mut prev = std::mem::take(&mut self.own_last);
        for v in inputs {
            for item in v {
                let (tm, ids) = decode_spikes(&item).ok_or("malformed spike list")?;
                if tm + 1 != t {
                    return Err(format!("spike list for ms {tm} arrived at step {t}"));
                }
                prev.extend(ids);
            }
        }
        let fired = self.part.step(&prev).map_err(|e| e.to_string())?;
        let out = encode_spikes(t, &fired);
        self.own_last = fired;
        Ok(Firing::broadcast(self.outs, out))
    }
}

/// Instantiate a behavior for a process with the given port counts.
pub fn instantiate(spec: &BehaviorSpec, ins: usize, outs: usize) -> Result<Box<dyn Behavior>, String> {
    Ok(match spec.clone() {
        BehaviorSpec::Source { count, start, step } => Box::new(Source { next: start, step, left: count, outs }),
        BehaviorSpec::Identity | BehaviorSpec::Fork => Box::new(Map { f: |x| x, outs, raw: true }),
        BehaviorSpec::Affine { mul, add } => {
            Box::new(Map { f: move |x: u64| x.wrapping_mul(mul).wrapping_add(add), outs, raw: false })
        }
        BehaviorSpec::Lookup { table } => {
            Box::new(Map { f: move |x| table[(x % table.len() as u64) as usize], outs, raw: false })
        }
        BehaviorSpec::Merge => Box::new(RoundRobin { next: 0, ports: ins, outs, record: None }),
        BehaviorSpec::Sink => Box::new(RoundRobin { next: 0, ports: ins, outs, record: Some(Vec::new()) }),
        BehaviorSpec::RasterSink => Box::new(RasterSink { ports: ins, record: Vec::new() }),
        BehaviorSpec::Comparator => Box::new(Comparator { seen: [0; 2], log: VecDeque::new(), base: 0 }),
        BehaviorSpec::Dpsnn { part, of, neurons, synapses, ms, seed } => {
            let cfg = DpsnnConfig {
                neurons,
                synapses_per_neuron: synapses,
                partitions: of,
                duration_ms: ms,
                seed,
                ..DpsnnConfig::default()
            };
            let part = DpsnnPartition::new(&cfg, part).map_err(|e| e.to_string())?;
            Box::new(Dpsnn { part, outs, ins, own_last: Vec::new() })
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feed(b: &mut dyn Behavior, port: usize, ports: usize, item: Item) -> Firing {
        let mut inputs = vec![Vec::new(); ports];
        inputs[port].push(item);
        b.fire(inputs).unwrap()
    }

    #[test]
    fn source_then_affine() {
        let mut s = instantiate(&BehaviorSpec::Source { count: 3, start: 5, step: 2 }, 0, 1).unwrap();
        let mut got = Vec::new();
        while s.demand(&[]) != Demand::Done {
            got.push(item_u64(s.fire(vec![]).unwrap().outputs[0].as_ref().unwrap()));
        }
        assert_eq!(got, vec![5, 7, 9]);
        let mut a = instantiate(&BehaviorSpec::Affine { mul: 3, add: 1 }, 1, 2).unwrap();
        let f = feed(a.as_mut(), 0, 1, u64_item(4));
        assert_eq!(f.outputs, vec![Some(u64_item(13)), Some(u64_item(13))]);
    }

    #[test]
    fn merge_round_robin_skips_drained_ports() {
        let m = instantiate(&BehaviorSpec::Merge, 3, 1).unwrap();
        assert_eq!(m.demand(&[true, true, true]), Demand::Ports(vec![1, 0, 0]));
        assert_eq!(m.demand(&[false, true, true]), Demand::Ports(vec![0, 1, 0]));
        assert_eq!(m.demand(&[false, false, false]), Demand::Done);
    }

    #[test]
    fn comparator_forwards_first_copy_and_flags_divergence() {
        let mut c = instantiate(&BehaviorSpec::Comparator, 2, 1).unwrap();
        assert_eq!(feed(c.as_mut(), 0, 2, vec![1]).outputs, vec![Some(vec![1])]);
        assert_eq!(feed(c.as_mut(), 0, 2, vec![2]).outputs, vec![Some(vec![2])]);
        let f = feed(c.as_mut(), 1, 2, vec![1]);
        assert_eq!((f.outputs, f.alarm), (vec![None], None));
        assert_eq!(feed(c.as_mut(), 1, 2, vec![9]).alarm, Some("replica divergence at item 1".into()));
        // lagging replica overtakes
        assert_eq!(feed(c.as_mut(), 1, 2, vec![3]).outputs, vec![Some(vec![3])]);
        assert_eq!(feed(c.as_mut(), 0, 2, vec![3]).alarm, None);
    }

    #[test]
    fn unknown_port_arity_for_dpsnn() {
        let spec = BehaviorSpec::Dpsnn { part: 0, of: 2, neurons: 20, synapses: 5, ms: 3, seed: 1 };
        let mut d = instantiate(&spec, 1, 2).unwrap();
        assert_eq!(d.demand(&[true]), Demand::Ports(vec![0]));
        d.fire(vec![vec![]]).unwrap();
        assert_eq!(d.demand(&[true]), Demand::Ports(vec![1]));
        assert!(d.fire(vec![vec![encode_spikes(5, &[])]]).is_err());
    }
}
