use std::collections::VecDeque;

use crate::topology::Rank;

pub const DEFAULT_RING_CAPACITY: usize = 1024;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RingEntry {
    pub src: Rank,
    pub transfer_id: u64,
    pub payload: Vec<u8>,
    pub at: u64,
}

/// Receive ring of SEND payloads. When full, arrivals wait in `held` (the
/// last hop) in arrival order and are admitted as slots free up.
#[derive(Clone, Debug)]
pub struct RingBuffer {
    capacity: usize,
    entries: VecDeque<RingEntry>,
    held: VecDeque<RingEntry>,
}

impl RingBuffer {
    pub fn new(capacity: usize) -> Self {
        RingBuffer { capacity: capacity.max(1), entries: VecDeque::new(), held: VecDeque::new() }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn held(&self) -> usize {
        self.held.len()
    }

    /// Offer an arrival. Returns true if it went straight into the ring.
    pub fn offer(&mut self, e: RingEntry) -> bool {
        if self.held.is_empty() && self.entries.len() < self.capacity {
            self.entries.push_back(e);
            true
        } else {
            self.held.push_back(e);
            false
        }
    }

    /// Move one held arrival into a free slot.
    pub fn admit_held(&mut self, now: u64) -> Option<&RingEntry> {
        if self.entries.len() >= self.capacity {
            return None;
        }
        let mut e = self.held.pop_front()?;
        e.at = now;
        self.entries.push_back(e);
        self.entries.back()
    }

    pub fn pop(&mut self) -> Option<RingEntry> {
        self.entries.pop_front()
    }

    /// Remove the oldest entry from `src`.
    pub fn pop_from(&mut self, src: Rank) -> Option<RingEntry> {
        let i = self.entries.iter().position(|e| e.src == src)?;
        self.entries.remove(i)
    }

    pub fn entries(&self) -> impl Iterator<Item = &RingEntry> {
        self.entries.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(src: u32, b: u8) -> RingEntry {
        RingEntry { src: Rank(src), transfer_id: b as u64, payload: vec![b], at: 0 }
    }

    #[test]
    fn backpressure_holds_third_until_recv() {
        let mut r = RingBuffer::new(2);
        assert!(r.offer(e(0, 1)));
        assert!(r.offer(e(0, 2)));
        assert!(!r.offer(e(0, 3)));
        assert!(r.admit_held(1).is_none());
        assert_eq!(r.pop().unwrap().payload, vec![1]);
        assert_eq!(r.admit_held(2).unwrap().payload, vec![3]);
        assert_eq!(r.pop().unwrap().payload, vec![2]);
        assert_eq!(r.pop().unwrap().payload, vec![3]);
    }

    #[test]
    fn held_queue_keeps_order_even_with_room() {
        let mut r = RingBuffer::new(1);
        r.offer(e(0, 1));
        r.offer(e(0, 2));
        r.pop();
        // a new arrival must not overtake the held one
        assert!(!r.offer(e(0, 3)));
        r.admit_held(5);
        assert_eq!(r.pop_from(Rank(0)).unwrap().payload, vec![2]);
    }
}
