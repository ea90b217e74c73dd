use std::collections::BTreeMap;

use thiserror::Error;

use super::Owner;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MemoryError {
    #[error("region [{addr:#x}, +{len}) is not registered")]
    Unregistered { addr: u64, len: usize },
    #[error("region [{addr:#x}, +{len}) overlaps an existing registration")]
    Overlap { addr: u64, len: usize },
    #[error("empty region")]
    Empty,
}

#[derive(Clone, Debug)]
struct Region {
    data: Vec<u8>,
    owner: Option<Owner>,
}

/// Registered memory regions of one tile, addressable by RDMA.
#[derive(Clone, Debug, Default)]
pub struct MemoryMap {
    regions: BTreeMap<u64, Region>,
}

impl MemoryMap {
    pub fn register(&mut self, base: u64, len: usize, owner: Option<Owner>) -> Result<(), MemoryError> {
        if len == 0 {
            return Err(MemoryError::Empty);
        }
        let end = base + len as u64;
        let clash = self.regions.range(..end).next_back().is_some_and(|(b, r)| b + r.data.len() as u64 > base);
        if clash {
            return Err(MemoryError::Overlap { addr: base, len });
        }
        self.regions.insert(base, Region { data: vec![0; len], owner });
        Ok(())
    }

    fn locate(&self, addr: u64, len: usize) -> Result<(u64, usize), MemoryError> {
        let (base, r) = self.regions.range(..=addr).next_back().ok_or(MemoryError::Unregistered { addr, len })?;
        let off = (addr - base) as usize;
        if off + len > r.data.len() {
            return Err(MemoryError::Unregistered { addr, len });
        }
        Ok((*base, off))
    }

    pub fn contains(&self, addr: u64, len: usize) -> bool {
        self.locate(addr, len).is_ok()
    }

    pub fn write(&mut self, addr: u64, bytes: &[u8]) -> Result<(), MemoryError> {
        let (base, off) = self.locate(addr, bytes.len())?;
        let r = self.regions.get_mut(&base).expect("located region");
        r.data[off..off + bytes.len()].copy_from_slice(bytes);
        Ok(())
    }

    pub fn read(&self, addr: u64, len: usize) -> Result<&[u8], MemoryError> {
        let (base, off) = self.locate(addr, len)?;
        Ok(&self.regions[&base].data[off..off + len])
    }

    /// Owner of the region containing `addr`, if it asked for target-side
    /// completions.
    pub fn owner(&self, addr: u64) -> Option<Owner> {
        let (base, _) = self.locate(addr, 0).ok()?;
        self.regions[&base].owner
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn register_write_read() {
        let mut m = MemoryMap::default();
        m.register(0x1000, 16, None).unwrap();
        m.write(0x1004, &[1, 2, 3]).unwrap();
        assert_eq!(m.read(0x1003, 5).unwrap(), &[0, 1, 2, 3, 0]);
        assert!(m.write(0x100f, &[0, 0]).is_err());
        assert!(m.read(0x0fff, 1).is_err());
        assert_eq!(m.register(0x100f, 4, None), Err(MemoryError::Overlap { addr: 0x100f, len: 4 }));
        m.register(0x1010, 4, Some(Owner::Lp(3))).unwrap();
        assert_eq!(m.owner(0x1012), Some(Owner::Lp(3)));
        assert_eq!(m.owner(0x1002), None);
    }
}
