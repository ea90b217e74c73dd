//! Periodic 4D nine-point stencil with halo exchange.
//!
//! The update is `new = (c + -x + +x + -y + +y + -z + +z + -t + +t) / 9`,
//! always summed in that order, so a decomposed run reproduces the
//! single-block result bit for bit.

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::engine::CounterRng;

const TAG_STENCIL: u64 = 0x57E7;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StencilError {
    #[error("stencil: {0}")]
    Config(String),
    #[error("face for dim {dim} has {got} values, expected {expected}")]
    FaceSize { dim: usize, got: usize, expected: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StencilConfig {
    /// Global extent in x, y, z, t.
    pub dims: [usize; 4],
    /// Number of blocks along each dimension.
    pub blocks: [usize; 4],
    pub iterations: u32,
    pub seed: u64,
}

impl Default for StencilConfig {
    fn default() -> Self {
        StencilConfig { dims: [8, 8, 8, 8], blocks: [2, 2, 2, 1], iterations: 10, seed: 1 }
    }
}

impl StencilConfig {
    pub fn validate(&self) -> Result<(), StencilError> {
        for d in 0..4 {
            if self.dims[d] == 0 || self.blocks[d] == 0 || !self.dims[d].is_multiple_of(self.blocks[d]) {
                return Err(StencilError::Config(format!(
                    "dimension {d}: extent {} not divisible into {} blocks",
                    self.dims[d], self.blocks[d]
                )));
            }
        }
        Ok(())
    }

    pub fn block_count(&self) -> usize {
        self.blocks.iter().product()
    }

    pub fn local_dims(&self) -> [usize; 4] {
        std::array::from_fn(|d| self.dims[d] / self.blocks[d])
    }

    pub fn cells(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn global_index(&self, g: [usize; 4]) -> usize {
        linear(g, self.dims)
    }

    pub fn block_coords(&self, b: usize) -> [usize; 4] {
        unlinear(b, self.blocks)
    }

    pub fn block_index(&self, c: [usize; 4]) -> usize {
        linear(c, self.blocks)
    }

    /// Periodic neighbor of block `b` along `dim`.
    pub fn neighbor_block(&self, b: usize, dim: usize, plus: bool) -> usize {
        let mut c = self.block_coords(b);
        let n = self.blocks[dim];
        c[dim] = if plus { (c[dim] + 1) % n } else { (c[dim] + n - 1) % n };
        self.block_index(c)
    }

    /// Values in one face of a block along `dim`.
    pub fn face_len(&self, dim: usize) -> usize {
        let l = self.local_dims();
        (0..4).filter(|&d| d != dim).map(|d| l[d]).product()
    }

    pub fn face_bytes(&self, dim: usize) -> usize {
        self.face_len(dim) * 8
    }

    pub fn initial_value(&self, g: [usize; 4]) -> f64 {
        let rng = CounterRng::new(self.seed);
        let v = rng.value_at(CounterRng::key(TAG_STENCIL, 0), self.global_index(g) as u64);
        (v >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn initial_field(&self) -> Vec<f64> {
        (0..self.cells()).map(|i| self.initial_value(unlinear(i, self.dims))).collect()
    }
}

fn linear(c: [usize; 4], n: [usize; 4]) -> usize {
    c[0] + n[0] * (c[1] + n[1] * (c[2] + n[2] * c[3]))
}

fn unlinear(mut i: usize, n: [usize; 4]) -> [usize; 4] {
    let mut c = [0; 4];
    for d in 0..4 {
        c[d] = i % n[d];
        i /= n[d];
    }
    c
}

fn nine_point(center: f64, around: [f64; 8]) -> f64 {
    let mut s = center;
    for v in around {
        s += v;
    }
    s / 9.0
}

/// One sweep over a whole periodic field.
pub fn reference_step(dims: [usize; 4], field: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; field.len()];
    for (i, o) in out.iter_mut().enumerate() {
        let c = unlinear(i, dims);
        let mut around = [0.0; 8];
        for d in 0..4 {
            for (k, plus) in [false, true].into_iter().enumerate() {
                let mut n = c;
                n[d] = if plus { (c[d] + 1) % dims[d] } else { (c[d] + dims[d] - 1) % dims[d] };
                around[2 * d + k] = field[linear(n, dims)];
            }
        }
        *o = nine_point(field[i], around);
    }
    out
}

/// Single-process run of the whole configuration.
pub fn reference(cfg: &StencilConfig) -> Result<Vec<f64>, StencilError> {
    cfg.validate()?;
    let mut f = cfg.initial_field();
    for _ in 0..cfg.iterations {
        f = reference_step(cfg.dims, &f);
    }
    Ok(f)
}

/// sha256 over the little-endian bytes of the field in global order.
pub fn checksum(field: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in field {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

pub fn encode_face(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn decode_face(bytes: &[u8]) -> Vec<f64> {
    bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect()
}

/// One block of the field, stored with a one-cell halo on every side.
#[derive(Clone, Debug)]
pub struct StencilBlock {
    index: usize,
    origin: [usize; 4],
    local: [usize; 4],
    padded: [usize; 4],
    data: Vec<f64>,
}

impl StencilBlock {
    pub fn new(cfg: &StencilConfig, index: usize) -> Result<Self, StencilError> {
        cfg.validate()?;
        if index >= cfg.block_count() {
            return Err(StencilError::Config(format!("block {index} of {}", cfg.block_count())));
        }
        let local = cfg.local_dims();
        let bc = cfg.block_coords(index);
        let origin = std::array::from_fn(|d| bc[d] * local[d]);
        let padded = local.map(|l| l + 2);
        let mut b = StencilBlock { index, origin, local, padded, data: vec![0.0; padded.iter().product()] };
        for i in 0..local.iter().product::<usize>() {
            let c = unlinear(i, local);
            let g = std::array::from_fn(|d| origin[d] + c[d]);
            let p = b.pos(c.map(|v| v + 1));
            b.data[p] = cfg.initial_value(g);
        }
        Ok(b)
    }

    pub fn index(&self) -> usize {
        self.index
    }

    fn pos(&self, p: [usize; 4]) -> usize {
        linear(p, self.padded)
    }

    /// Padded coordinates of every cell in the slab at padded layer `layer`
    /// of `dim`, interior range on the other axes, in canonical order.
    fn slab(&self, dim: usize, layer: usize) -> impl Iterator<Item = usize> + '_ {
        let mut shape = self.local;
        shape[dim] = 1;
        let n: usize = shape.iter().product();
        (0..n).map(move |i| {
            let mut c = unlinear(i, shape).map(|v| v + 1);
            c[dim] = layer;
            self.pos(c)
        })
    }

    /// Boundary values to send to the neighbor on the `plus` side of `dim`.
    pub fn face(&self, dim: usize, plus: bool) -> Vec<f64> {
        let layer = if plus { self.local[dim] } else { 1 };
        self.slab(dim, layer).map(|p| self.data[p]).collect()
    }

    /// Fill the halo on the `plus` side of `dim` with the neighbor's face.
    pub fn set_halo(&mut self, dim: usize, plus: bool, values: &[f64]) -> Result<(), StencilError> {
        let layer = if plus { self.local[dim] + 1 } else { 0 };
        let slots: Vec<usize> = self.slab(dim, layer).collect();
        if slots.len() != values.len() {
            return Err(StencilError::FaceSize { dim, got: values.len(), expected: slots.len() });
        }
        for (p, v) in slots.into_iter().zip(values) {
            self.data[p] = *v;
        }
        Ok(())
    }

    pub fn halo(&self, dim: usize, plus: bool) -> Vec<f64> {
        let layer = if plus { self.local[dim] + 1 } else { 0 };
        self.slab(dim, layer).map(|p| self.data[p]).collect()
    }

    /// Apply one sweep to the interior; halos must be current.
    pub fn update(&mut self) {
        let n: usize = self.local.iter().product();
        let mut next = self.data.clone();
        for i in 0..n {
            let c = unlinear(i, self.local).map(|v| v + 1);
            let mut around = [0.0; 8];
            for d in 0..4 {
                let mut lo = c;
                lo[d] -= 1;
                let mut hi = c;
                hi[d] += 1;
                around[2 * d] = self.data[self.pos(lo)];
                around[2 * d + 1] = self.data[self.pos(hi)];
            }
            let p = self.pos(c);
            next[p] = nine_point(self.data[p], around);
        }
        self.data = next;
    }

    /// Interior cells as (global index, value).
    pub fn interior(&self, cfg: &StencilConfig) -> Vec<(usize, f64)> {
        let n: usize = self.local.iter().product();
        (0..n)
            .map(|i| {
                let c = unlinear(i, self.local);
                let g = std::array::from_fn(|d| self.origin[d] + c[d]);
                (cfg.global_index(g), self.data[self.pos(c.map(|v| v + 1))])
            })
            .collect()
    }
}

/// Exchange every face between blocks directly (no network).
pub fn exchange_in_memory(cfg: &StencilConfig, blocks: &mut [StencilBlock]) -> Result<(), StencilError> {
    let mut faces = Vec::new();
    for b in blocks.iter() {
        for dim in 0..4 {
            for plus in [false, true] {
                let to = cfg.neighbor_block(b.index, dim, plus);
                // my plus face fills the neighbor's minus halo
                faces.push((to, dim, !plus, b.face(dim, plus)));
            }
        }
    }
    for (to, dim, side, v) in faces {
        blocks[to].set_halo(dim, side, &v)?;
    }
    Ok(())
}

pub fn gather(cfg: &StencilConfig, blocks: &[StencilBlock]) -> Vec<f64> {
    let mut f = vec![0.0; cfg.cells()];
    for b in blocks {
        for (g, v) in b.interior(cfg) {
            f[g] = v;
        }
    }
    f
}

/// Decomposed run without a network model.
pub fn run_blocks_in_memory(cfg: &StencilConfig) -> Result<Vec<f64>, StencilError> {
    let mut blocks: Vec<StencilBlock> =
        (0..cfg.block_count()).map(|b| StencilBlock::new(cfg, b)).collect::<Result<_, _>>()?;
    for _ in 0..cfg.iterations {
        exchange_in_memory(cfg, &mut blocks)?;
        for b in &mut blocks {
            b.update();
        }
    }
    Ok(gather(cfg, &blocks))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_field_is_a_fixed_point() {
        let f = vec![2.5; 4 * 4 * 4 * 4];
        assert_eq!(reference_step([4; 4], &f), f);
    }

    #[test]
    fn decomposition_matches_reference_bit_exactly() {
        let base = StencilConfig { blocks: [1, 1, 1, 1], ..StencilConfig::default() };
        let want = checksum(&reference(&base).unwrap());
        for blocks in [[1, 1, 1, 1], [2, 2, 2, 1], [2, 1, 4, 2], [8, 1, 1, 1]] {
            let cfg = StencilConfig { blocks, ..base.clone() };
            assert_eq!(checksum(&run_blocks_in_memory(&cfg).unwrap()), want, "{blocks:?}");
        }
    }

    #[test]
    fn halo_matches_neighbor_boundary() {
        let cfg = StencilConfig::default();
        let mut blocks: Vec<_> = (0..cfg.block_count()).map(|b| StencilBlock::new(&cfg, b).unwrap()).collect();
        exchange_in_memory(&cfg, &mut blocks).unwrap();
        for b in &blocks {
            for dim in 0..4 {
                let up = cfg.neighbor_block(b.index(), dim, true);
                assert_eq!(b.halo(dim, true), blocks[up].face(dim, false));
            }
        }
    }

    #[test]
    fn face_sizes() {
        let cfg = StencilConfig::default();
        assert_eq!(cfg.local_dims(), [4, 4, 4, 8]);
        assert_eq!(cfg.face_bytes(0), 4 * 4 * 8 * 8);
        assert_eq!(cfg.face_bytes(3), 4 * 4 * 4 * 8);
        assert_eq!(decode_face(&encode_face(&[1.5, -2.0])), vec![1.5, -2.0]);
    }

    #[test]
    fn rejects_bad_decomposition() {
        let cfg = StencilConfig { blocks: [3, 1, 1, 1], ..StencilConfig::default() };
        assert!(cfg.validate().is_err());
        assert!(StencilBlock::new(&StencilConfig::default(), 99).is_err());
    }
}
