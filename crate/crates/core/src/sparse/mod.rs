//! Hash-based sparse 3D convolution engine with hand-written adjoints.
//!
//! A [`SparseTensor`] holds one row of features per occupied site. Site
//! coordinates always live in the input (stride-1) index space; a tensor at
//! stride `s` only has coordinates that are multiples of `s`.

mod conv;
mod kernel_map;
mod norm;

pub use conv::{ConvCache, ConvGrads, ConvLayer};
pub use kernel_map::{build_kernel_map, kernel_offsets, strided_coords, KernelMap};
pub use norm::{relu, relu_backward, NormCache, NormGrads, NormLayer};

use alloc::vec::Vec;

use crate::{Error, Result};

pub type Coord = [i32; 3];

/// Per-axis coordinates must lie in `[-COORD_LIMIT, COORD_LIMIT)` to be hashed.
pub const COORD_LIMIT: i32 = 1 << 15;
/// Batch indices must be below this to be hashed.
pub const BATCH_LIMIT: u32 = 1 << 16;

/// Packs `(batch, i1, i2, i3)` into one 64-bit key, 16 bits per field.
pub fn pack_key(batch: u32, c: Coord) -> Option<u64> {
    if batch >= BATCH_LIMIT {
        return None;
    }
    let mut key = batch as u64;
    for v in c {
        if !(-COORD_LIMIT..COORD_LIMIT).contains(&v) {
            return None;
        }
        key = (key << 16) | (v + COORD_LIMIT) as u64;
    }
    Some(key)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseTensor {
    pub batch: Vec<u32>,
    pub coords: Vec<Coord>,
    /// Row-major `len() x channels`.
    pub feats: Vec<f64>,
    pub channels: usize,
    pub stride: [i32; 3],
}

impl SparseTensor {
    pub fn empty(channels: usize) -> Self {
        Self { batch: Vec::new(), coords: Vec::new(), feats: Vec::new(), channels, stride: [1; 3] }
    }

    pub fn new(batch: Vec<u32>, coords: Vec<Coord>, feats: Vec<f64>, channels: usize, stride: [i32; 3]) -> Result<Self> {
        if batch.len() != coords.len() || feats.len() != coords.len() * channels {
            return Err(Error::shape("site arrays disagree in length"));
        }
        let t = Self { batch, coords, feats, channels, stride };
        t.check_unique()?;
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.feats[i * self.channels..(i + 1) * self.channels]
    }

    /// Number of batch slots, i.e. the largest batch index plus one.
    pub fn batch_size(&self) -> usize {
        self.batch.iter().max().map_or(0, |&b| b as usize + 1)
    }

    pub(crate) fn push_site(&mut self, batch: u32, coord: Coord, feature: &[f64]) {
        debug_assert_eq!(feature.len(), self.channels);
        self.batch.push(batch);
        self.coords.push(coord);
        self.feats.extend_from_slice(feature);
    }

    /// Appends all sites of `other` (same channels and stride).
    pub fn concat(&mut self, other: &SparseTensor) -> Result<()> {
        if other.channels != self.channels || (!self.is_empty() && other.stride != self.stride) {
            return Err(Error::shape("cannot concatenate tensors of different channels or stride"));
        }
        if self.is_empty() {
            self.stride = other.stride;
        }
        self.batch.extend_from_slice(&other.batch);
        self.coords.extend_from_slice(&other.coords);
        self.feats.extend_from_slice(&other.feats);
        Ok(())
    }

    /// Concatenates per-cloud tensors into one batch, relabelling the batch
    /// index of the `i`-th tensor to `i`.
    pub fn collate(parts: &[SparseTensor]) -> Result<SparseTensor> {
        let channels = parts.first().map_or(1, |p| p.channels);
        let mut out = SparseTensor::empty(channels);
        for (b, part) in parts.iter().enumerate() {
            let mut part = part.clone();
            part.batch.iter_mut().for_each(|x| *x = b as u32);
            out.concat(&part)?;
        }
        Ok(out)
    }

    /// Errors if two sites share a `(batch, coord)` key.
    pub fn check_unique(&self) -> Result<()> {
        let mut seen = hashbrown::HashSet::with_capacity(self.len());
        for (&b, &c) in self.batch.iter().zip(&self.coords) {
            let key = pack_key(b, c).ok_or_else(|| Error::CoordOverflow(alloc::format!("{b} {c:?}")))?;
            if !seen.insert(key) {
                return Err(Error::shape(alloc::format!("duplicate site {b} {c:?}")));
            }
        }
        Ok(())
    }

    /// Reorders sites by `perm` (new site `i` is old site `perm[i]`).
    pub fn permuted(&self, perm: &[usize]) -> SparseTensor {
        let mut out = SparseTensor::empty(self.channels);
        out.stride = self.stride;
        for &i in perm {
            out.push_site(self.batch[i], self.coords[i], self.feature(i));
        }
        out
    }
}
