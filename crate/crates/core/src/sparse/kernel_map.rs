use alloc::vec::Vec;
use hashbrown::HashMap;

use super::{pack_key, Coord};
use crate::{Error, Result};

/// Input/output site pairs per kernel offset.
///
/// For offset `k` (scaled by `scale`), `(i, o)` is listed iff
/// `coords_in[i] == coords_out[o] + k * scale` within the same batch slot.
/// Within each offset list pairs are ordered by output index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KernelMap {
    pub kernel_size: usize,
    pub offsets: Vec<Coord>,
    pub pairs: Vec<Vec<(u32, u32)>>,
    pub n_in: usize,
    pub n_out: usize,
}

impl KernelMap {
    pub fn total_pairs(&self) -> usize {
        self.pairs.iter().map(Vec::len).sum()
    }
}

/// Offsets of a cubic kernel in lexicographic `(k1, k2, k3)` order.
pub fn kernel_offsets(kernel_size: usize) -> Vec<Coord> {
    let r = (kernel_size / 2) as i32;
    let mut out = Vec::with_capacity(kernel_size.pow(3));
    for a in -r..=r {
        for b in -r..=r {
            for c in -r..=r {
                out.push([a, b, c]);
            }
        }
    }
    out
}

pub fn build_kernel_map(
    in_batch: &[u32],
    in_coords: &[Coord],
    out_batch: &[u32],
    out_coords: &[Coord],
    kernel_size: usize,
    scale: [i32; 3],
) -> Result<KernelMap> {
    if kernel_size % 2 == 0 {
        return Err(Error::arg("kernel size must be odd"));
    }
    let mut table: HashMap<u64, u32> = HashMap::with_capacity(in_coords.len());
    for (i, (&b, &c)) in in_batch.iter().zip(in_coords).enumerate() {
        let key = pack_key(b, c).ok_or_else(|| Error::CoordOverflow(alloc::format!("input site {b} {c:?}")))?;
        table.insert(key, i as u32);
    }
    let offsets = kernel_offsets(kernel_size);
    let pairs = offsets
        .iter()
        .map(|k| {
            let mut list = Vec::new();
            for (o, (&b, c)) in out_batch.iter().zip(out_coords).enumerate() {
                let q = [c[0] + k[0] * scale[0], c[1] + k[1] * scale[1], c[2] + k[2] * scale[2]];
                if let Some(&i) = pack_key(b, q).and_then(|key| table.get(&key)) {
                    list.push((i, o as u32));
                }
            }
            list
        })
        .collect();
    Ok(KernelMap { kernel_size, offsets, pairs, n_in: in_coords.len(), n_out: out_coords.len() })
}

/// Unique `floor(c / stride) * stride` of the input sites, sorted by
/// `(batch, coord)`.
pub fn strided_coords(batch: &[u32], coords: &[Coord], stride: [i32; 3]) -> (Vec<u32>, Vec<Coord>) {
    let mut keys: Vec<(u32, Coord)> = batch
        .iter()
        .zip(coords)
        .map(|(&b, c)| (b, core::array::from_fn(|a| c[a].div_euclid(stride[a]) * stride[a])))
        .collect();
    keys.sort_unstable();
    keys.dedup();
    keys.into_iter().unzip()
}
