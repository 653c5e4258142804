//! Generalized-mean pooling over the active sites of each batch slot.

use alloc::vec;
use alloc::vec::Vec;
// needed without std; with std linked the inherent methods shadow it
#[allow(unused_imports)]
use num_traits::Float;

use super::Descriptor;
use crate::sparse::SparseTensor;
use crate::{Error, Result};

/// Features are clamped to this floor before exponentiation.
pub const GEM_FLOOR: f64 = 1e-6;

/// `g_k = (1/M Σ_j h_jk^p)^(1/p)` over `M` rows of `channels` features.
pub fn gem_pool(features: &[f64], channels: usize, p: f64) -> Result<Descriptor> {
    if channels == 0 || features.is_empty() || features.len() % channels != 0 {
        return Err(Error::EmptyFeatureMap);
    }
    let m = (features.len() / channels) as f64;
    let mut acc = vec![0.0; channels];
    for row in features.chunks_exact(channels) {
        for (a, &h) in acc.iter_mut().zip(row) {
            *a += h.max(GEM_FLOOR).powf(p);
        }
    }
    Ok(Descriptor(acc.into_iter().map(|s| (s / m).powf(1.0 / p)).collect()))
}

#[derive(Debug, Clone)]
pub struct GemCache {
    pub p: f64,
    /// Per batch slot: site count.
    pub counts: Vec<usize>,
    /// Per slot and channel: mean of `h^p`.
    pub mean_pow: Vec<Vec<f64>>,
    /// Per slot and channel: mean of `h^p ln h`.
    pub mean_pow_log: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
}

/// Pool each batch slot of `t` separately.
pub fn gem_forward(t: &SparseTensor, p: f64) -> Result<(Vec<Descriptor>, GemCache)> {
    let c = t.channels;
    let nb = t.batch_size();
    if nb == 0 || c == 0 {
        return Err(Error::EmptyFeatureMap);
    }
    let mut counts = vec![0usize; nb];
    let mut sp = vec![vec![0.0; c]; nb];
    let mut spl = vec![vec![0.0; c]; nb];
    for (i, &b) in t.batch.iter().enumerate() {
        let b = b as usize;
        counts[b] += 1;
        for (k, &h) in t.feature(i).iter().enumerate() {
            let h = h.max(GEM_FLOOR);
            let hp = h.powf(p);
            sp[b][k] += hp;
            spl[b][k] += hp * h.ln();
        }
    }
    if counts.iter().any(|&m| m == 0) {
        return Err(Error::EmptyFeatureMap);
    }
    for b in 0..nb {
        let m = counts[b] as f64;
        sp[b].iter_mut().for_each(|s| *s /= m);
        spl[b].iter_mut().for_each(|s| *s /= m);
    }
    let outputs: Vec<Vec<f64>> = sp.iter().map(|row| row.iter().map(|s| s.powf(1.0 / p)).collect()).collect();
    let descs = outputs.iter().cloned().map(Descriptor).collect();
    Ok((descs, GemCache { p, counts, mean_pow: sp, mean_pow_log: spl, outputs }))
}

/// Returns the feature gradient and the gradient with respect to `ln p`.
pub fn gem_backward(t: &SparseTensor, cache: &GemCache, grad_out: &[Vec<f64>]) -> (Vec<f64>, f64) {
    let c = t.channels;
    let p = cache.p;
    // coef[b][k] = dL/dg * g / (S * M)
    let coef: Vec<Vec<f64>> = (0..cache.counts.len())
        .map(|b| {
            (0..c)
                .map(|k| grad_out[b][k] * cache.outputs[b][k] / (cache.mean_pow[b][k] * cache.counts[b] as f64))
                .collect()
        })
        .collect();
    let mut gx = Vec::with_capacity(t.feats.len());
    for (i, &b) in t.batch.iter().enumerate() {
        for (k, &h) in t.feature(i).iter().enumerate() {
            gx.push(if h >= GEM_FLOOR { coef[b as usize][k] * h.powf(p - 1.0) } else { 0.0 });
        }
    }
    let mut g_logp = 0.0;
    for b in 0..cache.counts.len() {
        for k in 0..c {
            let s = cache.mean_pow[b][k];
            let dg = cache.outputs[b][k] * (-s.ln() / p + cache.mean_pow_log[b][k] / s);
            g_logp += grad_out[b][k] * dg;
        }
    }
    (gx, g_logp)
}
