//! Exact descriptor retrieval and AR@X metrics.

use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;
// needed without std; with std linked the inherent methods shadow it
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::cloud::planar_distance;
use crate::locnet::{descriptor_distance, Descriptor, LocNet};
use crate::quantizer::{quantize, DedupPolicy, QuantConfig};
use crate::trainer::prepare_cloud;
use crate::{rng, Error, PointCloud, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub cloud_id: String,
    pub descriptor: Descriptor,
    pub position: [f64; 2],
    pub run_id: u32,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RetrievalIndex {
    entries: Vec<IndexEntry>,
}

impl RetrievalIndex {
    pub fn new(entries: Vec<IndexEntry>) -> Result<Self> {
        let mut ids: Vec<&str> = entries.iter().map(|e| e.cloud_id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::arg("duplicate cloud_id in retrieval index"));
        }
        if let Some(first) = entries.first() {
            if entries.iter().any(|e| e.descriptor.len() != first.descriptor.len()) {
                return Err(Error::shape("descriptors in an index must share one length"));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Success radius in meters (inclusive).
    pub threshold: f64,
    pub x_values: Vec<usize>,
    pub exclude_same_run: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { threshold: 10.0, x_values: alloc::vec![1, 5, 10, 25], exclude_same_run: true }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0) {
            return Err(Error::config("threshold c must be > 0"));
        }
        if self.x_values.is_empty() || self.x_values.contains(&0) || self.x_values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("X values must be >= 1 and strictly ascending"));
        }
        Ok(())
    }
}

fn rank_order(a: &(f64, &str), b: &(f64, &str)) -> Ordering {
    a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1))
}

/// Indices into `index` of the `x` nearest non-excluded entries, nearest
/// first, ties broken by ascending cloud id.
pub fn match_query_indices(
    q: &Descriptor,
    index: &RetrievalIndex,
    x: usize,
    excluded: impl Fn(&IndexEntry) -> bool,
) -> Result<Vec<(usize, f64)>> {
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(index.len());
    for (i, e) in index.entries.iter().enumerate() {
        if !excluded(e) {
            cand.push((descriptor_distance(q, &e.descriptor)?, i));
        }
    }
    if cand.len() < x {
        return Err(Error::InsufficientDatabase { needed: x, available: cand.len() });
    }
    let ids = |i: usize| index.entries[i].cloud_id.as_str();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| rank_order(&(a.0, ids(a.1)), &(b.0, ids(b.1)));
    if x > 0 && x < cand.len() {
        cand.select_nth_unstable_by(x - 1, cmp);
        cand.truncate(x);
    }
    cand.sort_unstable_by(cmp);
    cand.truncate(x);
    Ok(cand.into_iter().map(|(d, i)| (i, d)).collect())
}

/// Cloud ids of the `x` best matches; `exclusions` holds cloud ids that may
/// not be returned.
pub fn match_query(q: &Descriptor, index: &RetrievalIndex, x: usize, exclusions: &[&str]) -> Result<Vec<String>> {
    let ranked = match_query_indices(q, index, x, |e| exclusions.contains(&e.cloud_id.as_str()))?;
    Ok(ranked.into_iter().map(|(i, _)| index.entries[i].cloud_id.clone()).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    /// When set, the entry with the same id is excluded from the query's pool.
    pub cloud_id: Option<String>,
    pub descriptor: Descriptor,
    pub position: [f64; 2],
    pub run_id: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryDetail {
    pub cloud_id: Option<String>,
    pub rank1_id: String,
    /// Ground distance between the query and its first match.
    pub rank1_dist_m: f64,
    pub success_at_1: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecallReport {
    /// `(X, AR@X)` for each configured X.
    pub recall: Vec<(usize, f64)>,
    pub recall_one_percent: f64,
    /// Smallest and largest per-query candidate pool.
    pub effective_db: (usize, usize),
    pub details: Vec<QueryDetail>,
}

impl RecallReport {
    pub fn at(&self, x: usize) -> Option<f64> {
        self.recall.iter().find(|r| r.0 == x).map(|r| r.1)
    }
}

/// `max(1, ceil(0.01 * db))`.
pub fn one_percent_x(db: usize) -> usize {
    ((db as f64 * 0.01).ceil() as usize).max(1)
}

/// AR@X: a query succeeds at X when any of its top-X matches lies within
/// `threshold` meters. X larger than a query's pool is capped at the pool.
pub fn recall_at(queries: &[Query], index: &RetrievalIndex, cfg: &EvalConfig) -> Result<RecallReport> {
    cfg.validate()?;
    if queries.is_empty() || index.is_empty() {
        return Err(Error::config("recall needs non-empty queries and database"));
    }
    let mut hits = alloc::vec![0usize; cfg.x_values.len()];
    let mut hits_pct = 0usize;
    let mut effective = (usize::MAX, 0usize);
    let mut details = Vec::with_capacity(queries.len());
    for q in queries {
        let excluded = |e: &IndexEntry| {
            (cfg.exclude_same_run && e.run_id == q.run_id) || q.cloud_id.as_deref() == Some(e.cloud_id.as_str())
        };
        let pool = index.entries.iter().filter(|e| !excluded(e)).count();
        if pool == 0 {
            return Err(Error::config("a query has an empty effective database"));
        }
        effective = (effective.0.min(pool), effective.1.max(pool));
        let x_pct = one_percent_x(pool);
        let x_max = cfg.x_values.last().copied().unwrap_or(1).max(x_pct).min(pool);
        let ranked = match_query_indices(&q.descriptor, index, x_max, excluded)?;
        // rank (1-based) of the first in-threshold match
        let first_hit = ranked
            .iter()
            .position(|&(i, _)| planar_distance(index.entries[i].position, q.position) <= cfg.threshold)
            .map(|p| p + 1);
        for (h, &x) in hits.iter_mut().zip(&cfg.x_values) {
            if matches!(first_hit, Some(r) if r <= x) {
                *h += 1;
            }
        }
        if matches!(first_hit, Some(r) if r <= x_pct) {
            hits_pct += 1;
        }
        let top = &index.entries[ranked[0].0];
        details.push(QueryDetail {
            cloud_id: q.cloud_id.clone(),
            rank1_id: top.cloud_id.clone(),
            rank1_dist_m: planar_distance(top.position, q.position),
            success_at_1: first_hit == Some(1),
        });
    }
    let n = queries.len() as f64;
    Ok(RecallReport {
        recall: cfg.x_values.iter().zip(&hits).map(|(&x, &h)| (x, h as f64 / n)).collect(),
        recall_one_percent: hits_pct as f64 / n,
        effective_db: effective,
        details,
    })
}

/// Eval-mode descriptor of one cloud (average deduplication).
pub fn describe_cloud(
    net: &LocNet,
    cloud: &PointCloud,
    quant: &QuantConfig,
    max_range: Option<f64>,
    max_points: Option<usize>,
    seed: u64,
) -> Result<Descriptor> {
    let mut r = rng::stream(seed, &[]);
    let c = prepare_cloud(cloud, max_range, max_points, &mut r)?;
    let t = quantize(&c, &quant.with_dedup(DedupPolicy::Average), 0, &mut r)?;
    Ok(net.descriptors(&t)?.remove(0))
}
