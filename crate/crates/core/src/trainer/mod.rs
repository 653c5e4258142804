//! Triplet-margin training with batch-hard mining, augmentation and Adam.

mod adam;
mod augment;
mod loss;

pub use adam::{adam_step, AdamConfig, DecayMode, OptimState};
pub use augment::{augment, flip_y, AugmentConfig};
pub use loss::{distance_matrix, mine_hard_triplets, triplet_loss, triplet_loss_grad, PairLabels, TripletBatch};

use alloc::vec::Vec;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::cloud::planar_distance;
use crate::locnet::{LocNet, Mode};
use crate::quantizer::{self, DedupPolicy, QuantConfig};
use crate::{rng, Error, PointCloud, Result, SparseTensor};

const STREAM_SHUFFLE: u64 = 1;
const STREAM_ELEMENT: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: u32,
    pub margin: f64,
    pub pos_radius: f64,
    pub neg_radius: f64,
    pub groups_per_batch: usize,
    pub clouds_per_group: usize,
    /// Let a location seen only once pair with an independently augmented
    /// copy of itself.
    pub self_positives: bool,
    pub max_range: Option<f64>,
    pub max_points: Option<usize>,
    pub adam: AdamConfig,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            margin: 0.2,
            pos_radius: 10.0,
            neg_radius: 50.0,
            groups_per_batch: 8,
            clouds_per_group: 2,
            self_positives: false,
            max_range: None,
            max_points: None,
            adam: AdamConfig::default(),
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin >= 0.0) || !(self.pos_radius > 0.0) || !(self.neg_radius >= self.pos_radius) {
            return Err(Error::config("need margin >= 0 and 0 < pos_radius <= neg_radius"));
        }
        if self.groups_per_batch < 2 || self.clouds_per_group < 2 {
            return Err(Error::config("batches need >= 2 groups of >= 2 clouds"));
        }
        if matches!(self.max_range, Some(r) if !(r > 0.0)) || self.max_points == Some(0) {
            return Err(Error::config("max_range must be > 0 and max_points >= 1"));
        }
        self.adam.validate()?;
        self.augment.validate()
    }
}

/// Range filtering and subsampling applied before quantization.
pub fn prepare_cloud<R: rand::Rng + ?Sized>(
    cloud: &PointCloud,
    max_range: Option<f64>,
    max_points: Option<usize>,
    rng: &mut R,
) -> Result<PointCloud> {
    let mut c = match max_range {
        Some(r) => quantizer::max_range_filter(cloud, r)?,
        None => cloud.clone(),
    };
    if let Some(k) = max_points {
        c = quantizer::random_subsample(&c, k, rng)?;
    }
    Ok(c)
}

/// Training clouds grouped into locations.
#[derive(Debug, Clone)]
pub struct TrainSet {
    pub clouds: Vec<PointCloud>,
    pub positions: Vec<[f64; 2]>,
    /// Groups of cloud indices within `pos_radius` of the group seed.
    pub groups: Vec<Vec<usize>>,
}

impl TrainSet {
    pub fn new(clouds: Vec<PointCloud>, positions: Vec<[f64; 2]>, cfg: &TrainConfig) -> Result<Self> {
        if clouds.len() != positions.len() {
            return Err(Error::shape("one position per cloud required"));
        }
        let mut assigned = alloc::vec![false; clouds.len()];
        let mut groups = Vec::new();
        for i in 0..clouds.len() {
            if assigned[i] {
                continue;
            }
            let members: Vec<usize> = (i..clouds.len())
                .filter(|&j| !assigned[j] && planar_distance(positions[i], positions[j]) <= cfg.pos_radius)
                .collect();
            members.iter().for_each(|&j| assigned[j] = true);
            if members.len() >= 2 || cfg.self_positives {
                groups.push(members);
            }
        }
        if groups.is_empty() {
            return Err(Error::config("training set has no positive pair within the positive radius"));
        }
        if groups.len() < 2 {
            return Err(Error::config("training set needs at least two locations"));
        }
        Ok(Self { clouds, positions, groups })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: u32,
    /// Mean hinge loss of the hardest triplet over all candidate anchors.
    pub mean_loss: f64,
    /// Active triplets divided by candidate anchors.
    pub active_ratio: f64,
    pub batches: usize,
    pub skipped_batches: usize,
}

/// Cloud indices of each training batch of `epoch`.
pub fn epoch_batches(set: &TrainSet, cfg: &TrainConfig, seed: u64, epoch: u32) -> Vec<Vec<usize>> {
    let mut r = rng::stream(seed, &[STREAM_SHUFFLE, epoch as u64]);
    let mut order: Vec<usize> = (0..set.groups.len()).collect();
    order.shuffle(&mut r);
    order
        .chunks(cfg.groups_per_batch)
        .filter(|chunk| chunk.len() >= 2)
        .map(|chunk| {
            chunk
                .iter()
                .flat_map(|&g| {
                    let mut members = set.groups[g].clone();
                    members.shuffle(&mut r);
                    members.into_iter().cycle().take(cfg.clouds_per_group).collect::<Vec<_>>()
                })
                .collect()
        })
        .collect()
}

/// One pass over the training set: augment, quantize with random-pick
/// deduplication, forward, mine, backward and Adam step per batch. Batches
/// without active triplets skip the update.
pub fn train_epoch(
    net: &mut LocNet,
    opt: &mut OptimState,
    set: &TrainSet,
    quant: &QuantConfig,
    cfg: &TrainConfig,
    seed: u64,
    epoch: u32,
) -> Result<EpochMetrics> {
    cfg.validate()?;
    let quant = quant.with_dedup(DedupPolicy::RandomPick);
    let mut metrics = EpochMetrics { epoch, mean_loss: 0.0, active_ratio: 0.0, batches: 0, skipped_batches: 0 };
    let (mut active, mut candidates) = (0usize, 0usize);
    let mut loss_sum = 0.0;
    for (b, members) in epoch_batches(set, cfg, seed, epoch).into_iter().enumerate() {
        let parts = members
            .iter()
            .enumerate()
            .map(|(e, &ci)| {
                let mut r = rng::stream(seed, &[STREAM_ELEMENT, epoch as u64, b as u64, e as u64]);
                let c = prepare_cloud(&set.clouds[ci], cfg.max_range, cfg.max_points, &mut r)?;
                let c = augment(&c, &cfg.augment, &mut r)?;
                quantizer::quantize(&c, &quant, e as u32, &mut r)
            })
            .collect::<Result<Vec<_>>>()?;
        let input = SparseTensor::collate(&parts)?;
        let positions: Vec<[f64; 2]> = members.iter().map(|&i| set.positions[i]).collect();
        let labels = PairLabels::from_positions(&positions, cfg.pos_radius, cfg.neg_radius);

        let (descs, tape) = net.forward(&input, Mode::Train)?;
        let tape = tape.expect("training forward records a tape");
        let mined = mine_hard_triplets(&descs, &labels, cfg.margin)?;
        metrics.batches += 1;
        active += mined.len();
        candidates += mined.candidate_anchors;
        loss_sum += mined.losses.iter().sum::<f64>() / mined.candidate_anchors.max(1) as f64;
        net.update_running_stats(&tape);
        if mined.is_empty() {
            metrics.skipped_batches += 1;
            continue;
        }
        let (_, grad_desc) = triplet_loss_grad(&descs, &mined)?;
        let (grads, _) = net.backward(&tape, &grad_desc)?;
        adam_step(&mut net.params_mut(), &grads.slices(), opt, &cfg.adam)?;
    }
    if metrics.batches > 0 {
        metrics.mean_loss = loss_sum / metrics.batches as f64;
    }
    metrics.active_ratio = if candidates > 0 { active as f64 / candidates as f64 } else { 0.0 };
    Ok(metrics)
}
