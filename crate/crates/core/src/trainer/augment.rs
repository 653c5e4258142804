//! Training-time point cloud augmentation.

use alloc::vec::Vec;
// needed without std; with std linked the inherent methods shadow it
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, PointCloud, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Per-coordinate Gaussian jitter (meters).
    pub jitter_sigma: f64,
    /// Fraction of points removed, in `[0, 1)`.
    pub removal_fraction: f64,
    /// Global translation drawn uniformly from `[-range, range]` per axis.
    pub translation_range: f64,
    /// Probability of mirroring across the x axis (`y → -y`, i.e. `θ → -θ`).
    pub flip_probability: f64,
    /// Random yaw drawn uniformly from `[-range, range]` degrees.
    pub rotation_range_deg: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { jitter_sigma: 0.05, removal_fraction: 0.1, translation_range: 1.0, flip_probability: 0.5, rotation_range_deg: 0.0 }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        Self { jitter_sigma: 0.0, removal_fraction: 0.0, translation_range: 0.0, flip_probability: 0.0, rotation_range_deg: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.jitter_sigma >= 0.0
            && (0.0..1.0).contains(&self.removal_fraction)
            && self.translation_range >= 0.0
            && (0.0..=1.0).contains(&self.flip_probability)
            && (0.0..=180.0).contains(&self.rotation_range_deg);
        if ok {
            Ok(())
        } else {
            Err(Error::config("invalid augmentation parameters"))
        }
    }
}

/// Mirror across the x axis.
pub fn flip_y(cloud: &PointCloud) -> PointCloud {
    cloud.map_points(|[x, y, z]| [x, -y, z])
}

/// Removal, jitter, yaw, translation and flip, in that order. Intensities are
/// carried along unchanged.
pub fn augment<R: Rng + ?Sized>(cloud: &PointCloud, cfg: &AugmentConfig, rng: &mut R) -> Result<PointCloud> {
    cfg.validate()?;
    let mut out = cloud.clone();
    if cfg.removal_fraction > 0.0 && !out.is_empty() {
        let n = out.len();
        let keep = n - (n as f64 * cfg.removal_fraction).round() as usize;
        let mut idx: Vec<usize> = rand::seq::index::sample(rng, n, keep).into_vec();
        idx.sort_unstable();
        out = out.select(&idx);
    }
    if cfg.jitter_sigma > 0.0 {
        let normal = Normal::new(0.0, cfg.jitter_sigma).map_err(|_| Error::config("jitter sigma"))?;
        out = out.map_points(|p| p.map(|c| (c as f64 + normal.sample(rng)) as f32));
    }
    if cfg.rotation_range_deg > 0.0 {
        let yaw = rng.random_range(-cfg.rotation_range_deg..=cfg.rotation_range_deg).to_radians();
        let (s, c) = yaw.sin_cos();
        out = out.map_points(|[x, y, z]| {
            let (x, y) = (x as f64, y as f64);
            [(c * x - s * y) as f32, (s * x + c * y) as f32, z]
        });
    }
    if cfg.translation_range > 0.0 {
        let r = cfg.translation_range;
        let t: [f64; 3] = core::array::from_fn(|_| rng.random_range(-r..=r));
        out = out.map_points(|p| core::array::from_fn(|a| (p[a] as f64 + t[a]) as f32));
    }
    if cfg.flip_probability > 0.0 && rng.random_bool(cfg.flip_probability) {
        out = flip_y(&out);
    }
    Ok(out)
}
