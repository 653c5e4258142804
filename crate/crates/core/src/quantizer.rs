//! Cartesian and spherical quantization of point clouds into sparse tensors
//! with one site per occupied cuboid and an intensity (or unit) feature.

use alloc::vec::Vec;
// needed without std; with std linked the inherent methods shadow it
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::sparse::{SparseTensor, COORD_LIMIT};
use crate::{Error, PointCloud, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantMode {
    Cartesian,
    Spherical,
}

/// How several intensities falling into one cuboid collapse to a feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DedupPolicy {
    /// Uniform pick among the cuboid's intensities (training).
    RandomPick,
    /// Arithmetic mean (inference).
    Average,
}

/// Quantization grid. Steps and bounds are per axis: `x, y, z` in meters for
/// Cartesian mode, `r` (meters), `θ`, `φ` (degrees) for spherical mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantConfig {
    pub mode: QuantMode,
    pub steps: [f64; 3],
    /// `[min, max)` per axis.
    pub bounds: [[f64; 2]; 3],
    pub intensity_enabled: bool,
    pub dedup_policy: DedupPolicy,
}

impl QuantConfig {
    /// 16-beam spherical grid: r = 2.5 m, θ = φ = 2°.
    pub fn spherical() -> Self {
        Self {
            mode: QuantMode::Spherical,
            steps: [2.5, 2.0, 2.0],
            bounds: [[0.0, 100.0], [-180.0, 180.0], [-25.0, 25.0]],
            intensity_enabled: true,
            dedup_policy: DedupPolicy::Average,
        }
    }

    /// 64-beam variant: φ step divided by four.
    pub fn spherical_64_beam() -> Self {
        Self { steps: [2.5, 2.0, 0.5], ..Self::spherical() }
    }

    pub fn cartesian() -> Self {
        Self {
            mode: QuantMode::Cartesian,
            steps: [1.0, 1.0, 1.0],
            bounds: [[-100.0, 100.0], [-100.0, 100.0], [-30.0, 30.0]],
            intensity_enabled: false,
            dedup_policy: DedupPolicy::Average,
        }
    }

    pub fn with_dedup(&self, dedup_policy: DedupPolicy) -> Self {
        Self { dedup_policy, ..self.clone() }
    }

    /// Number of bins per axis.
    pub fn bins(&self) -> [i64; 3] {
        core::array::from_fn(|a| {
            let [lo, hi] = self.bounds[a];
            ((hi - lo) / self.steps[a]).ceil() as i64
        })
    }

    pub fn validate(&self) -> Result<()> {
        for a in 0..3 {
            let [lo, hi] = self.bounds[a];
            if !(self.steps[a] > 0.0) || !self.steps[a].is_finite() {
                return Err(Error::config(alloc::format!("step on axis {a} must be > 0")));
            }
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::config(alloc::format!("bounds on axis {a} need min < max")));
            }
        }
        if self.mode == QuantMode::Spherical {
            let [r, theta, phi] = self.bounds;
            if r[0] < 0.0 {
                return Err(Error::config("spherical r bound must be >= 0"));
            }
            if theta[0] < -180.0 || theta[1] > 180.0 {
                return Err(Error::config("θ bounds must lie in [-180, 180)"));
            }
            if phi[0] < -90.0 || phi[1] > 90.0 {
                return Err(Error::config("φ bounds must lie in [-90, 90]"));
            }
        }
        if let Some(a) = self.bins().iter().position(|&b| b >= COORD_LIMIT as i64) {
            return Err(Error::CoordOverflow(alloc::format!(
                "axis {a} has {} bins, limit {}",
                self.bins()[a],
                COORD_LIMIT
            )));
        }
        Ok(())
    }

    /// Axis values of a Cartesian point in this grid's coordinate system.
    pub fn axis_values(&self, p: [f64; 3]) -> [f64; 3] {
        match self.mode {
            QuantMode::Cartesian => p,
            QuantMode::Spherical => to_spherical(p),
        }
    }

    /// Integer cuboid index of a point, `None` when it falls outside the bounds.
    pub fn index_of(&self, p: [f64; 3]) -> Option<[i32; 3]> {
        let v = self.axis_values(p);
        let mut idx = [0i32; 3];
        for a in 0..3 {
            idx[a] = cuboid_index(v[a], self.bounds[a], self.steps[a])?;
        }
        Some(idx)
    }
}

/// `(r, θ, φ)` with angles in degrees; `atan2(0, 0) = 0`.
pub fn to_spherical(p: [f64; 3]) -> [f64; 3] {
    let [x, y, z] = p;
    let rho = x.hypot(y);
    let r = rho.hypot(z);
    [r, y.atan2(x).to_degrees(), z.atan2(rho).to_degrees()]
}

pub fn from_spherical(s: [f64; 3]) -> [f64; 3] {
    let [r, theta, phi] = s;
    let (st, ct) = theta.to_radians().sin_cos();
    let (sp, cp) = phi.to_radians().sin_cos();
    [r * cp * ct, r * cp * st, r * sp]
}

/// `floor((value - min) / step)` on the half-open interval `[min, max)`.
pub fn cuboid_index(value: f64, [min, max]: [f64; 2], step: f64) -> Option<i32> {
    if !(value >= min && value < max) {
        return None;
    }
    Some(((value - min) / step).floor() as i32)
}

/// Quantize one cloud into batch slot `batch`. Sites are emitted in
/// lexicographic index order, so the result does not depend on point order.
pub fn quantize<R: Rng + ?Sized>(
    cloud: &PointCloud,
    cfg: &QuantConfig,
    batch: u32,
    rng: &mut R,
) -> Result<SparseTensor> {
    cfg.validate()?;
    let mut cells: Vec<([i32; 3], f32)> = cloud
        .iter()
        .filter_map(|(p, s)| {
            let p = [p[0] as f64, p[1] as f64, p[2] as f64];
            cfg.index_of(p).map(|idx| (idx, s))
        })
        .collect();
    if cells.is_empty() {
        return Err(Error::EmptyCloud);
    }
    cells.sort_unstable_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let mut t = SparseTensor::empty(1);
    let mut start = 0;
    while start < cells.len() {
        let idx = cells[start].0;
        let end = start + cells[start..].iter().take_while(|c| c.0 == idx).count();
        let group = &cells[start..end];
        let feature = if !cfg.intensity_enabled {
            1.0
        } else {
            match cfg.dedup_policy {
                DedupPolicy::RandomPick => group[rng.random_range(0..group.len())].1 as f64,
                DedupPolicy::Average => {
                    let sum: f64 = group.iter().map(|c| c.1 as f64).sum();
                    let lo = group[0].1 as f64;
                    let hi = group[group.len() - 1].1 as f64;
                    (sum / group.len() as f64).clamp(lo, hi)
                }
            }
        };
        t.push_site(batch, idx, &[feature]);
        start = end;
    }
    Ok(t)
}

/// Keeps points with range `<= max_r`.
pub fn max_range_filter(cloud: &PointCloud, max_r: f64) -> Result<PointCloud> {
    if !(max_r > 0.0) {
        return Err(Error::arg("max_r must be > 0"));
    }
    Ok(cloud.retain(|p, _| {
        let (x, y, z) = (p[0] as f64, p[1] as f64, p[2] as f64);
        (x * x + y * y + z * z).sqrt() <= max_r
    }))
}

/// Uniform sample of `k` points without replacement, original order kept.
pub fn random_subsample<R: Rng + ?Sized>(cloud: &PointCloud, k: usize, rng: &mut R) -> Result<PointCloud> {
    if k == 0 {
        return Err(Error::arg("k must be >= 1"));
    }
    if cloud.len() <= k {
        return Ok(cloud.clone());
    }
    let mut idx = rand::seq::index::sample(rng, cloud.len(), k).into_vec();
    idx.sort_unstable();
    Ok(cloud.select(&idx))
}
