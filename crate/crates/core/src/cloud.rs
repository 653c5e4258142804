//! Point clouds, ground-truth poses and the spatial train/test split.

use alloc::string::String;
use alloc::vec::Vec;
// needed without std; with std linked the inherent methods shadow it
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A single LiDAR scan: Cartesian coordinates in meters plus a normalized
/// reflectance per point.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    points: Vec<[f32; 3]>,
    intensities: Vec<f32>,
}

impl PointCloud {
    /// Validates that coordinates are finite and intensities lie in `[0, 1]`.
    pub fn new(points: Vec<[f32; 3]>, intensities: Vec<f32>) -> Result<Self> {
        if points.len() != intensities.len() {
            return Err(Error::shape("points and intensities differ in length"));
        }
        if let Some(i) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::arg(alloc::format!("non-finite coordinate at point {i}")));
        }
        if let Some(i) = intensities.iter().position(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::arg(alloc::format!("intensity out of [0,1] at point {i}")));
        }
        Ok(Self { points, intensities })
    }

    /// Builds a cloud where every intensity is 1.0.
    pub fn from_points(points: Vec<[f32; 3]>) -> Result<Self> {
        let n = points.len();
        Self::new(points, alloc::vec![1.0; n])
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f32; 3]] {
        &self.points
    }

    pub fn intensities(&self) -> &[f32] {
        &self.intensities
    }

    pub fn iter(&self) -> impl Iterator<Item = ([f32; 3], f32)> + '_ {
        self.points.iter().copied().zip(self.intensities.iter().copied())
    }

    /// Keeps the points for which `keep` returns true.
    pub fn retain(&self, mut keep: impl FnMut([f32; 3], f32) -> bool) -> PointCloud {
        let (points, intensities) = self.iter().filter(|&(p, s)| keep(p, s)).unzip();
        PointCloud { points, intensities }
    }

    /// Applies `f` to every coordinate. Non-finite results are the caller's
    /// responsibility; all in-crate callers use finite affine maps.
    pub(crate) fn map_points(&self, mut f: impl FnMut([f32; 3]) -> [f32; 3]) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|&p| f(p)).collect(),
            intensities: self.intensities.clone(),
        }
    }

    pub(crate) fn select(&self, idx: &[usize]) -> PointCloud {
        PointCloud {
            points: idx.iter().map(|&i| self.points[i]).collect(),
            intensities: idx.iter().map(|&i| self.intensities[i]).collect(),
        }
    }

    pub fn max_intensity(&self) -> f32 {
        self.intensities.iter().copied().fold(0.0f32, f32::max)
    }

    /// Divides intensities by `max` (typically the dataset maximum) and
    /// clamps to [0, 1]; a non-positive `max` leaves the cloud unchanged.
    pub fn rescale_intensity(&self, max: f32) -> PointCloud {
        if !(max > 0.0) {
            return self.clone();
        }
        PointCloud {
            points: self.points.clone(),
            intensities: self.intensities.iter().map(|s| (s / max).clamp(0.0, 1.0)).collect(),
        }
    }
}

/// Ground-truth location of one scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub cloud_id: String,
    pub run_id: u32,
    pub timestamp: f64,
    /// `[northing, easting]` in meters.
    pub position: [f64; 2],
}

impl PoseRecord {
    pub fn ground_distance(&self, other: &PoseRecord) -> f64 {
        planar_distance(self.position, other.position)
    }
}

pub fn planar_distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Axis-aligned square on the ground plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Square {
    pub center: [f64; 2],
    pub side: f64,
}

impl Square {
    /// L∞ distance from `p` to the square; zero inside or on the edge.
    fn outside_distance(&self, p: [f64; 2]) -> f64 {
        let h = self.side / 2.0;
        let dx = ((p[0] - self.center[0]).abs() - h).max(0.0);
        let dy = ((p[1] - self.center[1]).abs() - h).max(0.0);
        dx.max(dy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_squares: Vec<Square>,
    pub buffer_width: f64,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.test_squares.iter().any(|s| !(s.side > 0.0) || !s.center.iter().all(|c| c.is_finite())) {
            return Err(Error::config("test squares must have positive side and finite center"));
        }
        if !(self.buffer_width >= 0.0) {
            return Err(Error::config("buffer_width must be >= 0"));
        }
        Ok(())
    }
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { test_squares: Vec::new(), buffer_width: 10.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitClass {
    Train,
    Test,
    Dropped,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Split {
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub dropped: Vec<String>,
}

pub fn classify(position: [f64; 2], spec: &SplitSpec) -> SplitClass {
    let d = spec
        .test_squares
        .iter()
        .map(|s| s.outside_distance(position))
        .fold(f64::INFINITY, f64::min);
    if d <= 0.0 {
        SplitClass::Test
    } else if d <= spec.buffer_width {
        SplitClass::Dropped
    } else {
        SplitClass::Train
    }
}

/// Partition poses into train / test / dropped cloud ids. A pose on a square
/// edge is inside; a pose exactly `buffer_width` away is dropped.
pub fn split_train_test(poses: &[PoseRecord], spec: &SplitSpec) -> Result<Split> {
    if poses.is_empty() {
        return Err(Error::arg("split_train_test needs at least one pose"));
    }
    spec.validate()?;
    let mut split = Split::default();
    for pose in poses {
        let bucket = match classify(pose.position, spec) {
            SplitClass::Train => &mut split.train,
            SplitClass::Test => &mut split.test,
            SplitClass::Dropped => &mut split.dropped,
        };
        bucket.push(pose.cloud_id.clone());
    }
    Ok(split)
}

/// Greedy spacing filter over one time-ordered run: keep the first pose, then
/// every pose at least `spacing` meters from the last kept one.
pub fn subsample_by_distance(poses: &[PoseRecord], spacing: f64) -> Result<Vec<PoseRecord>> {
    if !(spacing > 0.0) {
        return Err(Error::arg("spacing must be > 0"));
    }
    let mut kept: Vec<PoseRecord> = Vec::new();
    for pose in poses {
        match kept.last() {
            Some(last) if pose.ground_distance(last) < spacing => {}
            _ => kept.push(pose.clone()),
        }
    }
    Ok(kept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::vec;

    fn pose(id: usize, n: f64, e: f64) -> PoseRecord {
        PoseRecord { cloud_id: format!("c{id}"), run_id: 0, timestamp: id as f64, position: [n, e] }
    }

    fn one_square() -> SplitSpec {
        SplitSpec { test_squares: vec![Square { center: [0.0, 0.0], side: 100.0 }], buffer_width: 10.0 }
    }

    #[test]
    fn cloud_rejects_bad_intensity() {
        assert!(PointCloud::new(vec![[0.0; 3]], vec![1.5]).is_err());
        assert!(PointCloud::new(vec![[f32::NAN, 0.0, 0.0]], vec![0.5]).is_err());
        assert!(PointCloud::new(vec![[0.0; 3]], vec![]).is_err());
        assert!(PointCloud::new(vec![], vec![]).unwrap().is_empty());
    }

    #[test]
    fn split_examples() {
        let spec = one_square();
        assert_eq!(classify([0.0, 0.0], &spec), SplitClass::Test);
        assert_eq!(classify([55.0, 0.0], &spec), SplitClass::Dropped);
        assert_eq!(classify([70.0, 0.0], &spec), SplitClass::Train);
        // closure rules
        assert_eq!(classify([50.0, 0.0], &spec), SplitClass::Test);
        assert_eq!(classify([60.0, 0.0], &spec), SplitClass::Dropped);
        assert_eq!(classify([60.0, 60.0], &spec), SplitClass::Dropped);
    }

    #[test]
    fn split_without_squares_is_all_train() {
        let poses = [pose(0, 1.0, 2.0), pose(1, 500.0, 0.0)];
        let split = split_train_test(&poses, &SplitSpec::default()).unwrap();
        assert_eq!(split.train.len(), 2);
        assert!(split_train_test(&[], &SplitSpec::default()).is_err());
    }

    #[test]
    fn subsample_line() {
        let poses: Vec<_> = (0..=100).map(|i| pose(i, i as f64, 0.0)).collect();
        let kept = subsample_by_distance(&poses, 5.0).unwrap();
        assert_eq!(kept.len(), 21);
        assert!(kept.iter().enumerate().all(|(k, p)| p.position[0] == 5.0 * k as f64));
        assert_eq!(subsample_by_distance(&poses[..1], 5.0).unwrap().len(), 1);
        assert!(subsample_by_distance(&poses, 0.0).is_err());
    }
}
