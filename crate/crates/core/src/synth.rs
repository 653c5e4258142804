//! Deterministic synthetic world for desk-scale experiments.
//!
//! Every place is an independent scene (ground plane with painted stripes,
//! boxes and long walls, each with its own reflectance). Every run revisits
//! all places from a translated, randomly yawed pose and ray-casts a rotating
//! multi-beam scanner, so returns are single-viewpoint, range limited and
//! denser near the sensor. Clouds are expressed in the sensor frame.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{rng, Error, PointCloud, PoseRecord, Result};

const STREAM_SCENE: u64 = 11;
const STREAM_VISIT: u64 = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_places: usize,
    pub n_runs: usize,
    /// Standard deviation of the per-visit ground translation (meters).
    pub noise: f64,
    pub beams: usize,
    /// Lowest and highest beam elevation (degrees).
    pub fov_deg: [f64; 2],
    pub azimuth_steps: usize,
    pub max_range: f64,
    pub sensor_height: f64,
    pub place_spacing: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            n_places: 50,
            n_runs: 2,
            noise: 0.5,
            beams: 16,
            fov_deg: [-15.0, 15.0],
            azimuth_steps: 720,
            max_range: 100.0,
            sensor_height: 1.73,
            place_spacing: 100.0,
        }
    }
}

impl SynthConfig {
    pub fn new(seed: u64, n_places: usize, n_runs: usize, noise: f64) -> Self {
        Self { seed, n_places, n_runs, noise, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_places < 2 || self.n_runs < 2 {
            return Err(Error::arg("need n_places >= 2 and n_runs >= 2"));
        }
        if !(self.noise >= 0.0) || self.beams == 0 || self.azimuth_steps == 0 || !(self.max_range > 0.0) {
            return Err(Error::arg("noise must be >= 0; beams, azimuth steps and range positive"));
        }
        if !(self.fov_deg[0] <= self.fov_deg[1]) || !(self.sensor_height > 0.0) || !(self.place_spacing > 0.0) {
            return Err(Error::arg("invalid scanner geometry"));
        }
        Ok(())
    }

    /// Ground-plane center of place `p`, on a square grid.
    pub fn place_center(&self, p: usize) -> [f64; 2] {
        let cols = (self.n_places as f64).sqrt().ceil() as usize;
        [(p / cols) as f64 * self.place_spacing, (p % cols) as f64 * self.place_spacing]
    }
}

#[derive(Debug, Clone)]
struct Obstacle {
    center: [f64; 2],
    half: [f64; 3],
    yaw: f64,
    intensity: f64,
    /// Intensity of the band `band.0 <= z < band.1`, if any.
    band: Option<(f64, f64, f64)>,
}

#[derive(Debug, Clone)]
struct Stripe {
    origin: [f64; 2],
    dir: [f64; 2],
    half_width: f64,
}

/// One place, in place-local coordinates with the ground at `z = 0`.
#[derive(Debug, Clone)]
pub struct Scene {
    ground_intensity: f64,
    stripes: Vec<Stripe>,
    obstacles: Vec<Obstacle>,
}

impl Scene {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let ground_intensity = rng.random_range(0.08..0.3);
        let stripes = (0..rng.random_range(2..=5))
            .map(|_| {
                let a = rng.random_range(0.0..PI);
                Stripe {
                    origin: [rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0)],
                    dir: [a.cos(), a.sin()],
                    half_width: rng.random_range(0.15..0.4),
                }
            })
            .collect();
        let mut obstacles = Vec::new();
        for _ in 0..rng.random_range(2..=4) {
            let dist = rng.random_range(8.0..45.0);
            let bearing = rng.random_range(-PI..PI);
            let band = rng.random_bool(0.5).then(|| {
                let lo = rng.random_range(0.5..2.5);
                (lo, lo + rng.random_range(0.5..1.5), rng.random_range(0.05..0.95))
            });
            obstacles.push(Obstacle {
                center: [dist * bearing.cos(), dist * bearing.sin()],
                half: [rng.random_range(10.0..30.0), 0.3, rng.random_range(1.5..4.0)],
                yaw: bearing + PI / 2.0,
                intensity: rng.random_range(0.05..0.95),
                band,
            });
        }
        while obstacles.len() < 14 {
            let half = [rng.random_range(0.5..5.0), rng.random_range(0.5..5.0), rng.random_range(0.5..6.0)];
            let dist = rng.random_range(5.0..60.0);
            if dist - half[0].hypot(half[1]) < 4.0 {
                continue;
            }
            let bearing = rng.random_range(-PI..PI);
            obstacles.push(Obstacle {
                center: [dist * bearing.cos(), dist * bearing.sin()],
                half,
                yaw: rng.random_range(-PI..PI),
                intensity: rng.random_range(0.05..0.95),
                band: None,
            });
        }
        Self { ground_intensity, stripes, obstacles }
    }

    fn ground_intensity_at(&self, x: f64, y: f64) -> f64 {
        let painted = self.stripes.iter().any(|s| {
            let (dx, dy) = (x - s.origin[0], y - s.origin[1]);
            (dx * s.dir[1] - dy * s.dir[0]).abs() <= s.half_width
        });
        if painted {
            0.9
        } else {
            self.ground_intensity
        }
    }

    /// Nearest hit along `origin + t * dir` with `t <= max_t`.
    fn cast(&self, origin: [f64; 3], dir: [f64; 3], max_t: f64) -> Option<([f64; 3], f64)> {
        let mut best_t = max_t;
        let mut best: Option<f64> = None;
        if dir[2] < 0.0 {
            let t = -origin[2] / dir[2];
            if t > 0.0 && t <= best_t {
                let (x, y) = (origin[0] + t * dir[0], origin[1] + t * dir[1]);
                best_t = t;
                best = Some(self.ground_intensity_at(x, y));
            }
        }
        for ob in &self.obstacles {
            if let Some(t) = ray_box(ob, origin, dir) {
                if t <= best_t {
                    let z = origin[2] + t * dir[2];
                    best_t = t;
                    best = Some(match ob.band {
                        Some((lo, hi, s)) if z >= lo && z < hi => s,
                        _ => ob.intensity,
                    });
                }
            }
        }
        best.map(|s| ([origin[0] + best_t * dir[0], origin[1] + best_t * dir[1], origin[2] + best_t * dir[2]], s))
    }
}

/// Slab test in the obstacle frame; returns the entry distance.
fn ray_box(ob: &Obstacle, origin: [f64; 3], dir: [f64; 3]) -> Option<f64> {
    let (s, c) = ob.yaw.sin_cos();
    let (ox, oy) = (origin[0] - ob.center[0], origin[1] - ob.center[1]);
    let o = [c * ox + s * oy, -s * ox + c * oy, origin[2] - ob.half[2]];
    let d = [c * dir[0] + s * dir[1], -s * dir[0] + c * dir[1], dir[2]];
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    for a in 0..3 {
        if d[a].abs() < 1e-12 {
            if o[a].abs() > ob.half[a] {
                return None;
            }
        } else {
            let (mut lo, mut hi) = ((-ob.half[a] - o[a]) / d[a], (ob.half[a] - o[a]) / d[a]);
            if lo > hi {
                core::mem::swap(&mut lo, &mut hi);
            }
            t0 = t0.max(lo);
            t1 = t1.min(hi);
        }
    }
    (t0 <= t1 && t0 > 1e-9).then_some(t0)
}

/// Scan `scene` from ground position `pos` with heading `yaw` (radians).
pub fn scan(scene: &Scene, cfg: &SynthConfig, pos: [f64; 2], yaw: f64) -> Result<PointCloud> {
    let origin = [pos[0], pos[1], cfg.sensor_height];
    let (s, c) = yaw.sin_cos();
    let mut points = Vec::new();
    let mut intensities = Vec::new();
    for b in 0..cfg.beams {
        let frac = if cfg.beams == 1 { 0.5 } else { b as f64 / (cfg.beams - 1) as f64 };
        let elev = (cfg.fov_deg[0] + frac * (cfg.fov_deg[1] - cfg.fov_deg[0])).to_radians();
        for j in 0..cfg.azimuth_steps {
            let az = 2.0 * PI * j as f64 / cfg.azimuth_steps as f64;
            let dir = [elev.cos() * az.cos(), elev.cos() * az.sin(), elev.sin()];
            if let Some((p, intensity)) = scene.cast(origin, dir, cfg.max_range) {
                let (dx, dy) = (p[0] - origin[0], p[1] - origin[1]);
                points.push([(c * dx + s * dy) as f32, (-s * dx + c * dy) as f32, (p[2] - origin[2]) as f32]);
                intensities.push(intensity as f32);
            }
        }
    }
    PointCloud::new(points, intensities)
}

/// Scenes of every place, in place order.
pub fn scenes(cfg: &SynthConfig) -> Vec<Scene> {
    (0..cfg.n_places).map(|p| Scene::random(&mut rng::stream(cfg.seed, &[STREAM_SCENE, p as u64]))).collect()
}

/// Pose (world ground position and yaw) of each visit.
fn visit(cfg: &SynthConfig, run: usize, place: usize) -> Result<([f64; 2], [f64; 2], f64)> {
    let mut r = rng::stream(cfg.seed, &[STREAM_VISIT, run as u64, place as u64]);
    let yaw = r.random_range(-PI..PI);
    let offset = if cfg.noise > 0.0 {
        let n = Normal::new(0.0, cfg.noise).map_err(|_| Error::arg("noise"))?;
        [n.sample(&mut r), n.sample(&mut r)]
    } else {
        [0.0, 0.0]
    };
    let center = cfg.place_center(place);
    Ok((offset, [center[0] + offset[0], center[1] + offset[1]], yaw))
}

/// Clouds and poses, run-major. Pure function of `cfg`.
pub fn generate_world(cfg: &SynthConfig) -> Result<(Vec<PointCloud>, Vec<PoseRecord>)> {
    cfg.validate()?;
    let scenes = scenes(cfg);
    let mut clouds = Vec::with_capacity(cfg.n_places * cfg.n_runs);
    let mut poses = Vec::with_capacity(cfg.n_places * cfg.n_runs);
    for run in 0..cfg.n_runs {
        for (place, scene) in scenes.iter().enumerate() {
            let (offset, position, yaw) = visit(cfg, run, place)?;
            clouds.push(scan(scene, cfg, offset, yaw)?);
            poses.push(PoseRecord {
                cloud_id: format!("run{run:02}_place{place:03}"),
                run_id: run as u32,
                timestamp: (run * 100_000 + place) as f64,
                position,
            });
        }
    }
    Ok((clouds, poses))
}

pub fn generate_synthetic_world(
    seed: u64,
    n_places: usize,
    n_runs: usize,
    noise: f64,
) -> Result<(Vec<PointCloud>, Vec<PoseRecord>)> {
    generate_world(&SynthConfig::new(seed, n_places, n_runs, noise))
}

/// Yaw (radians) of the visit of `place` in `run`.
pub fn visit_yaw(cfg: &SynthConfig, run: usize, place: usize) -> Result<f64> {
    Ok(visit(cfg, run, place)?.2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig { n_places: 3, n_runs: 2, azimuth_steps: 180, ..SynthConfig::default() }
    }

    #[test]
    fn counts_and_ids() {
        let cfg = SynthConfig { n_places: 4, n_runs: 3, azimuth_steps: 36, ..SynthConfig::default() };
        let (clouds, poses) = generate_world(&cfg).unwrap();
        assert_eq!(clouds.len(), 12);
        assert_eq!(poses.len(), 12);
        assert_eq!(poses[5].cloud_id, "run01_place001");
        assert!(clouds.iter().all(|c| !c.is_empty()));
    }

    #[test]
    fn invalid_counts() {
        assert!(generate_synthetic_world(1, 1, 2, 0.5).is_err());
        assert!(generate_synthetic_world(1, 2, 1, 0.5).is_err());
    }

    #[test]
    fn points_in_range_and_scanner_like() {
        let (clouds, _) = generate_world(&small()).unwrap();
        for c in &clouds {
            for (p, s) in c.iter() {
                let r = (p[0] as f64).hypot(p[1] as f64).hypot(p[2] as f64);
                assert!(r <= 100.0 + 1e-3);
                assert!((0.0..=1.0).contains(&s));
            }
            let near = c.points().iter().filter(|p| (p[0] as f64).hypot(p[1] as f64) < 25.0).count();
            assert!(near * 2 > c.len(), "denser near the origin");
        }
    }

    #[test]
    fn noiseless_runs_match_up_to_yaw() {
        let cfg = SynthConfig { noise: 0.0, ..small() };
        let (clouds, _) = generate_world(&cfg).unwrap();
        for place in 0..cfg.n_places {
            let (a, b) = (&clouds[place], &clouds[cfg.n_places + place]);
            assert_eq!(a.len(), b.len());
            let dyaw = visit_yaw(&cfg, 1, place).unwrap() - visit_yaw(&cfg, 0, place).unwrap();
            let (s, c) = dyaw.sin_cos();
            for ((pa, sa), (pb, sb)) in a.iter().zip(b.iter()) {
                // b is a rotated into the second heading
                let (x, y) = (pa[0] as f64, pa[1] as f64);
                let rx = c * x + s * y;
                let ry = -s * x + c * y;
                assert!((rx - pb[0] as f64).abs() < 1e-4 && (ry - pb[1] as f64).abs() < 1e-4);
                assert_eq!(pa[2], pb[2]);
                assert_eq!(sa, sb);
            }
        }
    }
}
