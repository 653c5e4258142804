//! Scan files, pose index and split manifest.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use placerec_core::cloud::Split;
use placerec_core::{PointCloud, PoseRecord};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("{path}: malformed file: {size} bytes is not a multiple of {record}")]
    Malformed { path: PathBuf, size: usize, record: usize },
    #[error("{path}: corrupt record {index}: non-finite value")]
    Corrupt { path: PathBuf, index: usize },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {msg}")]
    Invalid { path: PathBuf, msg: String },
}

pub type IoResult<T> = Result<T, IoError>;

/// On-disk scan layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanFormat {
    /// f32 x, y, z, intensity.
    #[default]
    Kitti,
    /// f64 x, y, z, intensity.
    QuadF64,
    /// f64 x, y, z; intensity 1.0.
    QuadF64Legacy,
}

impl ScanFormat {
    pub fn load(self, path: &Path) -> IoResult<PointCloud> {
        match self {
            ScanFormat::Kitti => load_kitti_bin(path),
            ScanFormat::QuadF64 => load_quad_f64_bin(path, false),
            ScanFormat::QuadF64Legacy => load_quad_f64_bin(path, true),
        }
    }
}

fn read(path: &Path) -> IoResult<Vec<u8>> {
    fs::read(path).map_err(|source| IoError::Read { path: path.to_path_buf(), source })
}

fn check_size(path: &Path, bytes: &[u8], record: usize) -> IoResult<()> {
    if bytes.len() % record != 0 {
        return Err(IoError::Malformed { path: path.to_path_buf(), size: bytes.len(), record });
    }
    Ok(())
}

fn build(path: &Path, rows: impl Iterator<Item = [f64; 4]>) -> IoResult<PointCloud> {
    let mut points = Vec::new();
    let mut intensities = Vec::new();
    for (index, [x, y, z, s]) in rows.enumerate() {
        let p = [x as f32, y as f32, z as f32];
        if p.iter().any(|v| !v.is_finite()) || !s.is_finite() {
            return Err(IoError::Corrupt { path: path.to_path_buf(), index });
        }
        points.push(p);
        intensities.push((s as f32).clamp(0.0, 1.0));
    }
    PointCloud::new(points, intensities).map_err(|e| IoError::Invalid { path: path.to_path_buf(), msg: e.to_string() })
}

/// Little-endian f32 quadruples; intensities clamped to [0, 1].
pub fn load_kitti_bin(path: &Path) -> IoResult<PointCloud> {
    let bytes = read(path)?;
    check_size(path, &bytes, 16)?;
    let f = |c: &[u8]| f32::from_le_bytes(c.try_into().unwrap()) as f64;
    build(path, bytes.chunks_exact(16).map(|r| [f(&r[0..4]), f(&r[4..8]), f(&r[8..12]), f(&r[12..16])]))
}

/// Little-endian f64 quadruples, or triples with intensity 1.0 when `legacy`.
pub fn load_quad_f64_bin(path: &Path, legacy: bool) -> IoResult<PointCloud> {
    let bytes = read(path)?;
    let record = if legacy { 24 } else { 32 };
    check_size(path, &bytes, record)?;
    let f = |c: &[u8]| f64::from_le_bytes(c.try_into().unwrap());
    build(
        path,
        bytes.chunks_exact(record).map(|r| {
            let s = if legacy { 1.0 } else { f(&r[24..32]) };
            [f(&r[0..8]), f(&r[8..16]), f(&r[16..24]), s]
        }),
    )
}

fn write_bytes(path: &Path, bytes: &[u8]) -> IoResult<()> {
    fs::write(path, bytes).map_err(|source| IoError::Write { path: path.to_path_buf(), source })
}

pub fn write_kitti_bin(path: &Path, cloud: &PointCloud) -> IoResult<()> {
    let mut bytes = Vec::with_capacity(cloud.len() * 16);
    for (p, s) in cloud.iter() {
        for v in [p[0], p[1], p[2], s] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_bytes(path, &bytes)
}

pub fn write_quad_f64_bin(path: &Path, cloud: &PointCloud, legacy: bool) -> IoResult<()> {
    let mut bytes = Vec::with_capacity(cloud.len() * 32);
    for (p, s) in cloud.iter() {
        for v in [p[0], p[1], p[2]] {
            bytes.extend_from_slice(&(v as f64).to_le_bytes());
        }
        if !legacy {
            bytes.extend_from_slice(&(s as f64).to_le_bytes());
        }
    }
    write_bytes(path, &bytes)
}

#[derive(Debug, Serialize, Deserialize)]
struct PoseRow {
    cloud_id: String,
    run_id: u32,
    timestamp: f64,
    northing: f64,
    easting: f64,
}

/// Pose index with header `cloud_id,run_id,timestamp,northing,easting`.
pub fn read_poses(path: &Path) -> IoResult<Vec<PoseRecord>> {
    let csv_err = |source| IoError::Csv { path: path.to_path_buf(), source };
    let mut rd = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for row in rd.deserialize::<PoseRow>() {
        let r = row.map_err(csv_err)?;
        if !r.northing.is_finite() || !r.easting.is_finite() {
            return Err(IoError::Invalid { path: path.to_path_buf(), msg: format!("non-finite position for {}", r.cloud_id) });
        }
        if !seen.insert(r.cloud_id.clone()) {
            return Err(IoError::Invalid { path: path.to_path_buf(), msg: format!("duplicate cloud_id {}", r.cloud_id) });
        }
        out.push(PoseRecord { cloud_id: r.cloud_id, run_id: r.run_id, timestamp: r.timestamp, position: [r.northing, r.easting] });
    }
    Ok(out)
}

pub fn write_poses(path: &Path, poses: &[PoseRecord]) -> IoResult<()> {
    let csv_err = |source| IoError::Csv { path: path.to_path_buf(), source };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for p in poses {
        w.serialize(PoseRow {
            cloud_id: p.cloud_id.clone(),
            run_id: p.run_id,
            timestamp: p.timestamp,
            northing: p.position[0],
            easting: p.position[1],
        })
        .map_err(csv_err)?;
    }
    w.flush().map_err(|source| IoError::Write { path: path.to_path_buf(), source })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum SplitLabel {
    Train,
    Test,
    Dropped,
}

#[derive(Debug, Serialize, Deserialize)]
struct SplitRow {
    cloud_id: String,
    split: SplitLabel,
}

/// Split manifest `cloud_id,split` in pose order.
pub fn write_split(path: &Path, poses: &[PoseRecord], split: &Split) -> IoResult<()> {
    let csv_err = |source| IoError::Csv { path: path.to_path_buf(), source };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let test: std::collections::HashSet<&str> = split.test.iter().map(String::as_str).collect();
    let dropped: std::collections::HashSet<&str> = split.dropped.iter().map(String::as_str).collect();
    for p in poses {
        let id = p.cloud_id.as_str();
        let label = if test.contains(id) {
            SplitLabel::Test
        } else if dropped.contains(id) {
            SplitLabel::Dropped
        } else {
            SplitLabel::Train
        };
        w.serialize(SplitRow { cloud_id: p.cloud_id.clone(), split: label }).map_err(csv_err)?;
    }
    w.flush().map_err(|source| IoError::Write { path: path.to_path_buf(), source })
}

pub fn read_split(path: &Path) -> IoResult<Split> {
    let csv_err = |source| IoError::Csv { path: path.to_path_buf(), source };
    let mut rd = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut split = Split::default();
    for row in rd.deserialize::<SplitRow>() {
        let r = row.map_err(csv_err)?;
        match r.split {
            SplitLabel::Train => split.train.push(r.cloud_id),
            SplitLabel::Test => split.test.push(r.cloud_id),
            SplitLabel::Dropped => split.dropped.push(r.cloud_id),
        }
    }
    Ok(split)
}

/// A processed dataset directory: `poses.csv`, `split.csv` and
/// `clouds/<cloud_id>.bin` in the f32 quadruple layout.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub poses: Vec<PoseRecord>,
    pub split: Split,
}

impl Dataset {
    pub const POSES: &'static str = "poses.csv";
    pub const SPLIT: &'static str = "split.csv";
    pub const CLOUDS: &'static str = "clouds";

    pub fn open(root: &Path) -> IoResult<Self> {
        Ok(Self { root: root.to_path_buf(), poses: read_poses(&root.join(Self::POSES))?, split: read_split(&root.join(Self::SPLIT))? })
    }

    pub fn cloud_path(root: &Path, cloud_id: &str) -> PathBuf {
        root.join(Self::CLOUDS).join(format!("{cloud_id}.bin"))
    }

    pub fn load_cloud(&self, cloud_id: &str) -> IoResult<PointCloud> {
        load_kitti_bin(&Self::cloud_path(&self.root, cloud_id))
    }

    /// Poses of the given split ids, in pose-index order.
    pub fn select(&self, ids: &[String]) -> Vec<PoseRecord> {
        let set: std::collections::HashSet<&str> = ids.iter().map(String::as_str).collect();
        self.poses.iter().filter(|p| set.contains(p.cloud_id.as_str())).cloned().collect()
    }

    /// Writes a dataset; the target directory is created if missing.
    pub fn write(root: &Path, clouds: &[PointCloud], poses: &[PoseRecord], split: &Split) -> IoResult<()> {
        let dir = root.join(Self::CLOUDS);
        fs::create_dir_all(&dir).map_err(|source| IoError::Write { path: dir.clone(), source })?;
        for (c, p) in clouds.iter().zip(poses) {
            write_kitti_bin(&Self::cloud_path(root, &p.cloud_id), c)?;
        }
        write_poses(&root.join(Self::POSES), poses)?;
        write_split(&root.join(Self::SPLIT), poses, split)
    }
}

/// Buffered text writer that reports the target path on failure.
pub struct TextFile {
    path: PathBuf,
    w: BufWriter<fs::File>,
}

impl TextFile {
    pub fn create(path: &Path) -> IoResult<Self> {
        let f = fs::File::create(path).map_err(|source| IoError::Write { path: path.to_path_buf(), source })?;
        Ok(Self { path: path.to_path_buf(), w: BufWriter::new(f) })
    }

    pub fn line(&mut self, s: &str) -> IoResult<()> {
        writeln!(self.w, "{s}").map_err(|source| IoError::Write { path: self.path.clone(), source })
    }

    pub fn finish(mut self) -> IoResult<()> {
        self.w.flush().map_err(|source| IoError::Write { path: self.path.clone(), source })
    }
}
