//! Binary checkpoint: magic, format version, completed epochs, then ordered
//! records of (name, shape, little-endian data). Parameters come first in
//! canonical order, then normalization running statistics, then optimizer
//! moments (`adam.m.<name>`, `adam.v.<name>`) and `adam.step` when present.
//!
//! Records are stored as f64 so that resumed training continues bit-exactly;
//! f32 records are accepted on load.

use std::path::Path;

use placerec_core::locnet::ParamInfo;
use placerec_core::trainer::OptimState;
use placerec_core::{rng, ArchConfig, LocNet};
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"PLRCKPT\0";
pub const VERSION: u32 = 1;

const DTYPE_F32: u8 = 4;
const DTYPE_F64: u8 = 8;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("not a checkpoint (bad magic)")]
    Magic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("truncated checkpoint")]
    Truncated,
    #[error("checkpoint does not match the architecture: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Core(#[from] placerec_core::Error),
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    /// Epochs completed when the checkpoint was written.
    pub epoch: u32,
    pub net: LocNet,
    pub opt: Option<OptimState>,
}

struct Record {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn push_record(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f64]) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(DTYPE_F64);
    out.push(shape.len() as u8);
    for &d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode(net: &LocNet, opt: Option<&OptimState>, epoch: u32) -> Vec<u8> {
    let info = net.param_info();
    let buffers = net.buffer_info();
    let mut records: Vec<(String, Vec<usize>, &[f64])> = Vec::new();
    for (i, p) in info.iter().zip(net.params()) {
        records.push((i.name.clone(), i.shape.clone(), p));
    }
    for (i, b) in buffers.iter().zip(net.buffers()) {
        records.push((i.name.clone(), i.shape.clone(), b));
    }
    let step = opt.map(|o| [o.step as f64]);
    if let (Some(o), Some(step)) = (opt, step.as_ref()) {
        for (i, m) in info.iter().zip(&o.m) {
            records.push((format!("adam.m.{}", i.name), i.shape.clone(), m));
        }
        for (i, v) in info.iter().zip(&o.v) {
            records.push((format!("adam.v.{}", i.name), i.shape.clone(), v));
        }
        records.push(("adam.step".into(), vec![1], step));
    }
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&epoch.to_le_bytes());
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for (name, shape, data) in &records {
        push_record(&mut out, name, shape, data);
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(CheckpointError::Truncated)?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn record(&mut self) -> Result<Record, CheckpointError> {
        let n = self.u16()? as usize;
        let name = String::from_utf8(self.take(n)?.to_vec()).map_err(|_| CheckpointError::Mismatch("record name is not UTF-8".into()))?;
        let dtype = self.u8()?;
        let ndim = self.u8()? as usize;
        let shape = (0..ndim).map(|_| self.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let count: usize = shape.iter().product();
        let data = match dtype {
            DTYPE_F64 => self.take(count * 8)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
            DTYPE_F32 => self.take(count * 4)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
            other => return Err(CheckpointError::Mismatch(format!("record {name} has unknown dtype {other}"))),
        };
        Ok(Record { name, shape, data })
    }
}

fn expect(records: &mut std::vec::IntoIter<Record>, info: &ParamInfo, name: &str) -> Result<Vec<f64>, CheckpointError> {
    let r = records.next().ok_or_else(|| CheckpointError::Mismatch(format!("missing record {name}")))?;
    if r.name != name {
        return Err(CheckpointError::Mismatch(format!("expected record {name}, found {}", r.name)));
    }
    if r.shape != info.shape {
        return Err(CheckpointError::Mismatch(format!("{name} has shape {:?}, architecture needs {:?}", r.shape, info.shape)));
    }
    Ok(r.data)
}

/// Decodes a checkpoint and validates every record shape against `arch`.
pub fn decode(bytes: &[u8], arch: &ArchConfig) -> Result<Checkpoint, CheckpointError> {
    arch.validate()?;
    let mut rd = Reader { bytes, at: 0 };
    if rd.take(8)? != MAGIC {
        return Err(CheckpointError::Magic);
    }
    let version = rd.u32()?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let epoch = rd.u32()?;
    let n = rd.u32()? as usize;
    let records = (0..n).map(|_| rd.record()).collect::<Result<Vec<_>, _>>()?;
    if rd.at != bytes.len() {
        return Err(CheckpointError::Mismatch("trailing bytes after the last record".into()));
    }
    let mut net = LocNet::init(arch, &mut rng::stream(0, &[]))?;
    let info = net.param_info();
    let buffers = net.buffer_info();
    let mut it = records.into_iter();
    for (slot, i) in net.params_mut().into_iter().zip(&info) {
        slot.copy_from_slice(&expect(&mut it, i, &i.name)?);
    }
    for (slot, i) in net.buffers_mut().into_iter().zip(&buffers) {
        slot.copy_from_slice(&expect(&mut it, i, &i.name)?);
    }
    let rest: Vec<Record> = it.collect();
    let opt = if rest.is_empty() {
        None
    } else {
        let mut it = rest.into_iter();
        let m = info.iter().map(|i| expect(&mut it, i, &format!("adam.m.{}", i.name))).collect::<Result<Vec<_>, _>>()?;
        let v = info.iter().map(|i| expect(&mut it, i, &format!("adam.v.{}", i.name))).collect::<Result<Vec<_>, _>>()?;
        let step_info = ParamInfo { name: "adam.step".into(), shape: vec![1] };
        let step = expect(&mut it, &step_info, "adam.step")?[0];
        if let Some(r) = it.next() {
            return Err(CheckpointError::Mismatch(format!("unexpected record {}", r.name)));
        }
        if !(step >= 0.0 && step.fract() == 0.0) {
            return Err(CheckpointError::Mismatch("adam.step must be a non-negative integer".into()));
        }
        Some(OptimState { m, v, step: step as u64 })
    };
    Ok(Checkpoint { epoch, net, opt })
}

pub fn save(path: &Path, net: &LocNet, opt: Option<&OptimState>, epoch: u32) -> Result<(), CheckpointError> {
    std::fs::write(path, encode(net, opt, epoch)).map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })
}

pub fn load(path: &Path, arch: &ArchConfig) -> Result<Checkpoint, CheckpointError> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })?;
    decode(&bytes, arch)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ArchConfig {
        ArchConfig { block_channels: [2, 2, 3, 3], fpn_width: 4, descriptor_dim: 4, ..ArchConfig::default() }
    }

    #[test]
    fn round_trip_is_exact() {
        let arch = small();
        let mut net = LocNet::init(&arch, &mut rng::stream(3, &[])).unwrap();
        net.buffers_mut()[0][1] = 0.25;
        let mut opt = OptimState::for_params(&net.params());
        opt.m[2][0] = -1.5;
        opt.step = 17;
        let bytes = encode(&net, Some(&opt), 4);
        let ck = decode(&bytes, &arch).unwrap();
        assert_eq!(ck.epoch, 4);
        assert_eq!(ck.net, net);
        assert_eq!(ck.opt.unwrap(), opt);
        assert_eq!(encode(&ck.net, None, 4), encode(&net, None, 4));
    }

    #[test]
    fn architecture_mismatch_is_rejected() {
        let net = LocNet::init(&small(), &mut rng::stream(3, &[])).unwrap();
        let bytes = encode(&net, None, 0);
        let other = ArchConfig { fpn_width: 6, descriptor_dim: 6, ..small() };
        assert!(matches!(decode(&bytes, &other), Err(CheckpointError::Mismatch(_))));
    }

    #[test]
    fn bad_magic_and_truncation() {
        let net = LocNet::init(&small(), &mut rng::stream(3, &[])).unwrap();
        let bytes = encode(&net, None, 0);
        assert!(matches!(decode(&bytes[..bytes.len() - 3], &small()), Err(CheckpointError::Truncated)));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad, &small()), Err(CheckpointError::Magic)));
    }

    #[test]
    fn f32_records_load() {
        let arch = small();
        let net = LocNet::init(&arch, &mut rng::stream(3, &[])).unwrap();
        // re-encode every record at single precision
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
        let infos: Vec<_> = net.param_info().into_iter().chain(net.buffer_info()).collect();
        let data: Vec<&[f64]> = net.params().into_iter().chain(net.buffers()).collect();
        out.extend_from_slice(&(infos.len() as u32).to_le_bytes());
        for (i, d) in infos.iter().zip(data) {
            out.extend_from_slice(&(i.name.len() as u16).to_le_bytes());
            out.extend_from_slice(i.name.as_bytes());
            out.push(DTYPE_F32);
            out.push(i.shape.len() as u8);
            i.shape.iter().for_each(|&s| out.extend_from_slice(&(s as u32).to_le_bytes()));
            d.iter().for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes()));
        }
        let ck = decode(&out, &arch).unwrap();
        assert!(ck.opt.is_none());
        assert_eq!(ck.net.tconv.weights[0], net.tconv.weights[0] as f32 as f64);
    }
}
