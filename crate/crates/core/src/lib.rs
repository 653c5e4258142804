//! Sparse-voxel LiDAR place recognition.
//!
//! The crate is `no_std` (it needs `alloc`) and contains the whole
//! algorithmic pipeline: cloud containers and spatial splits, spherical and
//! Cartesian quantization with intensity features, a hash-based sparse 3D
//! convolution engine with hand-written gradients, the FPN descriptor network
//! with a GeM head, triplet training with batch-hard mining and Adam, and
//! AR@X retrieval metrics. File formats, timing and the CLI live in the
//! `placerec` crate.
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod cloud;
pub mod error;
pub mod locnet;
pub mod quantizer;
pub mod retrieval;
pub mod rng;
pub mod sparse;
pub mod synth;
pub mod trainer;

pub use cloud::{PointCloud, PoseRecord, SplitSpec, Square};
pub use error::{Error, Result};
pub use locnet::{ArchConfig, Descriptor, LocNet, MergeMode};
pub use quantizer::{DedupPolicy, QuantConfig, QuantMode};
pub use sparse::SparseTensor;
