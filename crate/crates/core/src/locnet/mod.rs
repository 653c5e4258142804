//! The descriptor network: a four-block sparse convolutional encoder, a
//! transposed-convolution top-down path merged with a 1x1 lateral
//! connection, and a GeM pooling head.

mod gem;
mod net;

pub use gem::{gem_backward, gem_forward, gem_pool, GemCache, GEM_FLOOR};
pub use net::{BlockTape, Mode, Tape};

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
// needed without std; with std linked the inherent methods shadow it
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::sparse::{ConvGrads, ConvLayer, NormGrads, NormLayer};
use crate::{Error, Result};

/// How the top-down and lateral feature maps are merged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeMode {
    /// Both branches emit `fpn_width` channels and are summed.
    Add,
    /// Each branch emits `fpn_width / 2` channels, concatenated.
    Concat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    pub in_channels: usize,
    /// Output channels of Conv0..Conv3.
    pub block_channels: [usize; 4],
    pub block_strides: [i32; 4],
    pub kernel_size: usize,
    pub fpn_width: usize,
    pub descriptor_dim: usize,
    pub merge: MergeMode,
    pub gem_p_init: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            block_channels: [32, 32, 64, 64],
            block_strides: [1, 2, 2, 2],
            kernel_size: 3,
            fpn_width: 256,
            descriptor_dim: 256,
            merge: MergeMode::Add,
            gem_p_init: 3.0,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.block_channels.contains(&0) || self.fpn_width == 0 {
            return Err(Error::config("all channel counts must be >= 1"));
        }
        if self.descriptor_dim != self.fpn_width {
            return Err(Error::config("descriptor_dim must equal fpn_width"));
        }
        if self.merge == MergeMode::Concat && self.fpn_width % 2 != 0 {
            return Err(Error::config("concat merge needs an even fpn_width"));
        }
        if self.block_strides.iter().any(|s| !matches!(s, 1 | 2)) {
            return Err(Error::config("block strides must be 1 or 2"));
        }
        if self.block_strides[3] != 2 {
            return Err(Error::config("Conv3 must downsample for the transposed convolution"));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::config("kernel size must be odd"));
        }
        if !(self.gem_p_init > 0.0) {
            return Err(Error::config("GeM p must be positive"));
        }
        Ok(())
    }

    fn branch_width(&self) -> usize {
        match self.merge {
            MergeMode::Add => self.fpn_width,
            MergeMode::Concat => self.fpn_width / 2,
        }
    }
}

/// Global place descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Descriptor(pub Vec<f64>);

impl Descriptor {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn distance(&self, other: &Descriptor) -> Result<f64> {
        descriptor_distance(self, other)
    }
}

/// Euclidean distance between descriptors.
pub fn descriptor_distance(a: &Descriptor, b: &Descriptor) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("descriptor lengths {} and {}", a.len(), b.len())));
    }
    Ok(a.0.iter().zip(&b.0).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub conv: ConvLayer,
    pub norm: NormLayer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocNet {
    pub arch: ArchConfig,
    pub blocks: Vec<Block>,
    pub tconv: ConvLayer,
    pub lateral: ConvLayer,
    /// GeM exponent stored as `ln p`.
    pub log_p: f64,
}

/// Gradients mirroring [`LocNet`]'s trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LocNetGrads {
    pub blocks: Vec<(ConvGrads, NormGrads)>,
    pub tconv: ConvGrads,
    pub lateral: ConvGrads,
    pub log_p: f64,
}

/// Name and shape of one parameter tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

impl LocNet {
    pub fn init<R: Rng + ?Sized>(arch: &ArchConfig, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let mut blocks = Vec::with_capacity(4);
        let mut cin = arch.in_channels;
        for (&c, &s) in arch.block_channels.iter().zip(&arch.block_strides) {
            blocks.push(Block { conv: ConvLayer::init(cin, c, arch.kernel_size, s, rng), norm: NormLayer::new(c) });
            cin = c;
        }
        let w = arch.branch_width();
        let tconv = ConvLayer::init(arch.block_channels[3], w, arch.kernel_size, 2, rng);
        let lateral = ConvLayer::init(arch.block_channels[2], w, 1, 1, rng);
        Ok(Self { arch: arch.clone(), blocks, tconv, lateral, log_p: arch.gem_p_init.ln() })
    }

    pub fn p(&self) -> f64 {
        self.log_p.exp()
    }

    /// Parameter names and shapes in canonical order.
    pub fn param_info(&self) -> Vec<ParamInfo> {
        let mut out = Vec::new();
        let conv_info = |out: &mut Vec<ParamInfo>, name: &str, l: &ConvLayer| {
            out.push(ParamInfo { name: format!("{name}.weight"), shape: alloc::vec![l.kernel_volume(), l.in_channels, l.out_channels] });
            out.push(ParamInfo { name: format!("{name}.bias"), shape: alloc::vec![l.out_channels] });
        };
        for (i, b) in self.blocks.iter().enumerate() {
            conv_info(&mut out, &format!("conv{i}"), &b.conv);
            out.push(ParamInfo { name: format!("conv{i}.norm.scale"), shape: alloc::vec![b.norm.channels()] });
            out.push(ParamInfo { name: format!("conv{i}.norm.shift"), shape: alloc::vec![b.norm.channels()] });
        }
        conv_info(&mut out, "tconv3", &self.tconv);
        conv_info(&mut out, "lateral", &self.lateral);
        out.push(ParamInfo { name: "gem.log_p".into(), shape: alloc::vec![1] });
        out
    }

    pub fn params(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for b in &self.blocks {
            out.extend([&b.conv.weights[..], &b.conv.bias, &b.norm.scale, &b.norm.shift]);
        }
        out.extend([&self.tconv.weights[..], &self.tconv.bias, &self.lateral.weights, &self.lateral.bias]);
        out.push(core::slice::from_ref(&self.log_p));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for b in &mut self.blocks {
            out.push(&mut b.conv.weights);
            out.push(&mut b.conv.bias);
            out.push(&mut b.norm.scale);
            out.push(&mut b.norm.shift);
        }
        out.push(&mut self.tconv.weights);
        out.push(&mut self.tconv.bias);
        out.push(&mut self.lateral.weights);
        out.push(&mut self.lateral.bias);
        out.push(core::slice::from_mut(&mut self.log_p));
        out
    }

    /// Non-trainable running statistics, in canonical order.
    pub fn buffer_info(&self) -> Vec<ParamInfo> {
        self.blocks
            .iter()
            .enumerate()
            .flat_map(|(i, b)| {
                let c = b.norm.channels();
                [
                    ParamInfo { name: format!("conv{i}.norm.running_mean"), shape: alloc::vec![c] },
                    ParamInfo { name: format!("conv{i}.norm.running_var"), shape: alloc::vec![c] },
                ]
            })
            .collect()
    }

    pub fn buffers(&self) -> Vec<&[f64]> {
        self.blocks.iter().flat_map(|b| [&b.norm.running_mean[..], &b.norm.running_var]).collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for b in &mut self.blocks {
            out.push(&mut b.norm.running_mean);
            out.push(&mut b.norm.running_var);
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grads(&self) -> LocNetGrads {
        LocNetGrads {
            blocks: self.blocks.iter().map(|b| (b.conv.zero_grads(), b.norm.zero_grads())).collect(),
            tconv: self.tconv.zero_grads(),
            lateral: self.lateral.zero_grads(),
            log_p: 0.0,
        }
    }
}

impl LocNetGrads {
    /// Slices in the same order as [`LocNet::params`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for (c, n) in &self.blocks {
            out.extend([&c.weights[..], &c.bias, &n.scale, &n.shift]);
        }
        out.extend([&self.tconv.weights[..], &self.tconv.bias, &self.lateral.weights, &self.lateral.bias]);
        out.push(core::slice::from_ref(&self.log_p));
        out
    }
}
