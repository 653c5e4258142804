use alloc::vec::Vec;

use super::gem::{gem_backward, gem_forward, GemCache};
use super::{Descriptor, LocNet, LocNetGrads, MergeMode};
use crate::sparse::{relu, relu_backward, ConvCache, NormCache, SparseTensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
pub struct BlockTape {
    pub conv: ConvCache,
    pub norm: Option<NormCache>,
    /// Post-ReLU output of the block.
    pub out: SparseTensor,
}

/// Saved activations of one training forward pass, replayed in reverse by
/// [`LocNet::backward`].
#[derive(Debug, Clone, Default)]
pub struct Tape {
    input: Option<SparseTensor>,
    blocks: Vec<BlockTape>,
    tconv: Option<ConvCache>,
    lateral: Option<ConvCache>,
    merged: Option<SparseTensor>,
    gem: Option<GemCache>,
}

impl Tape {
    pub fn is_recorded(&self) -> bool {
        self.gem.is_some()
    }

    pub fn blocks(&self) -> &[BlockTape] {
        &self.blocks
    }

    /// The merged local feature map fed to GeM.
    pub fn local_features(&self) -> Option<&SparseTensor> {
        self.merged.as_ref()
    }

    /// Batch statistics of each normalization layer, for the running update.
    pub fn norm_stats(&self) -> impl Iterator<Item = &NormCache> {
        self.blocks.iter().filter_map(|b| b.norm.as_ref())
    }
}

impl LocNet {
    /// Runs the network on a batched sparse tensor and returns one descriptor
    /// per batch slot. Training mode uses batch statistics and records a tape;
    /// it does not touch running statistics (see [`LocNet::update_running_stats`]).
    pub fn forward(&self, t: &SparseTensor, mode: Mode) -> Result<(Vec<Descriptor>, Option<Tape>)> {
        if t.is_empty() {
            return Err(Error::EmptyInput);
        }
        if t.channels != self.arch.in_channels {
            return Err(Error::shape(alloc::format!(
                "network expects {} input channels, got {}",
                self.arch.in_channels, t.channels
            )));
        }
        let mut blocks: Vec<BlockTape> = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let x = blocks.last().map_or(t, |b| &b.out);
            let (mut y, conv) = block.conv.forward(x)?;
            let norm = match mode {
                Mode::Train => {
                    let (n, cache) = block.norm.forward_train(&y.feats)?;
                    y.feats = relu(&n);
                    Some(cache)
                }
                Mode::Eval => {
                    y.feats = relu(&block.norm.forward_eval(&y.feats)?);
                    None
                }
            };
            blocks.push(BlockTape { conv, norm, out: y });
        }
        let (top, tconv) = self.tconv.transposed_forward(&blocks[3].out, &blocks[2].out)?;
        let (lat, lateral) = self.lateral.forward(&blocks[2].out)?;
        debug_assert_eq!(top.coords, lat.coords);
        let merged = match self.arch.merge {
            MergeMode::Add => {
                let feats = top.feats.iter().zip(&lat.feats).map(|(a, b)| a + b).collect();
                SparseTensor { feats, ..top }
            }
            MergeMode::Concat => {
                let w = top.channels;
                let feats = top
                    .feats
                    .chunks_exact(w)
                    .zip(lat.feats.chunks_exact(w))
                    .flat_map(|(a, b)| a.iter().chain(b).copied())
                    .collect();
                SparseTensor { feats, channels: 2 * w, ..top }
            }
        };
        let (descs, gem) = gem_forward(&merged, self.p())?;
        let tape = match mode {
            Mode::Train => Some(Tape {
                input: Some(t.clone()),
                blocks,
                tconv: Some(tconv),
                lateral: Some(lateral),
                merged: Some(merged),
                gem: Some(gem),
            }),
            Mode::Eval => None,
        };
        Ok((descs, tape))
    }

    /// Eval-mode descriptors.
    pub fn descriptors(&self, t: &SparseTensor) -> Result<Vec<Descriptor>> {
        Ok(self.forward(t, Mode::Eval)?.0)
    }

    /// Folds the batch statistics recorded on `tape` into the running
    /// statistics of every normalization layer.
    pub fn update_running_stats(&mut self, tape: &Tape) {
        for (block, cache) in self.blocks.iter_mut().zip(tape.norm_stats()) {
            block.norm.update_running(cache);
        }
    }

    /// Reverse pass. `grad_desc[b]` is the loss gradient with respect to the
    /// descriptor of batch slot `b`. Returns parameter gradients and the
    /// gradient with respect to the input features.
    pub fn backward(&self, tape: &Tape, grad_desc: &[Vec<f64>]) -> Result<(LocNetGrads, Vec<f64>)> {
        let (Some(input), Some(merged), Some(gem), Some(tconv_c), Some(lat_c)) =
            (&tape.input, &tape.merged, &tape.gem, &tape.tconv, &tape.lateral)
        else {
            return Err(Error::Usage("backward called without a recorded forward pass".into()));
        };
        if grad_desc.len() != gem.counts.len() || grad_desc.iter().any(|g| g.len() != merged.channels) {
            return Err(Error::shape("descriptor gradient shape mismatch"));
        }
        let mut grads = self.zero_grads();
        let (g_merged, g_logp) = gem_backward(merged, gem, grad_desc);
        grads.log_p = g_logp;

        let (g_top, g_lat): (Vec<f64>, Vec<f64>) = match self.arch.merge {
            MergeMode::Add => (g_merged.clone(), g_merged),
            MergeMode::Concat => {
                let w = merged.channels / 2;
                let mut a = Vec::with_capacity(g_merged.len() / 2);
                let mut b = Vec::with_capacity(g_merged.len() / 2);
                for row in g_merged.chunks_exact(2 * w) {
                    a.extend_from_slice(&row[..w]);
                    b.extend_from_slice(&row[w..]);
                }
                (a, b)
            }
        };
        let blocks = &tape.blocks;
        let mut g_out: Vec<Vec<f64>> = blocks.iter().map(|b| alloc::vec![0.0; b.out.feats.len()]).collect();
        let g3 = self.tconv.backward(&blocks[3].out.feats, tconv_c, &g_top, &mut grads.tconv);
        let g2 = self.lateral.backward(&blocks[2].out.feats, lat_c, &g_lat, &mut grads.lateral);
        add_into(&mut g_out[3], &g3);
        add_into(&mut g_out[2], &g2);

        let mut g_input = Vec::new();
        for i in (0..blocks.len()).rev() {
            let bt = &blocks[i];
            let norm_cache = bt.norm.as_ref().ok_or_else(|| Error::Usage("tape recorded in eval mode".into()))?;
            let g_pre_relu = relu_backward(&bt.out.feats, &g_out[i]);
            let (gc, gn) = &mut grads.blocks[i];
            let g_conv = self.blocks[i].norm.backward(norm_cache, &g_pre_relu, gn);
            let x = if i == 0 { &input.feats } else { &blocks[i - 1].out.feats };
            let gx = self.blocks[i].conv.backward(x, &bt.conv, &g_conv, gc);
            if i == 0 {
                g_input = gx;
            } else {
                add_into(&mut g_out[i - 1], &gx);
            }
        }
        Ok((grads, g_input))
    }
}

fn add_into(acc: &mut [f64], x: &[f64]) {
    acc.iter_mut().zip(x).for_each(|(a, b)| *a += b);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::locnet::ArchConfig;
    use crate::rng;
    use alloc::vec;

    #[test]
    fn backward_without_forward_is_usage_error() {
        let net = LocNet::init(&ArchConfig::default(), &mut rng::stream(0, &[])).unwrap();
        assert!(matches!(net.backward(&Tape::default(), &[]), Err(Error::Usage(_))));
    }

    #[test]
    fn empty_input_is_error() {
        let net = LocNet::init(&ArchConfig::default(), &mut rng::stream(0, &[])).unwrap();
        assert_eq!(net.forward(&SparseTensor::empty(1), Mode::Eval).unwrap_err(), Error::EmptyInput);
        let t = SparseTensor::new(vec![0], vec![[0, 0, 0]], vec![1.0, 1.0], 2, [1; 3]).unwrap();
        assert!(matches!(net.forward(&t, Mode::Eval), Err(Error::Shape(_))));
    }
}
