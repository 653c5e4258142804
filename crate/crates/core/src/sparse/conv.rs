use alloc::vec;
use alloc::vec::Vec;
// needed without std; with std linked the inherent methods shadow it
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;

use super::{build_kernel_map, strided_coords, KernelMap, SparseTensor};
use crate::{Error, Result};

/// Sparse 3D convolution with a cubic kernel.
///
/// Weights are laid out `(kernel_volume, in_channels, out_channels)` with the
/// kernel volume enumerated in [`kernel_offsets`](super::kernel_offsets) order.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub stride: i32,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// What backward needs besides the input features.
#[derive(Debug, Clone)]
pub struct ConvCache {
    pub km: KernelMap,
    /// Pairs are read `(out, in)` for transposed convolution.
    pub transposed: bool,
}

impl ConvLayer {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel_size: usize, stride: i32) -> Self {
        let kvol = kernel_size.pow(3);
        Self {
            in_channels,
            out_channels,
            kernel_size,
            stride,
            weights: vec![0.0; kvol * in_channels * out_channels],
            bias: vec![0.0; out_channels],
        }
    }

    /// He-uniform weights scaled by fan-in, zero bias.
    pub fn init<R: Rng + ?Sized>(in_channels: usize, out_channels: usize, kernel_size: usize, stride: i32, rng: &mut R) -> Self {
        let mut layer = Self::zeros(in_channels, out_channels, kernel_size, stride);
        let fan_in = (kernel_size.pow(3) * in_channels) as f64;
        let bound = (6.0 / fan_in).sqrt();
        layer.weights.iter_mut().for_each(|w| *w = rng.random_range(-bound..bound));
        layer
    }

    pub fn kernel_volume(&self) -> usize {
        self.kernel_size.pow(3)
    }

    pub fn zero_grads(&self) -> ConvGrads {
        ConvGrads { weights: vec![0.0; self.weights.len()], bias: vec![0.0; self.bias.len()] }
    }

    fn check_input(&self, t: &SparseTensor) -> Result<()> {
        if t.channels != self.in_channels {
            return Err(Error::shape(alloc::format!(
                "conv expects {} input channels, got {}",
                self.in_channels, t.channels
            )));
        }
        if t.is_empty() {
            return Err(Error::EmptyInput);
        }
        Ok(())
    }

    /// Output sites and kernel map of a (possibly strided) convolution.
    pub fn plan(&self, t: &SparseTensor) -> Result<(SparseTensor, KernelMap)> {
        let out_stride = t.stride.map(|s| s * self.stride);
        let (ob, oc) = if self.stride == 1 {
            (t.batch.clone(), t.coords.clone())
        } else {
            strided_coords(&t.batch, &t.coords, out_stride)
        };
        let km = build_kernel_map(&t.batch, &t.coords, &ob, &oc, self.kernel_size, t.stride)?;
        let n = oc.len();
        let out = SparseTensor { batch: ob, coords: oc, feats: vec![0.0; n * self.out_channels], channels: self.out_channels, stride: out_stride };
        Ok((out, km))
    }

    pub fn forward(&self, t: &SparseTensor) -> Result<(SparseTensor, ConvCache)> {
        self.check_input(t)?;
        let (out, km) = self.plan(t)?;
        let out = self.forward_mapped(t, &km, out)?;
        Ok((out, ConvCache { km, transposed: false }))
    }

    /// Convolution over a prebuilt kernel map; `out` supplies the output sites.
    pub fn forward_mapped(&self, t: &SparseTensor, km: &KernelMap, mut out: SparseTensor) -> Result<SparseTensor> {
        self.check_input(t)?;
        if km.n_in != t.len() || km.n_out != out.len() || km.offsets.len() != self.kernel_volume() {
            return Err(Error::shape("kernel map does not match tensors"));
        }
        out.channels = self.out_channels;
        out.feats = self.apply(&t.feats, km, false, out.len());
        Ok(out)
    }

    /// Transposed convolution emitting exactly on `target`'s sites, which must
    /// be at a finer stride than `t`.
    pub fn transposed_forward(&self, t: &SparseTensor, target: &SparseTensor) -> Result<(SparseTensor, ConvCache)> {
        self.check_input(t)?;
        if target.is_empty() {
            return Err(Error::shape("transposed convolution needs a non-empty target"));
        }
        // Pairs (fine, coarse) with fine = coarse + k * fine_stride.
        let km = build_kernel_map(&target.batch, &target.coords, &t.batch, &t.coords, self.kernel_size, target.stride)?;
        let n = target.len();
        let out = SparseTensor {
            batch: target.batch.clone(),
            coords: target.coords.clone(),
            feats: self.apply(&t.feats, &km, true, n),
            channels: self.out_channels,
            stride: target.stride,
        };
        Ok((out, ConvCache { km, transposed: true }))
    }

    fn apply(&self, x: &[f64], km: &KernelMap, transposed: bool, n_out: usize) -> Vec<f64> {
        let (cin, cout) = (self.in_channels, self.out_channels);
        let mut y = Vec::with_capacity(n_out * cout);
        for _ in 0..n_out {
            y.extend_from_slice(&self.bias);
        }
        for (k, pairs) in km.pairs.iter().enumerate() {
            let wk = &self.weights[k * cin * cout..(k + 1) * cin * cout];
            for &(a, b) in pairs {
                let (src, dst) = if transposed { (b, a) } else { (a, b) };
                let xs = &x[src as usize * cin..(src as usize + 1) * cin];
                let yd = &mut y[dst as usize * cout..(dst as usize + 1) * cout];
                for (ci, &xv) in xs.iter().enumerate() {
                    if xv == 0.0 {
                        continue;
                    }
                    let row = &wk[ci * cout..(ci + 1) * cout];
                    for (yv, &w) in yd.iter_mut().zip(row) {
                        *yv += xv * w;
                    }
                }
            }
        }
        y
    }

    /// Adjoint of the forward map: returns the input gradient and accumulates
    /// parameter gradients into `grads`.
    pub fn backward(&self, x: &[f64], cache: &ConvCache, grad_out: &[f64], grads: &mut ConvGrads) -> Vec<f64> {
        let (cin, cout) = (self.in_channels, self.out_channels);
        let km = &cache.km;
        let n_in = if cache.transposed { km.n_out } else { km.n_in };
        let mut gx = vec![0.0; n_in * cin];
        for row in grad_out.chunks_exact(cout) {
            for (gb, &g) in grads.bias.iter_mut().zip(row) {
                *gb += g;
            }
        }
        for (k, pairs) in km.pairs.iter().enumerate() {
            let wk = &self.weights[k * cin * cout..(k + 1) * cin * cout];
            let gwk = &mut grads.weights[k * cin * cout..(k + 1) * cin * cout];
            for &(a, b) in pairs {
                let (src, dst) = if cache.transposed { (b as usize, a as usize) } else { (a as usize, b as usize) };
                let gy = &grad_out[dst * cout..(dst + 1) * cout];
                let xs = &x[src * cin..(src + 1) * cin];
                let gxs = &mut gx[src * cin..(src + 1) * cin];
                for ci in 0..cin {
                    let row = &wk[ci * cout..(ci + 1) * cout];
                    gxs[ci] += row.iter().zip(gy).map(|(w, g)| w * g).sum::<f64>();
                    let xv = xs[ci];
                    if xv != 0.0 {
                        for (gw, &g) in gwk[ci * cout..(ci + 1) * cout].iter_mut().zip(gy) {
                            *gw += xv * g;
                        }
                    }
                }
            }
        }
        gx
    }

    /// Same layer with each kernel slice transposed, `(kvol, out, in)`.
    pub fn transposed_weights(&self) -> ConvLayer {
        let (cin, cout) = (self.in_channels, self.out_channels);
        let mut t = ConvLayer::zeros(cout, cin, self.kernel_size, self.stride);
        for k in 0..self.kernel_volume() {
            for i in 0..cin {
                for o in 0..cout {
                    t.weights[k * cin * cout + o * cin + i] = self.weights[k * cin * cout + i * cout + o];
                }
            }
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use alloc::vec;

    fn single(v: f64) -> SparseTensor {
        SparseTensor::new(vec![0], vec![[0, 0, 0]], vec![v], 1, [1; 3]).unwrap()
    }

    #[test]
    fn center_weight_scalar_product() {
        let mut layer = ConvLayer::zeros(1, 1, 3, 1);
        layer.weights[13] = 2.0;
        let x = single(3.0);
        let (y, cache) = layer.forward(&x).unwrap();
        assert_eq!(y.feats, vec![6.0]);

        let mut g = layer.zero_grads();
        let gx = layer.backward(&x.feats, &cache, &[1.0], &mut g);
        assert_eq!(gx, vec![2.0]);
        assert_eq!(g.weights[13], 3.0);
        assert_eq!(g.bias, vec![1.0]);

        let mut g = layer.zero_grads();
        let gx = layer.backward(&x.feats, &cache, &[0.0], &mut g);
        assert_eq!(gx, vec![0.0]);
        assert!(g.weights.iter().chain(&g.bias).all(|&v| v == 0.0));
    }

    #[test]
    fn pointwise_identity_copies() {
        let mut layer = ConvLayer::zeros(2, 2, 1, 1);
        layer.weights = vec![1.0, 0.0, 0.0, 1.0];
        let x = SparseTensor::new(vec![0, 0], vec![[0, 0, 0], [3, 1, 2]], vec![1.0, 2.0, 3.0, 4.0], 2, [1; 3]).unwrap();
        let (y, _) = layer.forward(&x).unwrap();
        assert_eq!(y.feats, x.feats);
        let (y, _) = layer.transposed_forward(&x, &x).unwrap();
        assert_eq!(y.feats, x.feats);
    }

    #[test]
    fn upsample_single_site_to_two_children() {
        let mut r = rng::stream(3, &[]);
        let layer = ConvLayer::init(1, 2, 3, 2, &mut r);
        let coarse = SparseTensor::new(vec![0], vec![[0, 0, 0]], vec![1.5], 1, [2; 3]).unwrap();
        let fine = SparseTensor::new(vec![0, 0], vec![[0, 0, 0], [1, 0, 0]], vec![0.0; 2], 1, [1; 3]).unwrap();
        let (y, _) = layer.transposed_forward(&coarse, &fine).unwrap();
        // child (0,0,0) uses offset 0 (index 13), child (1,0,0) offset (1,0,0) (index 22)
        for (site, k) in [(0usize, 13usize), (1, 22)] {
            for o in 0..2 {
                assert_eq!(y.feats[site * 2 + o], 1.5 * layer.weights[k * 2 + o]);
            }
        }
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let layer = ConvLayer::zeros(2, 1, 3, 1);
        assert!(matches!(layer.forward(&single(1.0)), Err(Error::Shape(_))));
        assert!(matches!(layer.transposed_forward(&single(1.0), &single(1.0)), Err(Error::Shape(_))));
    }

    #[test]
    fn strided_output_stride_and_coords() {
        let layer = ConvLayer::zeros(1, 1, 3, 2);
        let x = SparseTensor::new(vec![0, 0, 0], vec![[0, 0, 0], [1, 1, 1], [3, 0, 0]], vec![1.0; 3], 1, [1; 3]).unwrap();
        let (y, _) = layer.forward(&x).unwrap();
        assert_eq!(y.stride, [2; 3]);
        assert_eq!(y.coords, vec![[0, 0, 0], [2, 0, 0]]);
    }
}
