use alloc::vec;
use alloc::vec::Vec;
// needed without std; with std linked the inherent methods shadow it
#[allow(unused_imports)]
use num_traits::Float;

use super::SparseTensor;
use crate::{Error, Result};

/// Per-channel normalization over all active sites of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct NormLayer {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
    pub momentum: f64,
}

#[derive(Debug, Clone)]
pub struct NormCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub mean: Vec<f64>,
    /// Biased batch variance.
    pub var: Vec<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormGrads {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
}

impl NormLayer {
    pub fn new(channels: usize) -> Self {
        Self {
            scale: vec![1.0; channels],
            shift: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }

    pub fn zero_grads(&self) -> NormGrads {
        NormGrads { scale: vec![0.0; self.channels()], shift: vec![0.0; self.channels()] }
    }

    fn check(&self, x: &[f64]) -> Result<usize> {
        let c = self.channels();
        if x.is_empty() {
            return Err(Error::shape("normalization over zero active sites"));
        }
        if x.len() % c != 0 {
            return Err(Error::shape("feature width does not match normalization channels"));
        }
        Ok(x.len() / c)
    }

    /// Training-mode normalization with batch statistics. Running statistics
    /// are left untouched; see [`NormLayer::update_running`].
    pub fn forward_train(&self, x: &[f64]) -> Result<(Vec<f64>, NormCache)> {
        let n = self.check(x)?;
        let c = self.channels();
        let mut mean = vec![0.0; c];
        for row in x.chunks_exact(c) {
            mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; c];
        for row in x.chunks_exact(c) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|v| *v /= n as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut xhat = Vec::with_capacity(x.len());
        let mut y = Vec::with_capacity(x.len());
        for row in x.chunks_exact(c) {
            for k in 0..c {
                let h = (row[k] - mean[k]) * inv_std[k];
                xhat.push(h);
                y.push(self.scale[k] * h + self.shift[k]);
            }
        }
        Ok((y, NormCache { xhat, inv_std, mean, var, n }))
    }

    pub fn update_running(&mut self, cache: &NormCache) {
        let m = self.momentum;
        let unbias = if cache.n > 1 { cache.n as f64 / (cache.n - 1) as f64 } else { 1.0 };
        for k in 0..self.channels() {
            self.running_mean[k] = (1.0 - m) * self.running_mean[k] + m * cache.mean[k];
            self.running_var[k] = (1.0 - m) * self.running_var[k] + m * cache.var[k] * unbias;
        }
    }

    pub fn forward_eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        let c = self.channels();
        let inv: Vec<f64> = self.running_var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        Ok(x.chunks_exact(c)
            .flat_map(|row| (0..c).map(|k| self.scale[k] * (row[k] - self.running_mean[k]) * inv[k] + self.shift[k]).collect::<Vec<_>>())
            .collect())
    }

    /// Backward of training-mode normalization.
    pub fn backward(&self, cache: &NormCache, grad_out: &[f64], grads: &mut NormGrads) -> Vec<f64> {
        let c = self.channels();
        let n = cache.n as f64;
        let mut sum_g = vec![0.0; c];
        let mut sum_gx = vec![0.0; c];
        for (gy, xh) in grad_out.chunks_exact(c).zip(cache.xhat.chunks_exact(c)) {
            for k in 0..c {
                sum_g[k] += gy[k];
                sum_gx[k] += gy[k] * xh[k];
            }
        }
        for k in 0..c {
            grads.shift[k] += sum_g[k];
            grads.scale[k] += sum_gx[k];
        }
        let mut gx = Vec::with_capacity(grad_out.len());
        for (gy, xh) in grad_out.chunks_exact(c).zip(cache.xhat.chunks_exact(c)) {
            for k in 0..c {
                let coef = self.scale[k] * cache.inv_std[k] / n;
                gx.push(coef * (n * gy[k] - sum_g[k] - xh[k] * sum_gx[k]));
            }
        }
        gx
    }

    /// Normalize then ReLU. In training mode the running statistics are
    /// updated with the batch statistics.
    pub fn norm_relu_forward(&mut self, t: &SparseTensor, training: bool) -> Result<SparseTensor> {
        if t.channels != self.channels() {
            return Err(Error::shape("normalization channel mismatch"));
        }
        let y = if training {
            let (y, cache) = self.forward_train(&t.feats)?;
            self.update_running(&cache);
            y
        } else {
            self.forward_eval(&t.feats)?
        };
        Ok(SparseTensor { feats: relu(&y), ..t.clone() })
    }
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

/// Gradient through ReLU given its output `y`.
pub fn relu_backward(y: &[f64], grad_out: &[f64]) -> Vec<f64> {
    y.iter().zip(grad_out).map(|(&y, &g)| if y > 0.0 { g } else { 0.0 }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column(v: &[f64]) -> SparseTensor {
        let coords = (0..v.len() as i32).map(|i| [i, 0, 0]).collect();
        SparseTensor::new(vec![0; v.len()], coords, v.to_vec(), 1, [1; 3]).unwrap()
    }

    #[test]
    fn two_sites_train_mode() {
        let mut layer = NormLayer::new(1);
        let y = layer.norm_relu_forward(&column(&[-1.0, 1.0]), true).unwrap();
        assert_eq!(y.feats[0], 0.0);
        assert!((y.feats[1] - 1.0).abs() < 1e-5);
        // running stats moved towards the batch statistics (mean 0, unbiased var 2)
        assert_eq!(layer.running_mean, vec![0.0]);
        assert!((layer.running_var[0] - 1.1).abs() < 1e-12);
    }

    #[test]
    fn eval_mode_identity_normalization_is_relu() {
        let mut layer = NormLayer::new(1);
        layer.eps = 0.0;
        let y = layer.norm_relu_forward(&column(&[-2.0, 0.5, 3.0]), false).unwrap();
        assert_eq!(y.feats, vec![0.0, 0.5, 3.0]);
    }

    #[test]
    fn all_negative_is_zero() {
        let mut layer = NormLayer::new(1);
        let y = layer.norm_relu_forward(&column(&[-2.0, -0.5, -3.0]), false).unwrap();
        assert!(y.feats.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_sites_is_shape_error() {
        let mut layer = NormLayer::new(1);
        assert!(matches!(layer.norm_relu_forward(&SparseTensor::empty(1), true), Err(Error::Shape(_))));
    }
}
