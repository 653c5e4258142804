//! Single-threaded inference timing.

use std::time::Instant;

use placerec_core::quantizer::quantize;
use placerec_core::{rng, DedupPolicy, LocNet, PointCloud, QuantConfig, Result};

pub const STAGES: [&str; 3] = ["quantize", "forward", "total"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub points: usize,
    pub quantize_ms: f64,
    pub forward_ms: f64,
    pub total_ms: f64,
}

impl Sample {
    fn stage(&self, i: usize) -> f64 {
        [self.quantize_ms, self.forward_ms, self.total_ms][i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageStats {
    pub mean_ms: f64,
    pub std_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    /// One sample per input cloud, in input order.
    pub samples: Vec<Sample>,
}

impl BenchReport {
    /// Mean and population standard deviation per stage, in [`STAGES`] order.
    pub fn stages(&self) -> Vec<(&'static str, StageStats)> {
        let n = self.samples.len().max(1) as f64;
        STAGES
            .iter()
            .enumerate()
            .map(|(i, &name)| {
                let mean = self.samples.iter().map(|s| s.stage(i)).sum::<f64>() / n;
                let var = self.samples.iter().map(|s| (s.stage(i) - mean).powi(2)).sum::<f64>() / n;
                (name, StageStats { mean_ms: mean, std_ms: var.sqrt() })
            })
            .collect()
    }

    pub fn stage(&self, name: &str) -> Option<StageStats> {
        self.stages().into_iter().find(|s| s.0 == name).map(|s| s.1)
    }
}

/// Times quantization (average deduplication) and the eval-mode forward
/// pass for each cloud. Use at least ten clouds for stable statistics.
pub fn bench_inference(clouds: &[PointCloud], net: &LocNet, quant: &QuantConfig) -> Result<BenchReport> {
    let quant = quant.with_dedup(DedupPolicy::Average);
    let mut samples = Vec::with_capacity(clouds.len());
    for c in clouds {
        // average deduplication draws nothing; the stream only satisfies the signature
        let mut r = rng::stream(0, &[]);
        let t0 = Instant::now();
        let t = quantize(c, &quant, 0, &mut r)?;
        let t1 = Instant::now();
        std::hint::black_box(net.descriptors(&t)?);
        let t2 = Instant::now();
        let ms = |a: Instant, b: Instant| (b - a).as_secs_f64() * 1e3;
        samples.push(Sample { points: c.len(), quantize_ms: ms(t0, t1), forward_ms: ms(t1, t2), total_ms: ms(t0, t2) });
    }
    Ok(BenchReport { samples })
}
