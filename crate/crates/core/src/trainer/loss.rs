//! Triplet margin loss and batch-hard mining.

use alloc::vec;
use alloc::vec::Vec;

use crate::cloud::planar_distance;
use crate::locnet::{descriptor_distance, Descriptor};
use crate::Result;

/// `max(d_ap - d_an + m, 0)`.
pub fn triplet_loss(d_ap: f64, d_an: f64, margin: f64) -> f64 {
    (d_ap - d_an + margin).max(0.0)
}

/// Pairwise positive / negative masks derived from ground-truth positions.
#[derive(Debug, Clone, PartialEq)]
pub struct PairLabels {
    pub positive: Vec<Vec<bool>>,
    pub negative: Vec<Vec<bool>>,
}

impl PairLabels {
    /// Positives lie within `pos_radius` (excluding the element itself),
    /// negatives strictly beyond `neg_radius`.
    pub fn from_positions(positions: &[[f64; 2]], pos_radius: f64, neg_radius: f64) -> Self {
        let n = positions.len();
        let mut positive = vec![vec![false; n]; n];
        let mut negative = vec![vec![false; n]; n];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let d = planar_distance(positions[i], positions[j]);
                positive[i][j] = d <= pos_radius;
                negative[i][j] = d > neg_radius;
            }
        }
        Self { positive, negative }
    }

    pub fn len(&self) -> usize {
        self.positive.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positive.is_empty()
    }

    pub fn has_positive_pair(&self) -> bool {
        self.positive.iter().any(|row| row.iter().any(|&p| p))
    }
}

/// Mined triplets; all have strictly positive loss.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TripletBatch {
    pub anchors: Vec<usize>,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
    pub losses: Vec<f64>,
    pub margin: f64,
    /// Anchors that had at least one positive and one negative.
    pub candidate_anchors: usize,
}

impl TripletBatch {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    /// Mean loss over the active triplets (0 when empty).
    pub fn mean_loss(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.losses.iter().sum::<f64>() / self.len() as f64
        }
    }
}

pub fn distance_matrix(descs: &[Descriptor]) -> Result<Vec<Vec<f64>>> {
    let n = descs.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = descriptor_distance(&descs[i], &descs[j])?;
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    Ok(d)
}

/// Batch-hard mining: for each anchor take the farthest positive and the
/// nearest negative (lowest index on ties) and keep the triplet if its loss
/// is positive.
pub fn mine_hard_triplets(descs: &[Descriptor], labels: &PairLabels, margin: f64) -> Result<TripletBatch> {
    let dist = distance_matrix(descs)?;
    let mut out = TripletBatch { margin, ..Default::default() };
    for a in 0..descs.len() {
        let hardest_pos = (0..descs.len())
            .filter(|&j| labels.positive[a][j])
            .fold(None, |best: Option<usize>, j| match best {
                Some(b) if dist[a][b] >= dist[a][j] => Some(b),
                _ => Some(j),
            });
        let hardest_neg = (0..descs.len())
            .filter(|&j| labels.negative[a][j])
            .fold(None, |best: Option<usize>, j| match best {
                Some(b) if dist[a][b] <= dist[a][j] => Some(b),
                _ => Some(j),
            });
        let (Some(p), Some(n)) = (hardest_pos, hardest_neg) else { continue };
        out.candidate_anchors += 1;
        let loss = triplet_loss(dist[a][p], dist[a][n], margin);
        if loss > 0.0 {
            out.anchors.push(a);
            out.positives.push(p);
            out.negatives.push(n);
            out.losses.push(loss);
        }
    }
    Ok(out)
}

/// Mean triplet loss over `batch` and its gradient with respect to every
/// descriptor.
pub fn triplet_loss_grad(descs: &[Descriptor], batch: &TripletBatch) -> Result<(f64, Vec<Vec<f64>>)> {
    let dim = descs.first().map_or(0, Descriptor::len);
    let mut grads = vec![vec![0.0; dim]; descs.len()];
    if batch.is_empty() {
        return Ok((0.0, grads));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for t in 0..batch.len() {
        let (a, p, n) = (batch.anchors[t], batch.positives[t], batch.negatives[t]);
        let d_ap = descriptor_distance(&descs[a], &descs[p])?;
        let d_an = descriptor_distance(&descs[a], &descs[n])?;
        let loss = triplet_loss(d_ap, d_an, batch.margin);
        total += loss;
        if loss <= 0.0 {
            continue;
        }
        for k in 0..dim {
            let (va, vp, vn) = (descs[a].0[k], descs[p].0[k], descs[n].0[k]);
            if d_ap > 0.0 {
                let g = scale * (va - vp) / d_ap;
                grads[a][k] += g;
                grads[p][k] -= g;
            }
            if d_an > 0.0 {
                let g = scale * (va - vn) / d_an;
                grads[a][k] -= g;
                grads[n][k] += g;
            }
        }
    }
    Ok((total * scale, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_examples() {
        assert_eq!(triplet_loss(0.5, 1.0, 0.2), 0.0);
        assert!((triplet_loss(1.0, 0.5, 0.2) - 0.7).abs() < 1e-15);
        assert_eq!(triplet_loss(0.8, 0.8, 0.0), 0.0);
    }

    #[test]
    fn far_negatives_give_empty_batch() {
        let descs = [Descriptor(vec![0.0]), Descriptor(vec![0.1]), Descriptor(vec![10.0])];
        let labels = PairLabels::from_positions(&[[0.0, 0.0], [1.0, 0.0], [100.0, 0.0]], 10.0, 50.0);
        let b = mine_hard_triplets(&descs, &labels, 0.2).unwrap();
        assert!(b.is_empty());
        assert_eq!(b.candidate_anchors, 2);
    }

    #[test]
    fn three_element_hand_placed() {
        // anchor 0 and positive 1 are far apart in descriptor space, negative 2 is close
        let descs = [Descriptor(vec![0.0]), Descriptor(vec![1.0]), Descriptor(vec![0.3])];
        let labels = PairLabels::from_positions(&[[0.0, 0.0], [5.0, 0.0], [80.0, 0.0]], 10.0, 50.0);
        let b = mine_hard_triplets(&descs, &labels, 0.2).unwrap();
        // brute force: anchor 0 -> 1 - 0.3 + 0.2 = 0.9; anchor 1 -> 1 - 0.7 + 0.2 = 0.5
        assert_eq!(b.anchors, vec![0, 1]);
        assert_eq!(b.positives, vec![1, 0]);
        assert_eq!(b.negatives, vec![2, 2]);
        assert!((b.losses[0] - 0.9).abs() < 1e-12 && (b.losses[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn identical_anchors_mine_identically() {
        let descs = [Descriptor(vec![0.0, 1.0]), Descriptor(vec![0.0, 1.0]), Descriptor(vec![0.2, 1.1])];
        let labels = PairLabels::from_positions(&[[0.0, 0.0], [0.0, 0.0], [90.0, 0.0]], 10.0, 50.0);
        let b = mine_hard_triplets(&descs, &labels, 0.5).unwrap();
        assert_eq!(b.anchors, vec![0, 1]);
        assert_eq!(b.negatives, vec![2, 2]);
        assert_eq!(b.losses[0], b.losses[1]);
    }
}
