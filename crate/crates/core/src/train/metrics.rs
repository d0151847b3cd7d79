//! Segmentation metrics, computed per sample and averaged.
//!
//! IoU and Dice binarize at 0.5. The F-measure weights precision by
//! `β² = 0.3` and binarizes at the adaptive threshold `min(2·mean(p), 1)`.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const F_BETA2: f64 = 0.3;

/// Human-readable statement of the F-measure convention.
pub const F_MEASURE_CONVENTION: &str = "f_measure: beta^2=0.3 at adaptive threshold min(2*mean(p),1), averaged per image";

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub miou: f64,
    pub mdice: f64,
    pub mae: f64,
    pub f_measure: f64,
}

/// Metrics of one probability map against one binary mask.
pub fn sample_metrics(p: &[f64], y: &[f64]) -> Metrics {
    let n = p.len() as f64;
    let (mut tp, mut fp, mut fnn, mut abs) = (0.0, 0.0, 0.0, 0.0);
    for (&p, &y) in p.iter().zip(y) {
        let pos = p >= 0.5;
        let t = y > 0.5;
        tp += (pos && t) as u8 as f64;
        fp += (pos && !t) as u8 as f64;
        fnn += (!pos && t) as u8 as f64;
        abs += (p - y).abs();
    }
    let union = tp + fp + fnn;
    // two empty masks agree perfectly
    let (iou, dice) = if union == 0.0 { (1.0, 1.0) } else { (tp / union, 2.0 * tp / (2.0 * tp + fp + fnn)) };

    let thr = (2.0 * p.iter().sum::<f64>() / n).min(1.0);
    let (mut tp, mut fp, mut fnn) = (0.0, 0.0, 0.0);
    for (&p, &y) in p.iter().zip(y) {
        let pos = p > 0.0 && p >= thr;
        let t = y > 0.5;
        tp += (pos && t) as u8 as f64;
        fp += (pos && !t) as u8 as f64;
        fnn += (!pos && t) as u8 as f64;
    }
    let f = if tp + fp + fnn == 0.0 {
        1.0
    } else if tp == 0.0 {
        0.0
    } else {
        let (prec, rec) = (tp / (tp + fp), tp / (tp + fnn));
        (1.0 + F_BETA2) * prec * rec / (F_BETA2 * prec + rec)
    };
    Metrics {
        miou: iou,
        mdice: dice,
        mae: abs / n,
        f_measure: f,
    }
}

/// Running per-sample average.
#[derive(Clone, Debug, Default)]
pub struct MetricAccumulator {
    sum: Metrics,
    count: usize,
}

impl MetricAccumulator {
    /// `probs` and `masks` are `[B,1,H,W]`.
    pub fn add<T: Scalar>(&mut self, probs: &Tensor<T>, masks: &Tensor<T>) -> Result<()> {
        if probs.shape() != masks.shape() || probs.ndim() == 0 {
            return Err(shape_err("metrics", format!("probs {:?} vs masks {:?}", probs.shape(), masks.shape())));
        }
        let b = probs.shape()[0];
        let per = probs.len() / b.max(1);
        let (p, y) = (probs.to_f64_vec(), masks.to_f64_vec());
        for i in 0..b {
            let m = sample_metrics(&p[i * per..(i + 1) * per], &y[i * per..(i + 1) * per]);
            self.sum.miou += m.miou;
            self.sum.mdice += m.mdice;
            self.sum.mae += m.mae;
            self.sum.f_measure += m.f_measure;
            self.count += 1;
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> Metrics {
        let n = self.count.max(1) as f64;
        Metrics {
            miou: self.sum.miou / n,
            mdice: self.sum.mdice / n,
            mae: self.sum.mae / n,
            f_measure: self.sum.f_measure / n,
        }
    }
}

pub fn metrics<T: Scalar>(probs: &Tensor<T>, masks: &Tensor<T>) -> Result<Metrics> {
    let mut acc = MetricAccumulator::default();
    acc.add(probs, masks)?;
    Ok(acc.mean())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn grid(cells: &[(usize, usize)]) -> Vec<f64> {
        let mut v = vec![0.0; 16];
        for &(r, c) in cells {
            v[r * 4 + c] = 1.0;
        }
        v
    }

    #[test]
    fn exact_prediction_is_perfect() {
        let y = grid(&[(0, 0), (1, 1), (2, 1), (3, 3)]);
        let m = sample_metrics(&y, &y);
        assert_eq!(m, Metrics { miou: 1.0, mdice: 1.0, mae: 0.0, f_measure: 1.0 });
        let big: Vec<f64> = (0..16).map(|i| (i < 12) as u8 as f64).collect();
        assert_eq!(sample_metrics(&big, &big).f_measure, 1.0);
    }

    #[test]
    fn inverted_prediction_is_worst() {
        let y = grid(&[(0, 0), (1, 2)]);
        let p: Vec<f64> = y.iter().map(|v| 1.0 - v).collect();
        let m = sample_metrics(&p, &y);
        assert_eq!((m.miou, m.mae), (0.0, 1.0));
    }

    #[test]
    fn half_overlapping_squares() {
        // 2x2 squares shifted by one column share two of six covered cells
        let a = grid(&[(1, 0), (1, 1), (2, 0), (2, 1)]);
        let b = grid(&[(1, 1), (1, 2), (2, 1), (2, 2)]);
        let inter = a.iter().zip(&b).filter(|(x, y)| **x == 1.0 && **y == 1.0).count() as f64;
        let union = a.iter().zip(&b).filter(|(x, y)| **x == 1.0 || **y == 1.0).count() as f64;
        let m = sample_metrics(&a, &b);
        assert!((m.miou - inter / union).abs() < 1e-15 && (m.miou - 1.0 / 3.0).abs() < 1e-15);
        assert!((m.mdice - 0.5).abs() < 1e-15);
    }

    #[test]
    fn batch_average_is_per_sample() {
        let y = Tensor::<f32>::from_f64(&[2, 1, 2, 2], &[1., 0., 0., 0., 1., 1., 0., 0.]).unwrap();
        let p = Tensor::<f32>::from_f64(&[2, 1, 2, 2], &[1., 0., 0., 0., 0., 0., 1., 1.]).unwrap();
        let m = metrics(&p, &y).unwrap();
        assert!((m.miou - 0.5).abs() < 1e-12);
        assert!(metrics(&p, &Tensor::zeros(&[2, 1, 2, 3])).is_err());
    }

    #[test]
    fn iou_never_exceeds_dice_on_random_pairs() {
        let mut r = Rng::new(8);
        for _ in 0..1000 {
            let q = r.uniform();
            let p: Vec<f64> = (0..64).map(|_| (r.uniform() < q) as u8 as f64).collect();
            let y: Vec<f64> = (0..64).map(|_| (r.uniform() < 0.3) as u8 as f64).collect();
            let m = sample_metrics(&p, &y);
            assert!(m.miou <= m.mdice + 1e-15);
            assert!((m.miou - m.mdice / (2.0 - m.mdice)).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn metrics_are_bounded(p in proptest::collection::vec(0.0f64..=1.0, 25), bits in proptest::collection::vec(any::<bool>(), 25)) {
            let y: Vec<f64> = bits.iter().map(|&b| b as u8 as f64).collect();
            let m = sample_metrics(&p, &y);
            for v in [m.miou, m.mdice, m.mae, m.f_measure] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            prop_assert!(m.miou <= m.mdice + 1e-15);
        }
    }
}
