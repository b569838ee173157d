//! Hard (thresholded) pixel metrics: per-image precision, recall, F1,
//! dataset aggregation, and CSV reporting.

use std::path::Path;

use crate::{Error, Result, Tensor};

/// Precision, recall, F1 for one binary prediction/ground-truth pair.
///
/// Degenerate cases follow fixed conventions so every image yields a
/// number: no predicted pixels gives precision 0; no ground-truth
/// pixels gives recall 1 when the prediction is also empty and 0
/// otherwise; F1 is 0 whenever precision + recall is 0.
pub fn hard_metrics(pred: &Tensor, gt: &Tensor) -> Result<(f64, f64, f64)> {
    if pred.shape() != gt.shape() {
        return Err(Error::Data(format!(
            "mask shape mismatch: {:?} vs {:?}",
            pred.shape(),
            gt.shape()
        )));
    }
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        if p != 0.0 && p != 1.0 {
            return Err(Error::Data(format!("non-binary prediction pixel {p}")));
        }
        if g != 0.0 && g != 1.0 {
            return Err(Error::Data(format!("non-binary ground-truth pixel {g}")));
        }
        match (p == 1.0, g == 1.0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(prf_from_counts(tp, fp, fn_))
}

fn prf_from_counts(tp: u64, fp: u64, fn_: u64) -> (f64, f64, f64) {
    let precision = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fn_ == 0 {
        if fp == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    (precision, recall, f1)
}

/// One row of a [`MetricsReport`].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageMetrics {
    pub image_id: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Per-image metrics plus their unweighted means.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<ImageMetrics>,
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub mean_f1: f64,
}

impl MetricsReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("image_id,precision,recall,f1\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{:.6},{:.6},{:.6}\n",
                r.image_id, r.precision, r.recall, r.f1
            ));
        }
        s.push_str(&format!(
            "MEAN,{:.6},{:.6},{:.6}\n",
            self.mean_precision, self.mean_recall, self.mean_f1
        ));
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Evaluates every `(id, prediction, ground truth)` triple. With
/// `pooled` the means row is replaced by metrics over the union of all
/// pixels (every pixel weighted equally rather than every image).
pub fn dataset_metrics(
    items: &[(String, Tensor, Tensor)],
    pooled: bool,
) -> Result<MetricsReport> {
    if items.is_empty() {
        return Err(Error::Data("no images to evaluate".into()));
    }
    let mut rows = Vec::with_capacity(items.len());
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for (id, pred, gt) in items {
        let (p, r, f) = hard_metrics(pred, gt)?;
        rows.push(ImageMetrics {
            image_id: id.clone(),
            precision: p,
            recall: r,
            f1: f,
        });
        if pooled {
            for (&pv, &gv) in pred.data().iter().zip(gt.data()) {
                match (pv == 1.0, gv == 1.0) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    (false, false) => {}
                }
            }
        }
    }
    let n = rows.len() as f64;
    let (mp, mr, mf) = if pooled {
        prf_from_counts(tp, fp, fn_)
    } else {
        (
            rows.iter().map(|r| r.precision).sum::<f64>() / n,
            rows.iter().map(|r| r.recall).sum::<f64>() / n,
            rows.iter().map(|r| r.f1).sum::<f64>() / n,
        )
    };
    Ok(MetricsReport {
        rows,
        mean_precision: mp,
        mean_recall: mr,
        mean_f1: mf,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mask(bits: &[u8], h: usize, w: usize) -> Tensor {
        Tensor::from_vec(bits.iter().map(|&b| b as f64).collect(), vec![h, w])
    }

    // direct per-pixel re-count with independent branch structure
    fn oracle(pred: &[u8], gt: &[u8]) -> (f64, f64, f64) {
        let tp = pred.iter().zip(gt).filter(|(p, g)| **p == 1 && **g == 1).count() as f64;
        let pred_pos = pred.iter().filter(|&&p| p == 1).count() as f64;
        let gt_pos = gt.iter().filter(|&&g| g == 1).count() as f64;
        let p = if pred_pos == 0.0 { 0.0 } else { tp / pred_pos };
        let r = if gt_pos == 0.0 {
            if pred_pos == 0.0 {
                1.0
            } else {
                0.0
            }
        } else {
            tp / gt_pos
        };
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        (p, r, f)
    }

    #[test]
    fn perfect_prediction() {
        let m = mask(&[1, 0, 0, 1], 2, 2);
        assert_eq!(hard_metrics(&m, &m).unwrap(), (1.0, 1.0, 1.0));
    }

    #[test]
    fn degenerate_conventions() {
        let empty = mask(&[0, 0, 0, 0], 2, 2);
        let some = mask(&[1, 0, 0, 0], 2, 2);
        // empty prediction vs non-empty gt: P 0, R 0, F1 0
        assert_eq!(hard_metrics(&empty, &some).unwrap(), (0.0, 0.0, 0.0));
        // both empty: R defined as 1, P 0, F1 0
        assert_eq!(hard_metrics(&empty, &empty).unwrap(), (0.0, 1.0, 0.0));
        // prediction on empty gt: all false alarms
        assert_eq!(hard_metrics(&some, &empty).unwrap(), (0.0, 0.0, 0.0));
    }

    #[test]
    fn known_hand_case() {
        // pred hits 2 of 3 gt pixels and adds 2 false alarms
        let pred = mask(&[1, 1, 0, 1, 1, 0, 0, 0, 0], 3, 3);
        let gt = mask(&[1, 0, 1, 1, 0, 0, 0, 0, 0], 3, 3);
        let (p, r, f) = hard_metrics(&pred, &gt).unwrap();
        assert!((p - 0.5).abs() < 1e-12);
        assert!((r - 2.0 / 3.0).abs() < 1e-12);
        assert!((f - 2.0 * 0.5 * (2.0 / 3.0) / (0.5 + 2.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_binary_and_shape_mismatch() {
        let soft = Tensor::from_vec(vec![0.5, 0.0, 0.0, 0.0], vec![2, 2]);
        let bin = mask(&[0, 0, 0, 0], 2, 2);
        assert!(hard_metrics(&soft, &bin).is_err());
        assert!(hard_metrics(&bin, &soft).is_err());
        let other = mask(&[0, 0], 1, 2);
        assert!(hard_metrics(&bin, &other).is_err());
    }

    #[test]
    fn randomized_against_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..1000 {
            let pred: Vec<u8> = (0..64).map(|_| rng.gen_bool(0.2) as u8).collect();
            let gt: Vec<u8> = (0..64).map(|_| rng.gen_bool(0.1) as u8).collect();
            let got = hard_metrics(&mask(&pred, 8, 8), &mask(&gt, 8, 8)).unwrap();
            let want = oracle(&pred, &gt);
            assert_eq!(got, want);
        }
    }

    #[test]
    fn dataset_means_and_csv() {
        let items = vec![
            ("a".to_string(), mask(&[1, 0, 0, 1], 2, 2), mask(&[1, 0, 0, 1], 2, 2)),
            ("b".to_string(), mask(&[0, 0, 0, 0], 2, 2), mask(&[1, 0, 0, 0], 2, 2)),
        ];
        let rep = dataset_metrics(&items, false).unwrap();
        assert_eq!(rep.rows.len(), 2);
        assert!((rep.mean_f1 - 0.5).abs() < 1e-12);
        let csv = rep.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "image_id,precision,recall,f1");
        assert!(lines[1].starts_with("a,1.000000"));
        assert!(lines[3].starts_with("MEAN,0.500000"));
    }

    #[test]
    fn pooled_aggregation_weights_pixels() {
        // image a: 1 TP; image b: 3 TP 1 FN. Pooled recall 4/5, per-image
        // mean recall (1 + 0.75)/2.
        let items = vec![
            ("a".to_string(), mask(&[1, 0, 0, 0], 2, 2), mask(&[1, 0, 0, 0], 2, 2)),
            ("b".to_string(), mask(&[1, 1, 1, 0], 2, 2), mask(&[1, 1, 1, 1], 2, 2)),
        ];
        let pooled = dataset_metrics(&items, true).unwrap();
        assert!((pooled.mean_recall - 0.8).abs() < 1e-12);
        let mean = dataset_metrics(&items, false).unwrap();
        assert!((mean.mean_recall - 0.875).abs() < 1e-12);
    }

    #[test]
    fn empty_dataset_is_error() {
        assert!(dataset_metrics(&[], false).is_err());
    }
}
