//! Confusion-matrix accumulation and per-class / mean IoU with a void
//! class excluded from scoring.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::labels::LabelImage;

/// Rows are ground truth, columns are prediction. Predictions of the
/// void class on non-void truth land in an extra trailing column, so
/// they count as false negatives of the true class without being false
/// positives of any scored class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    void_class: u8,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize, void_class: u8) -> Self {
        ConfusionMatrix {
            classes,
            void_class,
            counts: vec![0; classes * (classes + 1)],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn void_class(&self) -> u8 {
        self.void_class
    }

    #[inline]
    pub fn count(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * (self.classes + 1) + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds one prediction/truth pair of maps. Void-labeled truth pixels
    /// are skipped entirely.
    pub fn accumulate(&mut self, prediction: &LabelImage, truth: &LabelImage) -> Result<()> {
        if prediction.height != truth.height || prediction.width != truth.width {
            return Err(Error::ShapeMismatch(format!(
                "prediction {}x{} vs truth {}x{}",
                prediction.height, prediction.width, truth.height, truth.width
            )));
        }
        for (p, t) in prediction.data.iter().zip(&truth.data) {
            if *t == self.void_class {
                continue;
            }
            if (*t as usize) >= self.classes {
                return Err(Error::InvalidArgument(format!(
                    "truth label {t} out of range for {} classes",
                    self.classes
                )));
            }
            let col = if *p == self.void_class {
                self.classes
            } else if (*p as usize) < self.classes {
                *p as usize
            } else {
                return Err(Error::InvalidArgument(format!(
                    "prediction label {p} out of range for {} classes",
                    self.classes
                )));
            };
            self.counts[*t as usize * (self.classes + 1) + col] += 1;
        }
        Ok(())
    }

    /// Elementwise merge of a shard accumulated elsewhere.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if self.classes != other.classes || self.void_class != other.void_class {
            return Err(Error::InvalidArgument(
                "cannot merge confusion matrices with different class setups".into(),
            ));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// IoU per class; `None` marks a class absent from both prediction
    /// and truth (zero denominator), excluded from the mean.
    pub fn per_class_iou(&self) -> Vec<Option<f64>> {
        (0..self.classes)
            .map(|k| {
                let tp = self.count(k, k);
                let fn_: u64 = (0..=self.classes)
                    .filter(|j| *j != k)
                    .map(|j| self.count(k, j))
                    .sum();
                let fp: u64 = (0..self.classes)
                    .filter(|i| *i != k)
                    .map(|i| self.count(i, k))
                    .sum();
                let denom = tp + fp + fn_;
                if denom == 0 {
                    None
                } else {
                    Some(tp as f64 / denom as f64)
                }
            })
            .collect()
    }

    pub fn mean_iou(&self) -> Result<f64> {
        let ious: Vec<f64> = self.per_class_iou().into_iter().flatten().collect();
        if ious.is_empty() {
            return Err(Error::InvalidArgument(
                "no class is present in the accumulated data".into(),
            ));
        }
        Ok(ious.iter().sum::<f64>() / ious.len() as f64)
    }

    /// CSV with one row per class and a final mIoU row. Absent classes
    /// report an empty IoU field.
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("class,iou\n");
        for (k, iou) in self.per_class_iou().iter().enumerate() {
            match iou {
                Some(v) => writeln!(out, "{k},{v:.6}").unwrap(),
                None => writeln!(out, "{k},").unwrap(),
            }
        }
        match self.mean_iou() {
            Ok(m) => writeln!(out, "mIoU,{m:.6}").unwrap(),
            Err(_) => writeln!(out, "mIoU,").unwrap(),
        }
        out
    }

    /// Raw counts as CSV, including the trailing void-prediction column.
    pub fn counts_csv(&self) -> String {
        let mut out = String::new();
        for t in 0..self.classes {
            let row: Vec<String> = (0..=self.classes)
                .map(|p| self.count(t, p).to_string())
                .collect();
            writeln!(out, "{}", row.join(",")).unwrap();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(h: usize, w: usize, data: &[u8]) -> LabelImage {
        LabelImage::from_vec(h, w, data.to_vec()).unwrap()
    }

    #[test]
    fn identical_maps_are_diagonal() {
        let mut cm = ConfusionMatrix::new(3, 255);
        let m = map(2, 2, &[0, 1, 2, 1]);
        cm.accumulate(&m, &m).unwrap();
        assert_eq!(cm.count(0, 0), 1);
        assert_eq!(cm.count(1, 1), 2);
        assert_eq!(cm.count(2, 2), 1);
        assert_eq!(cm.total(), 4);
        assert_eq!(cm.mean_iou().unwrap(), 1.0);
    }

    #[test]
    fn void_truth_is_excluded() {
        let mut cm = ConfusionMatrix::new(2, 255);
        let truth = map(1, 3, &[255, 255, 255]);
        let pred = map(1, 3, &[0, 1, 0]);
        cm.accumulate(&pred, &truth).unwrap();
        assert_eq!(cm.total(), 0);
        assert!(cm.mean_iou().is_err());
    }

    #[test]
    fn hand_counted_three_by_three() {
        // truth:  0 0 1    pred:  0 1 1
        //         1 1 2           1 1 2
        //         2 2 255         0 2 0
        let truth = map(3, 3, &[0, 0, 1, 1, 1, 2, 2, 2, 255]);
        let pred = map(3, 3, &[0, 1, 1, 1, 1, 2, 0, 2, 0]);
        let mut cm = ConfusionMatrix::new(3, 255);
        cm.accumulate(&pred, &truth).unwrap();
        assert_eq!(cm.count(0, 0), 1);
        assert_eq!(cm.count(0, 1), 1);
        assert_eq!(cm.count(1, 1), 3);
        assert_eq!(cm.count(2, 2), 2);
        assert_eq!(cm.count(2, 0), 1);
        // IoU0 = 1/(1+1+1), IoU1 = 3/(3+1+0), IoU2 = 2/(2+0+1).
        let ious = cm.per_class_iou();
        assert!((ious[0].unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert!((ious[1].unwrap() - 0.75).abs() < 1e-12);
        assert!((ious[2].unwrap() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_binary_prediction_scores_zero() {
        let truth = map(1, 4, &[0, 0, 1, 1]);
        let pred = map(1, 4, &[1, 1, 0, 0]);
        let mut cm = ConfusionMatrix::new(2, 255);
        cm.accumulate(&pred, &truth).unwrap();
        let ious = cm.per_class_iou();
        assert_eq!(ious[0].unwrap(), 0.0);
        assert_eq!(ious[1].unwrap(), 0.0);
    }

    #[test]
    fn void_prediction_counts_as_false_negative() {
        let truth = map(1, 2, &[0, 0]);
        let pred = map(1, 2, &[0, 255]);
        let mut cm = ConfusionMatrix::new(2, 255);
        cm.accumulate(&pred, &truth).unwrap();
        let ious = cm.per_class_iou();
        assert!((ious[0].unwrap() - 0.5).abs() < 1e-12);
        assert!(ious[1].is_none());
    }

    #[test]
    fn sharded_accumulation_is_additive() {
        let truth = map(1, 4, &[0, 1, 1, 0]);
        let pred = map(1, 4, &[0, 1, 0, 1]);
        let mut joint = ConfusionMatrix::new(2, 255);
        joint.accumulate(&pred, &truth).unwrap();
        joint.accumulate(&pred, &truth).unwrap();

        let mut a = ConfusionMatrix::new(2, 255);
        a.accumulate(&pred, &truth).unwrap();
        let mut b = ConfusionMatrix::new(2, 255);
        b.accumulate(&pred, &truth).unwrap();
        a.merge(&b).unwrap();
        assert_eq!(a, joint);
    }

    #[test]
    fn out_of_range_rejected() {
        let truth = map(1, 1, &[5]);
        let pred = map(1, 1, &[0]);
        let mut cm = ConfusionMatrix::new(2, 255);
        assert!(cm.accumulate(&pred, &truth).is_err());
    }
}
