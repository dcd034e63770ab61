//! Segmentation evaluation: confusion matrix, per-pixel accuracy,
//! per-class IoU and mean IoU.
//!
//! Pixels whose ground truth carries the ignore id contribute to nothing.
//! All metrics derive from the confusion matrix, which merges
//! associatively, so per-image matrices can be tallied in parallel and
//! summed.

use thiserror::Error;

use crate::dataset::{LabelMap, IGNORE_ID};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("truth and prediction geometries differ")]
    GeometryMismatch,
    #[error("class id {id} is out of range for {num_classes} classes")]
    BadClassId { id: u8, num_classes: u8 },
    #[error("matrices with {left} and {right} classes cannot merge")]
    ClassCountMismatch { left: u8, right: u8 },
    #[error("no labeled pixels were evaluated")]
    EmptyEvaluation,
}

/// How classes absent from both truth and prediction enter the mean IoU.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbsentClassPolicy {
    /// An absent class scores IoU 0 and still enters the mean. With
    /// `IoU = TP / max(1, TP + FP + FN)` an absent class has an empty
    /// union, so the guarded denominator yields 0/1 = 0. Penalizes
    /// reports on data where some classes never occur.
    AbsentAsZero,
    /// Average only over classes present in truth or prediction.
    ExcludeAbsent,
}

/// Class-by-class pixel tally; `counts[truth][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: u8,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: u8) -> Self {
        assert!(num_classes > 0, "need at least one class");
        ConfusionMatrix {
            num_classes,
            counts: vec![0; num_classes as usize * num_classes as usize],
        }
    }

    pub fn num_classes(&self) -> u8 {
        self.num_classes
    }

    pub fn count(&self, truth: u8, predicted: u8) -> u64 {
        self.counts[truth as usize * self.num_classes as usize + predicted as usize]
    }

    /// Total evaluated (non-ignored) pixels.
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Tallies one truth/prediction pair. Ignore pixels in `truth` are
    /// skipped; predictions must always be valid class ids.
    pub fn accumulate(&mut self, truth: &LabelMap, pred: &LabelMap) -> Result<(), MetricsError> {
        if truth.geometry() != pred.geometry() {
            return Err(MetricsError::GeometryMismatch);
        }
        let c = self.num_classes;
        for (&t, &p) in truth.data().iter().zip(pred.data()) {
            if t == IGNORE_ID {
                continue;
            }
            if t >= c {
                return Err(MetricsError::BadClassId { id: t, num_classes: c });
            }
            if p >= c {
                return Err(MetricsError::BadClassId { id: p, num_classes: c });
            }
            self.counts[t as usize * c as usize + p as usize] += 1;
        }
        Ok(())
    }

    /// Adds another matrix's counts; matrices over disjoint pixel sets
    /// merge into the matrix of their union.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<(), MetricsError> {
        if self.num_classes != other.num_classes {
            return Err(MetricsError::ClassCountMismatch {
                left: self.num_classes,
                right: other.num_classes,
            });
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// Fraction of evaluated pixels predicted correctly.
    pub fn accuracy(&self) -> Result<f64, MetricsError> {
        let total = self.total();
        if total == 0 {
            return Err(MetricsError::EmptyEvaluation);
        }
        let trace: u64 = (0..self.num_classes).map(|c| self.count(c, c)).sum();
        Ok(trace as f64 / total as f64)
    }

    /// Per-class IoU (`TP / max(1, TP + FP + FN)`) and its mean under the
    /// chosen absent-class policy.
    pub fn iou(&self, policy: AbsentClassPolicy) -> Result<(Vec<f64>, f64), MetricsError> {
        if self.total() == 0 {
            return Err(MetricsError::EmptyEvaluation);
        }
        let c = self.num_classes as usize;
        let mut per_class = Vec::with_capacity(c);
        let mut mean_sum = 0.0;
        let mut mean_count = 0u32;
        for k in 0..c {
            let tp = self.counts[k * c + k];
            let truth_total: u64 = (0..c).map(|p| self.counts[k * c + p]).sum();
            let pred_total: u64 = (0..c).map(|t| self.counts[t * c + k]).sum();
            let union = truth_total + pred_total - tp;
            let iou = tp as f64 / union.max(1) as f64;
            per_class.push(iou);
            match policy {
                AbsentClassPolicy::AbsentAsZero => {
                    mean_sum += iou;
                    mean_count += 1;
                }
                AbsentClassPolicy::ExcludeAbsent => {
                    if union > 0 {
                        mean_sum += iou;
                        mean_count += 1;
                    }
                }
            }
        }
        Ok((per_class, mean_sum / mean_count as f64))
    }

    /// Formats all metrics as machine-readable `key=value` lines.
    /// `class_names`, when given, must have one entry per class.
    pub fn report(&self, class_names: Option<&[&str]>) -> Result<String, MetricsError> {
        let accuracy = self.accuracy()?;
        let (per_class, miou_zero) = self.iou(AbsentClassPolicy::AbsentAsZero)?;
        let (_, miou_present) = self.iou(AbsentClassPolicy::ExcludeAbsent)?;
        let mut out = String::new();
        out.push_str(&format!("pixels={}\n", self.total()));
        out.push_str(&format!("accuracy={accuracy:.6}\n"));
        for (i, iou) in per_class.iter().enumerate() {
            match class_names {
                Some(names) => out.push_str(&format!("iou_{}={iou:.6}\n", names[i])),
                None => out.push_str(&format!("iou_{i}={iou:.6}\n")),
            }
        }
        out.push_str(&format!("miou_absent_as_zero={miou_zero:.6}\n"));
        out.push_str(&format!("miou_exclude_absent={miou_present:.6}\n"));
        Ok(out)
    }
}
