//! Confusion counting and intersection-over-union.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::LabelMask;

/// `counts[gt·C + pred]` pixel tallies.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Confusion {
    classes: usize,
    counts: Vec<u64>,
}

impl Confusion {
    pub fn new(classes: usize) -> Self {
        Confusion {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn count(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    pub fn add(&mut self, pred: &LabelMask, gt: &LabelMask) -> Result<()> {
        if pred.dims() != gt.dims() {
            return Err(Error::contract(
                "miou",
                format!("prediction {:?} and ground truth {:?} differ", pred.dims(), gt.dims()),
            ));
        }
        for (&p, &t) in pred.labels().iter().zip(gt.labels()) {
            let (p, t) = (p as usize, t as usize);
            if p >= self.classes || t >= self.classes {
                return Err(Error::contract(
                    "miou",
                    format!("label {} is not below {}", p.max(t), self.classes),
                ));
            }
            self.counts[t * self.classes + p] += 1;
        }
        Ok(())
    }

    /// `None` for classes absent from both prediction and ground truth.
    pub fn per_class_iou(&self) -> Vec<Option<f64>> {
        (0..self.classes)
            .map(|c| {
                let tp = self.count(c, c);
                let gt: u64 = (0..self.classes).map(|p| self.count(c, p)).sum();
                let pred: u64 = (0..self.classes).map(|t| self.count(t, c)).sum();
                let union = gt + pred - tp;
                (union > 0).then(|| tp as f64 / union as f64)
            })
            .collect()
    }

    /// Mean over the classes that occur; 0 for an empty tally.
    pub fn mean_iou(&self) -> f64 {
        let present: Vec<f64> = self.per_class_iou().into_iter().flatten().collect();
        if present.is_empty() {
            return 0.0;
        }
        present.iter().sum::<f64>() / present.len() as f64
    }

    pub fn pixel_accuracy(&self) -> f64 {
        let total: u64 = self.counts.iter().sum();
        if total == 0 {
            return 0.0;
        }
        let correct: u64 = (0..self.classes).map(|c| self.count(c, c)).sum();
        correct as f64 / total as f64
    }
}

/// Per-class IoU and their mean, as fractions.
#[derive(Clone, Debug, PartialEq)]
pub struct IouScores {
    pub per_class: Vec<Option<f64>>,
    pub mean: f64,
}

pub fn miou(pred: &LabelMask, gt: &LabelMask, classes: usize) -> Result<IouScores> {
    let mut c = Confusion::new(classes);
    c.add(pred, gt)?;
    Ok(IouScores {
        per_class: c.per_class_iou(),
        mean: c.mean_iou(),
    })
}

/// Scores of one evaluation pass. IoU values are fractions; `miou` is a
/// percentage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
    pub pixel_accuracy: f64,
    /// Mean training loss per epoch, when the report comes from a run.
    #[serde(default)]
    pub loss_curve: Vec<f64>,
}

impl EvalReport {
    /// Dataset-level scores: pixels of every image are pooled before dividing.
    pub fn from_confusion(c: &Confusion) -> Self {
        EvalReport {
            per_class_iou: c.per_class_iou(),
            miou: 100.0 * c.mean_iou(),
            pixel_accuracy: c.pixel_accuracy(),
            loss_curve: Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(labels: &[u8]) -> LabelMask {
        LabelMask::new(2, 2, labels.to_vec()).unwrap()
    }

    #[test]
    fn identical_masks_score_one() {
        let m = mask(&[0, 2, 2, 0]);
        let s = miou(&m, &m, 4).unwrap();
        assert_eq!(s.mean, 1.0);
        assert_eq!(s.per_class, vec![Some(1.0), None, Some(1.0), None]);
    }

    #[test]
    fn disjoint_binary_masks_score_zero() {
        let s = miou(&mask(&[1, 1, 0, 0]), &mask(&[0, 0, 1, 1]), 2).unwrap();
        assert_eq!(s.mean, 0.0);
        assert_eq!(s.per_class, vec![Some(0.0), Some(0.0)]);
    }

    #[test]
    fn hand_counted_case() {
        // class 0: tp 1, union 2; class 1: tp 2, union 3
        let s = miou(&mask(&[0, 1, 1, 1]), &mask(&[0, 0, 1, 1]), 2).unwrap();
        assert_eq!(s.per_class, vec![Some(0.5), Some(2.0 / 3.0)]);
        assert_eq!(s.mean, (0.5 + 2.0 / 3.0) / 2.0);
    }

    #[test]
    fn symmetric_in_arguments() {
        let (a, b) = (mask(&[0, 1, 2, 2]), mask(&[2, 1, 0, 2]));
        assert_eq!(miou(&a, &b, 3).unwrap(), miou(&b, &a, 3).unwrap());
    }

    #[test]
    fn rejects_mismatch() {
        let small = LabelMask::new(1, 2, vec![0, 0]).unwrap();
        assert!(miou(&small, &mask(&[0; 4]), 2).is_err());
        assert!(miou(&mask(&[0, 0, 0, 5]), &mask(&[0; 4]), 2).is_err());
    }

    #[test]
    fn pixel_accuracy_counts_matches() {
        let mut c = Confusion::new(2);
        c.add(&mask(&[0, 1, 1, 1]), &mask(&[0, 0, 1, 1])).unwrap();
        assert_eq!(c.pixel_accuracy(), 0.75);
        assert_eq!(EvalReport::from_confusion(&c).miou, 100.0 * c.mean_iou());
    }
}
