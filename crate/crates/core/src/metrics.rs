//! Confusion matrices and the IoU / accuracy family of segmentation metrics.
//!
//! Everything here works on fractions. Percent scaling happens only when a
//! report is printed.

use std::collections::BTreeMap;

use image::GrayImage;
use serde::{Deserialize, Serialize};

use crate::datamodel::{ClassId, ClassSet};
use crate::error::{Error, Result};
use crate::irb;

/// Pixel counts indexed `[ground truth][prediction]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    class_set: ClassSet,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(class_set: &ClassSet) -> Self {
        let k = class_set.len();
        Self {
            class_set: class_set.clone(),
            counts: vec![0; k * k],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.class_set.len()
    }

    pub fn class_set(&self) -> &ClassSet {
        &self.class_set
    }

    pub fn get(&self, gt: ClassId, pred: ClassId) -> u64 {
        self.counts[usize::from(gt) * self.num_classes() + usize::from(pred)]
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts
            .chunks(self.num_classes())
            .map(<[u64]>::to_vec)
            .collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn row_sum(&self, k: usize) -> u64 {
        let n = self.num_classes();
        self.counts[k * n..(k + 1) * n].iter().sum()
    }

    fn col_sum(&self, k: usize) -> u64 {
        let n = self.num_classes();
        (0..n).map(|r| self.counts[r * n + k]).sum()
    }

    /// Adds one pair of equally sized label slices.
    pub fn accumulate(&mut self, gt: &[u8], pred: &[u8]) -> Result<()> {
        if gt.len() != pred.len() {
            return Err(Error::Argument(format!(
                "label slices differ in length: {} vs {}",
                gt.len(),
                pred.len()
            )));
        }
        let n = self.num_classes();
        for (&g, &p) in gt.iter().zip(pred) {
            let (g, p) = (usize::from(g), usize::from(p));
            if g >= n || p >= n {
                return Err(Error::Argument(format!(
                    "label value {} outside class set of {n}",
                    g.max(p)
                )));
            }
            self.counts[g * n + p] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if self.class_set != other.class_set {
            return Err(Error::Argument("cannot merge matrices over different class sets".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

/// Pools every (ground truth, prediction) pair into one matrix.
pub fn confusion_matrix(
    gt_masks: &[GrayImage],
    pred_masks: &[GrayImage],
    class_set: &ClassSet,
) -> Result<ConfusionMatrix> {
    if gt_masks.len() != pred_masks.len() {
        return Err(Error::Argument(format!(
            "{} ground-truth masks but {} predictions",
            gt_masks.len(),
            pred_masks.len()
        )));
    }
    let mut cm = ConfusionMatrix::zeros(class_set);
    for (idx, (gt, pred)) in gt_masks.iter().zip(pred_masks).enumerate() {
        if gt.dimensions() != pred.dimensions() {
            return Err(Error::Argument(format!(
                "pair {idx}: ground truth is {:?} but prediction is {:?}",
                gt.dimensions(),
                pred.dimensions()
            )));
        }
        cm.accumulate(gt.as_raw(), pred.as_raw())
            .map_err(|e| Error::Argument(format!("pair {idx}: {e}")))?;
    }
    Ok(cm)
}

/// Per-class IoU, `None` where the class is absent from both ground truth and prediction.
pub fn iou_per_class(cm: &ConfusionMatrix) -> Vec<Option<f64>> {
    (0..cm.num_classes())
        .map(|k| {
            let tp = cm.counts[k * cm.num_classes() + k];
            let union = cm.row_sum(k) + cm.col_sum(k) - tp;
            (union > 0).then(|| tp as f64 / union as f64)
        })
        .collect()
}

/// Per-class recall, `None` where the class never occurs in the ground truth.
pub fn acc_per_class(cm: &ConfusionMatrix) -> Vec<Option<f64>> {
    (0..cm.num_classes())
        .map(|k| {
            let tp = cm.counts[k * cm.num_classes() + k];
            let row = cm.row_sum(k);
            (row > 0).then(|| tp as f64 / row as f64)
        })
        .collect()
}

fn mean_defined(values: &[Option<f64>], what: &str) -> Result<f64> {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(Error::Evaluation(format!("no class has a defined {what}")));
    }
    Ok(defined.iter().sum::<f64>() / defined.len() as f64)
}

/// Arithmetic mean over defined classes, background included.
pub fn mean_iou(per_class: &[Option<f64>]) -> Result<f64> {
    mean_defined(per_class, "IoU")
}

pub fn mean_acc(per_class: &[Option<f64>]) -> Result<f64> {
    mean_defined(per_class, "accuracy")
}

/// Percentage change of `new_value` relative to `baseline`.
pub fn relative_improvement(new_value: f64, baseline: f64) -> Result<f64> {
    if !(baseline > 0.0) {
        return Err(Error::Argument(format!("baseline must be positive, got {baseline}")));
    }
    Ok(100.0 * (new_value - baseline) / baseline)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IoUReport {
    pub per_class_iou: Vec<Option<f64>>,
    pub per_class_acc: Vec<Option<f64>>,
    pub miou: f64,
    pub macc: f64,
    pub ranking_worst_to_best: Vec<ClassId>,
}

impl IoUReport {
    pub fn from_confusion(cm: &ConfusionMatrix) -> Result<Self> {
        let per_class_iou = iou_per_class(cm);
        let per_class_acc = acc_per_class(cm);
        let miou = mean_iou(&per_class_iou)?;
        let macc = mean_acc(&per_class_acc)?;
        let foreground: BTreeMap<ClassId, Option<f64>> = cm
            .class_set()
            .foreground_ids()
            .into_iter()
            .map(|id| (id, per_class_iou[usize::from(id)]))
            .collect();
        let ranking_worst_to_best = if foreground.is_empty() {
            Vec::new()
        } else {
            irb::rank_classes(&foreground)?
        };
        Ok(Self {
            per_class_iou,
            per_class_acc,
            miou,
            macc,
            ranking_worst_to_best,
        })
    }

    /// IoU of the foreground classes keyed by id, as consumed by the ranker.
    pub fn foreground_iou(&self, class_set: &ClassSet) -> BTreeMap<ClassId, Option<f64>> {
        class_set
            .foreground_ids()
            .into_iter()
            .map(|id| (id, self.per_class_iou.get(usize::from(id)).copied().flatten()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::ClassEntry;

    fn three_classes() -> ClassSet {
        let e = |id, name: &str, fg| ClassEntry { id, name: name.into(), is_foreground: fg };
        ClassSet::new(vec![e(0, "BG", false), e(1, "A", true), e(2, "B", true)]).unwrap()
    }

    fn raster(values: &[u8]) -> GrayImage {
        GrayImage::from_raw(values.len() as u32, 1, values.to_vec()).unwrap()
    }

    #[test]
    fn hand_example() {
        let cs = three_classes();
        let cm = confusion_matrix(&[raster(&[0, 1, 1, 2])], &[raster(&[0, 1, 2, 2])], &cs).unwrap();
        assert_eq!(cm.rows(), vec![vec![1, 0, 0], vec![0, 1, 1], vec![0, 0, 1]]);
        assert_eq!(iou_per_class(&cm), vec![Some(1.0), Some(0.5), Some(0.5)]);
        let acc = acc_per_class(&cm);
        assert_eq!(acc, vec![Some(1.0), Some(0.5), Some(1.0)]);
        assert!((mean_acc(&acc).unwrap() - 0.833_333).abs() < 1e-4);
    }

    #[test]
    fn identity_prediction_is_diagonal() {
        let cs = three_classes();
        let gt = raster(&[0, 0, 2, 1, 2, 2]);
        let cm = confusion_matrix(&[gt.clone()], &[gt], &cs).unwrap();
        assert_eq!(cm.rows(), vec![vec![2, 0, 0], vec![0, 1, 0], vec![0, 0, 3]]);
        assert!(iou_per_class(&cm).iter().all(|v| *v == Some(1.0)));
    }

    #[test]
    fn empty_sequence_gives_zero_matrix() {
        let cm = confusion_matrix(&[], &[], &three_classes()).unwrap();
        assert_eq!(cm.total(), 0);
        assert!(mean_iou(&iou_per_class(&cm)).is_err());
        assert!(mean_acc(&acc_per_class(&cm)).is_err());
    }

    #[test]
    fn absent_class_is_undefined() {
        let cs = three_classes();
        let cm = confusion_matrix(&[raster(&[0, 1])], &[raster(&[0, 1])], &cs).unwrap();
        assert_eq!(iou_per_class(&cm)[2], None);
        assert_eq!(mean_iou(&iou_per_class(&cm)).unwrap(), 1.0);
    }

    #[test]
    fn fully_mispredicted_class_scores_zero() {
        let cs = three_classes();
        let cm = confusion_matrix(&[raster(&[1, 1, 0])], &[raster(&[0, 0, 0])], &cs).unwrap();
        assert_eq!(acc_per_class(&cm)[1], Some(0.0));
        assert_eq!(iou_per_class(&cm)[1], Some(0.0));
    }

    #[test]
    fn shape_mismatch_names_pair() {
        let cs = three_classes();
        let err = confusion_matrix(
            &[raster(&[0]), raster(&[0, 1])],
            &[raster(&[0]), raster(&[0, 1, 1])],
            &cs,
        )
        .unwrap_err();
        assert!(err.to_string().contains("pair 1"), "{err}");
    }

    #[test]
    fn table_row_means() {
        let row = [Some(94.990), Some(72.030), Some(54.540), Some(65.660)];
        assert!((mean_iou(&row).unwrap() - 71.805).abs() < 5e-3);
        let row = [Some(96.490), Some(78.440), Some(73.980), Some(66.590)];
        assert!((mean_iou(&row).unwrap() - 78.875).abs() < 5e-3);
        assert_eq!(mean_iou(&[Some(1.0)]).unwrap(), 1.0);
    }

    #[test]
    fn improvement() {
        assert!((relative_improvement(78.875, 71.805).unwrap() - 9.846).abs() < 1e-3);
        assert!((relative_improvement(81.320, 77.474).unwrap() - 4.964).abs() < 1e-3);
        assert_eq!(relative_improvement(0.7, 0.7).unwrap(), 0.0);
        assert!(relative_improvement(1.0, 0.0).is_err());
        assert!(relative_improvement(1.0, -2.0).is_err());
    }

    #[test]
    fn report_ranks_degenerate_predictor_by_id() {
        let cs = ClassSet::default();
        let cm = confusion_matrix(&[raster(&[0, 1, 2, 3])], &[raster(&[0, 0, 0, 0])], &cs).unwrap();
        let report = IoUReport::from_confusion(&cm).unwrap();
        assert_eq!(report.per_class_iou[1..], [Some(0.0), Some(0.0), Some(0.0)]);
        assert_eq!(report.ranking_worst_to_best, vec![1, 2, 3]);
    }

    proptest::proptest! {
        #[test]
        fn iou_never_exceeds_accuracy(
            pairs in proptest::collection::vec((0u8..4, 0u8..4), 1..200)
        ) {
            let cs = ClassSet::default();
            let (gt, pred): (Vec<u8>, Vec<u8>) = pairs.iter().copied().unzip();
            let cm = confusion_matrix(&[raster(&gt)], &[raster(&pred)], &cs).unwrap();
            proptest::prop_assert_eq!(cm.total(), gt.len() as u64);
            for (iou, acc) in iou_per_class(&cm).into_iter().zip(acc_per_class(&cm)) {
                if let (Some(i), Some(a)) = (iou, acc) {
                    proptest::prop_assert!(i <= a + 1e-12);
                }
            }
        }
    }
}
