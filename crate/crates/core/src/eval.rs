//! Dataset-level intersection over union.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seg::{ClassCatalog, LabelMap, IGNORE};

/// Confusion totals accumulated over a whole dataset. Merging is integer
/// addition, so shards can be combined in any order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    #[serde(rename = "fn")]
    pub fn_: Vec<u64>,
}

impl Confusion {
    pub fn new(num_classes: usize) -> Self {
        Confusion { tp: vec![0; num_classes], fp: vec![0; num_classes], fn_: vec![0; num_classes] }
    }

    /// Pixels whose ground truth is IGNORE are skipped entirely.
    pub fn add(&mut self, pred: &LabelMap, gt: &LabelMap) -> Result<()> {
        if (pred.width(), pred.height()) != (gt.width(), gt.height()) {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{} prediction", gt.width(), gt.height()),
                actual: format!("{}x{}", pred.width(), pred.height()),
            });
        }
        let n = self.tp.len();
        gt.validate(n)?;
        pred.validate(n)?;
        for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
            if g == IGNORE {
                continue;
            }
            if p == g {
                self.tp[g as usize] += 1;
            } else {
                self.fn_[g as usize] += 1;
                if p != IGNORE {
                    self.fp[p as usize] += 1;
                }
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Confusion) {
        for (a, b) in [(&mut self.tp, &other.tp), (&mut self.fp, &other.fp), (&mut self.fn_, &other.fn_)] {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn report(&self) -> IouReport {
        let per_class_iou: Vec<Option<f64>> = (0..self.tp.len())
            .map(|c| {
                let union = self.tp[c] + self.fp[c] + self.fn_[c];
                (union > 0).then(|| self.tp[c] as f64 / union as f64)
            })
            .collect();
        let defined: Vec<f64> = per_class_iou.iter().flatten().copied().collect();
        let mean_iou = if defined.is_empty() { 0.0 } else { defined.iter().sum::<f64>() / defined.len() as f64 };
        IouReport { per_class_iou, mean_iou, confusion: self.clone() }
    }
}

/// `None` marks a class with an empty union; such classes are left out of the mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IouReport {
    pub per_class_iou: Vec<Option<f64>>,
    pub mean_iou: f64,
    pub confusion: Confusion,
}

impl IouReport {
    /// Plain-text table: one row, one column per class, then the mean. Values in percent.
    pub fn table(&self, catalog: &ClassCatalog, label: &str) -> String {
        let names: Vec<String> = (0..self.per_class_iou.len()).map(|c| catalog.name(c as u8)).collect();
        let width = names.iter().map(|n| n.len()).max().unwrap_or(0).max(5);
        let lw = label.len().max(6);
        let mut out = String::new();
        let _ = write!(out, "{:<lw$}", "method");
        for n in &names {
            let _ = write!(out, " {n:>width$}");
        }
        let _ = writeln!(out, " {:>width$}", "mIOU");
        let _ = write!(out, "{label:<lw$}");
        for v in &self.per_class_iou {
            match v {
                Some(v) => {
                    let _ = write!(out, " {:>width$.1}", 100.0 * v);
                }
                None => {
                    let _ = write!(out, " {:>width$}", "-");
                }
            }
        }
        let _ = writeln!(out, " {:>width$.1}", 100.0 * self.mean_iou);
        out
    }
}

/// Mean IOU from confusion totals aggregated over all images.
pub fn miou(pred: &[LabelMap], gt: &[LabelMap], catalog: &ClassCatalog) -> Result<IouReport> {
    if pred.len() != gt.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} predictions", gt.len()),
            actual: format!("{}", pred.len()),
        });
    }
    let mut conf = Confusion::new(catalog.num_classes());
    for (p, g) in pred.iter().zip(gt) {
        conf.add(p, g)?;
    }
    Ok(conf.report())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn map(labels: &[u8]) -> LabelMap {
        LabelMap::new(labels.len(), 1, labels.to_vec()).unwrap()
    }

    fn cat() -> ClassCatalog {
        ClassCatalog::with_background(2).unwrap()
    }

    #[test]
    fn perfect_prediction_scores_one() {
        let gt = vec![map(&[0, 1, 2, 2, IGNORE])];
        let r = miou(&gt, &gt, &cat()).unwrap();
        assert_eq!(r.mean_iou, 1.0);
    }

    #[test]
    fn disjoint_prediction_scores_zero() {
        let gt = vec![map(&[0, 0, 1, 1, 2])];
        let pred = vec![map(&[1, 2, 2, 0, 0])];
        let r = miou(&pred, &gt, &cat()).unwrap();
        assert_eq!(r.mean_iou, 0.0);
    }

    #[test]
    fn half_coverage_is_one_half() {
        // class 1 occupies 4 pixels; the prediction covers 2 of them and nothing else.
        let gt = vec![map(&[1, 1, 1, 1, 0, 0])];
        let pred = vec![map(&[1, 1, 0, 0, 0, 0])];
        let r = miou(&pred, &gt, &cat()).unwrap();
        assert_eq!(r.per_class_iou[1], Some(0.5));
        assert_eq!((r.confusion.tp[1], r.confusion.fp[1], r.confusion.fn_[1]), (2, 0, 2));
    }

    #[test]
    fn ignore_pixels_and_empty_classes_are_excluded() {
        let gt = vec![map(&[0, IGNORE, IGNORE])];
        let pred = vec![map(&[0, 1, 2])];
        let r = miou(&pred, &gt, &cat()).unwrap();
        assert_eq!(r.per_class_iou, vec![Some(1.0), None, None]);
        assert_eq!(r.mean_iou, 1.0);
    }

    #[test]
    fn aggregate_then_divide_differs_from_per_image_mean() {
        let c = ClassCatalog::with_background(1).unwrap();
        let gt = vec![map(&[1, 0, 0, 0]), map(&[1, 1, 1, 1])];
        let pred = vec![map(&[0, 0, 0, 0]), map(&[1, 1, 1, 1])];
        let whole = miou(&pred, &gt, &c).unwrap();
        // Aggregated: class 0 = 3/4, class 1 = 4/5.
        assert!((whole.mean_iou - (0.75 + 0.8) / 2.0).abs() < 1e-15);
        let per_image: f64 = (0..2)
            .map(|i| miou(&pred[i..=i], &gt[i..=i], &c).unwrap().mean_iou)
            .sum::<f64>()
            / 2.0;
        // Image 0: class 0 = 3/4, class 1 = 0. Image 1: class 1 = 1.
        assert!((per_image - (0.375 + 1.0) / 2.0).abs() < 1e-15);
        assert!((whole.mean_iou - per_image).abs() > 0.05);
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        assert!(miou(&[map(&[0, 0])], &[map(&[0, 0, 0])], &cat()).is_err());
        assert!(miou(&[map(&[0])], &[], &cat()).is_err());
        assert!(miou(&[map(&[7])], &[map(&[0])], &cat()).is_err());
    }

    #[test]
    fn table_lists_every_class() {
        let gt = vec![map(&[0, 1, 1, 2])];
        let pred = vec![map(&[0, 1, 0, 2])];
        let t = miou(&pred, &gt, &cat()).unwrap().table(&cat(), "1Point");
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[1].starts_with("1Point"));
        assert!(lines[1].ends_with("66.7"), "{t}");
    }

    proptest! {
        #[test]
        fn image_order_does_not_matter(
            pairs in proptest::collection::vec(
                proptest::collection::vec((0u8..3, 0u8..4), 6), 1..6),
            rot in 0usize..6,
        ) {
            let conv = |v: u8| if v == 3 { IGNORE } else { v };
            let gt: Vec<LabelMap> = pairs.iter().map(|p| map(&p.iter().map(|x| conv(x.1)).collect::<Vec<_>>())).collect();
            let pred: Vec<LabelMap> = pairs.iter().map(|p| map(&p.iter().map(|x| x.0).collect::<Vec<_>>())).collect();
            let a = miou(&pred, &gt, &cat()).unwrap();
            let k = rot % gt.len();
            let mut gt2 = gt.clone();
            let mut pred2 = pred.clone();
            gt2.rotate_left(k);
            pred2.rotate_left(k);
            gt2.reverse();
            pred2.reverse();
            prop_assert_eq!(a, miou(&pred2, &gt2, &cat()).unwrap());
        }
    }
}
