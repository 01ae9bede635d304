//! Panoptic quality, mIoU and the local training losses used as evaluators.

use std::collections::HashMap;

use serde::ser::{SerializeMap, Serializer};
use serde::Serialize;

use crate::domain::{ClassTable, PanopticLabels, PointCloud, IGNORE};
use crate::error::{Error, Result};
use crate::numeric::{clamped_ln, ExactSum, LOG_CLAMP};

/// Scores of one class. Quality values are percentages.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub pq: f64,
    pub rq: f64,
    pub sq: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// `None` when there are no predicted segments.
    pub precision: Option<f64>,
    /// `None` when there are no ground-truth segments.
    pub recall: Option<f64>,
    #[serde(skip)]
    pub iou_sum: f64,
}

impl ClassMetrics {
    fn new(tp: usize, fp: usize, fn_: usize, iou_sum: f64) -> Self {
        let denom = tp as f64 + 0.5 * fp as f64 + 0.5 * fn_ as f64;
        let (pq, rq) = if denom > 0.0 {
            (100.0 * iou_sum / denom, 100.0 * tp as f64 / denom)
        } else {
            (0.0, 0.0)
        };
        let sq = if tp > 0 { 100.0 * iou_sum / tp as f64 } else { 0.0 };
        let ratio = |a: usize, b: usize| (a + b > 0).then(|| 100.0 * a as f64 / (a + b) as f64);
        Self {
            pq,
            rq,
            sq,
            tp,
            fp,
            fn_,
            precision: ratio(tp, fp),
            recall: ratio(tp, fn_),
            iou_sum,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanopticMetrics {
    /// Indexed by class id; `None` for classes with neither ground truth nor predictions.
    pub per_class: Vec<Option<ClassMetrics>>,
    /// Whether the class occurs in the ground truth, i.e. enters the averages.
    pub present: Vec<bool>,
    pub names: Vec<String>,
    pub pq: f64,
    pub rq: f64,
    pub sq: f64,
    pub miou: f64,
}

impl PanopticMetrics {
    pub fn class(&self, class: u32) -> Option<&ClassMetrics> {
        self.per_class.get(class as usize).and_then(Option::as_ref)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }
}

struct PerClass<'a>(&'a PanopticMetrics);

impl Serialize for PerClass<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let m = self.0;
        let mut map = s.serialize_map(None)?;
        for (name, metrics) in m.names.iter().zip(&m.per_class) {
            if let Some(metrics) = metrics {
                map.serialize_entry(name, metrics)?;
            }
        }
        map.end()
    }
}

impl Serialize for PanopticMetrics {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(5))?;
        map.serialize_entry("pq", &self.pq)?;
        map.serialize_entry("rq", &self.rq)?;
        map.serialize_entry("sq", &self.sq)?;
        map.serialize_entry("miou", &self.miou)?;
        map.serialize_entry("per_class", &PerClass(self))?;
        map.end()
    }
}

fn check_classes(labels: &[u32], table: &ClassTable, what: &str) -> Result<()> {
    let c = table.num_classes() as u32;
    match labels.iter().find(|&&l| l != IGNORE && l >= c) {
        Some(l) => Err(Error::structural(format!("{what} class {l} outside the {c}-class table"))),
        None => Ok(()),
    }
}

/// Segment-level matching of a prediction against ground truth. A predicted
/// and a true segment of the same class match when their IoU exceeds 0.5.
/// Points without ground truth are removed from both sides first.
pub fn panoptic_quality(pred: &PanopticLabels, gt: &PointCloud, table: &ClassTable) -> Result<PanopticMetrics> {
    let (gt_class, gt_object) = gt.labels()?;
    if pred.class.len() != gt_class.len() || pred.object.len() != gt_class.len() {
        return Err(Error::structural(format!(
            "prediction covers {} points, ground truth {}",
            pred.class.len(),
            gt_class.len()
        )));
    }
    check_classes(gt_class, table, "ground-truth")?;
    check_classes(&pred.class, table, "predicted")?;
    let num_classes = table.num_classes();

    let mut gt_size: HashMap<(u32, u32), usize> = HashMap::new();
    let mut pred_size: HashMap<(u32, u32), usize> = HashMap::new();
    let mut inter: HashMap<((u32, u32), (u32, u32)), usize> = HashMap::new();
    for p in 0..gt_class.len() {
        if gt_class[p] == IGNORE || gt_object[p] == IGNORE {
            continue;
        }
        let g = (gt_class[p], gt_object[p]);
        *gt_size.entry(g).or_default() += 1;
        if pred.class[p] == IGNORE || pred.object[p] == IGNORE {
            continue;
        }
        let q = (pred.class[p], pred.object[p]);
        *pred_size.entry(q).or_default() += 1;
        *inter.entry((g, q)).or_default() += 1;
    }

    let mut tp = vec![0usize; num_classes];
    let mut iou_sum = vec![ExactSum::default(); num_classes];
    let mut gt_matched: HashMap<(u32, u32), (u32, u32)> = HashMap::new();
    let mut pred_matched: HashMap<(u32, u32), (u32, u32)> = HashMap::new();
    let mut pairs: Vec<_> = inter.into_iter().collect();
    pairs.sort_unstable();
    for ((g, q), i) in pairs {
        if g.0 != q.0 {
            continue;
        }
        let union = gt_size[&g] + pred_size[&q] - i;
        if 2 * i <= union {
            continue;
        }
        assert!(gt_matched.insert(g, q).is_none(), "ground-truth segment matched twice");
        assert!(pred_matched.insert(q, g).is_none(), "predicted segment matched twice");
        tp[g.0 as usize] += 1;
        iou_sum[g.0 as usize].add(i as f64 / union as f64);
    }
    let mut fp = vec![0usize; num_classes];
    let mut fn_ = vec![0usize; num_classes];
    let mut present = vec![false; num_classes];
    for g in gt_size.keys() {
        present[g.0 as usize] = true;
        if !gt_matched.contains_key(g) {
            fn_[g.0 as usize] += 1;
        }
    }
    for q in pred_size.keys() {
        if !pred_matched.contains_key(q) {
            fp[q.0 as usize] += 1;
        }
    }

    let per_class: Vec<Option<ClassMetrics>> = (0..num_classes)
        .map(|c| (tp[c] + fp[c] + fn_[c] > 0).then(|| ClassMetrics::new(tp[c], fp[c], fn_[c], iou_sum[c].value())))
        .collect();
    let mean = |f: &dyn Fn(&ClassMetrics) -> f64| {
        let vals: Vec<f64> = per_class
            .iter()
            .zip(&present)
            .filter(|(_, &p)| p)
            .filter_map(|(m, _)| m.as_ref().map(f))
            .collect();
        if vals.is_empty() {
            0.0
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    };
    let (pq, rq, sq) = (mean(&|m| m.pq), mean(&|m| m.rq), mean(&|m| m.sq));
    Ok(PanopticMetrics {
        pq,
        rq,
        sq,
        miou: miou(&pred.class, gt_class, table)?,
        per_class,
        present,
        names: table.entries().iter().map(|e| e.name.clone()).collect(),
    })
}

/// Mean over ground-truth classes of the per-class point IoU, in percent.
pub fn miou(pred: &[u32], gt: &[u32], table: &ClassTable) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::structural(format!("{} predicted classes for {} points", pred.len(), gt.len())));
    }
    check_classes(gt, table, "ground-truth")?;
    check_classes(pred, table, "predicted")?;
    let c = table.num_classes();
    let mut inter = vec![0usize; c];
    let mut gt_count = vec![0usize; c];
    let mut pred_count = vec![0usize; c];
    for (&p, &g) in pred.iter().zip(gt) {
        if g == IGNORE {
            continue;
        }
        gt_count[g as usize] += 1;
        if p != IGNORE {
            pred_count[p as usize] += 1;
            if p == g {
                inter[g as usize] += 1;
            }
        }
    }
    let ious: Vec<f64> = (0..c)
        .filter(|&k| gt_count[k] > 0)
        .map(|k| inter[k] as f64 / (gt_count[k] + pred_count[k] - inter[k]) as f64)
        .collect();
    Ok(if ious.is_empty() {
        0.0
    } else {
        100.0 * ious.iter().sum::<f64>() / ious.len() as f64
    })
}

/// Per-class `(precision, recall)` in percent under the panoptic matching;
/// classes with neither predictions nor ground truth are left out.
pub fn precision_recall(pred: &PanopticLabels, gt: &PointCloud, table: &ClassTable) -> Result<Vec<(u32, Option<f64>, Option<f64>)>> {
    let m = panoptic_quality(pred, gt, table)?;
    Ok(m.per_class
        .iter()
        .enumerate()
        .filter_map(|(c, cm)| cm.as_ref().map(|cm| (c as u32, cm.precision, cm.recall)))
        .collect())
}

/// Cross-entropy of a predicted class distribution against the true class.
pub fn class_loss(pred: &[f64], true_class: u32) -> f64 {
    -clamped_ln(pred[true_class as usize])
}

/// Cross-entropy between Bernoulli(`true_a`) and Bernoulli(`pred_a`), with the
/// prediction clamped away from 0 and 1.
pub fn agreement_loss(pred_a: f64, true_a: f64) -> f64 {
    let a = pred_a.clamp(LOG_CLAMP, 1.0 - LOG_CLAMP);
    let mut loss = 0.0;
    if true_a > 0.0 {
        loss -= true_a * a.ln();
    }
    if true_a < 1.0 {
        loss -= (1.0 - true_a) * (1.0 - a).ln();
    }
    loss
}

/// Mean class loss over nodes plus mean agreement loss over edges. `None`
/// entries (unlabeled) are excluded from both sums and counts.
pub fn combined_loss(class_losses: &[Option<f64>], agreement_losses: &[Option<f64>]) -> Result<f64> {
    let mean = |v: &[Option<f64>], what: &str| {
        let valid: ExactSum = v.iter().flatten().copied().collect();
        let count = v.iter().flatten().count();
        if count == 0 {
            Err(Error::parameter(format!("no valid {what} terms")))
        } else {
            Ok(valid.value() / count as f64)
        }
    };
    Ok(mean(class_losses, "class loss")? + mean(agreement_losses, "agreement loss")?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> ClassTable {
        ClassTable::from_pairs([("floor", false), ("chair", true), ("table", true)]).unwrap()
    }

    fn gt(class: Vec<u32>, object: Vec<u32>) -> PointCloud {
        let mut c = PointCloud::new(vec![[0.0; 3]; class.len()]);
        c.semantic = Some(class);
        c.object = Some(object);
        c
    }

    #[test]
    fn identical_prediction_is_perfect() {
        let g = gt(vec![0, 0, 1, 1, 2, 2, 1], vec![0, 0, 3, 3, 4, 4, 5]);
        let pred = PanopticLabels { class: vec![0, 0, 1, 1, 2, 2, 1], object: vec![0, 0, 7, 7, 9, 9, 8] };
        let m = panoptic_quality(&pred, &g, &table()).unwrap();
        assert_eq!((m.pq, m.rq, m.sq, m.miou), (100.0, 100.0, 100.0, 100.0));
        for c in 0..3 {
            let cm = m.class(c).unwrap();
            assert_eq!((cm.pq, cm.precision, cm.recall), (100.0, Some(100.0), Some(100.0)));
        }
    }

    #[test]
    fn halves_do_not_match() {
        let g = gt(vec![1; 4], vec![3; 4]);
        let pred = PanopticLabels { class: vec![1; 4], object: vec![3, 3, 4, 4] };
        let cm = panoptic_quality(&pred, &g, &table()).unwrap().class(1).unwrap().clone();
        assert_eq!((cm.tp, cm.fp, cm.fn_, cm.pq), (0, 2, 1, 0.0));
    }

    #[test]
    fn forty_percent_example() {
        // object 3 has 5 points; prediction 10 covers 4 of them plus nothing else -> IoU 0.8
        // object 4 (2 points) is missed by a prediction that also covers 3 points of nothing
        let mut class = vec![1; 7];
        let mut object = vec![3, 3, 3, 3, 3, 4, 4];
        class.extend([0; 3]);
        object.extend([0; 3]);
        let g = gt(class, object);
        let pred = PanopticLabels {
            class: vec![1, 1, 1, 1, 0, 0, 0, 1, 1, 1],
            object: vec![10, 10, 10, 10, 0, 0, 0, 11, 11, 11],
        };
        let m = panoptic_quality(&pred, &g, &table()).unwrap();
        let cm = m.class(1).unwrap();
        assert_eq!((cm.tp, cm.fp, cm.fn_), (1, 1, 1));
        assert!((cm.pq - 40.0).abs() < 1e-12);
        assert_eq!((cm.precision, cm.recall), (Some(50.0), Some(50.0)));
        assert!((cm.pq - cm.rq * cm.sq / 100.0).abs() < 1e-9);
        assert!(m.class(2).is_none());
    }

    #[test]
    fn ignored_points_are_removed() {
        let g = gt(vec![1, 1, IGNORE, IGNORE], vec![3, 3, IGNORE, IGNORE]);
        let pred = PanopticLabels { class: vec![1, 1, 1, 2], object: vec![5, 5, 5, 6] };
        let m = panoptic_quality(&pred, &g, &table()).unwrap();
        assert_eq!(m.pq, 100.0);
        assert!(m.class(2).is_none());
    }

    #[test]
    fn absent_classes_leave_the_average() {
        let g = gt(vec![0, 0], vec![0, 0]);
        let pred = PanopticLabels { class: vec![0, 2], object: vec![0, 4] };
        let m = panoptic_quality(&pred, &g, &table()).unwrap();
        // floor: IoU 1/2 is no match, table only has a false positive
        assert_eq!(m.class(2).unwrap().fp, 1);
        assert!(!m.present[2]);
        assert_eq!(m.pq, 0.0);
        assert_eq!(m.miou, 50.0);
    }

    #[test]
    fn length_mismatch_is_structural() {
        let g = gt(vec![0, 0], vec![0, 0]);
        let pred = PanopticLabels { class: vec![0], object: vec![0] };
        assert!(matches!(panoptic_quality(&pred, &g, &table()), Err(Error::Structural(_))));
    }

    #[test]
    fn miou_against_confusion_counts() {
        let t = table();
        let gt_c = vec![0, 0, 0, 1, 1, 2, 2, 2, IGNORE];
        let pred = vec![0, 1, 0, 1, 2, 2, 2, 0, 1];
        // class 0: inter 2, union 4; class 1: inter 1, union 3; class 2: inter 2, union 4
        let expected = 100.0 * (0.5 + 1.0 / 3.0 + 0.5) / 3.0;
        assert!((miou(&pred, &gt_c, &t).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn loss_examples() {
        assert_eq!(class_loss(&[0.0, 1.0], 1), 0.0);
        assert!((class_loss(&[0.25; 4], 2) - 1.386_294_361_119_890_6).abs() < 1e-15);
        assert!((class_loss(&[0.5, 0.5], 0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(agreement_loss(1.0, 1.0) < 1e-11);
        assert!((agreement_loss(0.5, 1.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((agreement_loss(0.5, 0.5) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn combined_loss_means() {
        assert_eq!(combined_loss(&[Some(0.0)], &[Some(0.0)]).unwrap(), 0.0);
        assert_eq!(combined_loss(&[Some(0.25)], &[Some(0.5)]).unwrap(), 0.75);
        assert_eq!(combined_loss(&[Some(1.0), None, Some(2.0)], &[Some(3.0)]).unwrap(), 4.5);
        assert!(matches!(combined_loss(&[None], &[Some(1.0)]), Err(Error::Parameter(_))));
    }

    #[test]
    fn json_layout() {
        let g = gt(vec![0, 1], vec![0, 3]);
        let pred = PanopticLabels { class: vec![0, 1], object: vec![0, 3] };
        let m = panoptic_quality(&pred, &g, &table()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&m.to_json()).unwrap();
        assert_eq!(v["pq"], 100.0);
        assert_eq!(v["per_class"]["chair"]["fn"], 0);
        assert!(v["per_class"].get("table").is_none());
    }
}
