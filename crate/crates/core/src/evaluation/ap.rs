//! Average precision over IoU thresholds.
//!
//! Per category and threshold, predictions are visited by descending
//! confidence (ties keep input order). Each one takes the still-unmatched
//! ground-truth instance of its category with the highest IoU; it is a true
//! positive when that IoU reaches the threshold, a false positive otherwise.
//! AP is the mean of the interpolated precision at the 101 recall levels
//! `0, 0.01, …, 1`. Category scores are averaged over the categories present
//! in the ground truth.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{iou_3d, EvalError, GroundTruthInstance, Prediction};

const RECALL_LEVELS: usize = 101;

/// Optional head/common/tail category split.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryGroups {
    #[serde(default)]
    pub head: Vec<String>,
    #[serde(default)]
    pub common: Vec<String>,
    #[serde(default)]
    pub tail: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApConfig {
    /// Thresholds averaged into AP and AR.
    pub thresholds: Vec<f64>,
}

impl Default for ApConfig {
    /// `0.50:0.05:0.95`.
    fn default() -> Self {
        Self {
            thresholds: (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryAp {
    pub ap: f64,
    pub ap50: f64,
    pub ap25: f64,
    pub num_gt: usize,
    pub num_pred: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAp {
    pub head: Option<f64>,
    pub common: Option<f64>,
    pub tail: Option<f64>,
}

/// All values in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApResult {
    pub ap: f64,
    pub ap50: f64,
    pub ap25: f64,
    pub ar: f64,
    pub rc50: f64,
    pub rc25: f64,
    pub per_category: BTreeMap<String, CategoryAp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<GroupAp>,
}

/// Matching state for one category, reused across thresholds.
struct Category {
    num_gt: usize,
    /// IoU rows for predictions, already in descending-confidence order.
    ious: Vec<Vec<f64>>,
}

impl Category {
    /// `(AP, recall)` as fractions at `threshold`.
    fn evaluate(&self, threshold: f64) -> (f64, f64) {
        let mut taken = vec![false; self.num_gt];
        let mut tp = 0usize;
        let mut precision = Vec::with_capacity(self.ious.len());
        let mut recall = Vec::with_capacity(self.ious.len());
        for (rank, row) in self.ious.iter().enumerate() {
            let best = row
                .iter()
                .enumerate()
                .filter(|(j, _)| !taken[*j])
                .fold(None::<(usize, f64)>, |best, (j, &iou)| match best {
                    Some((_, b)) if b >= iou => best,
                    _ => Some((j, iou)),
                });
            if let Some((j, iou)) = best {
                if iou >= threshold {
                    taken[j] = true;
                    tp += 1;
                }
            }
            precision.push(tp as f64 / (rank + 1) as f64);
            recall.push(tp as f64 / self.num_gt as f64);
        }
        (interpolated_ap(&precision, &recall), tp as f64 / self.num_gt as f64)
    }
}

/// Mean over 101 recall levels of the best precision reached at or beyond
/// each level; levels never reached count as 0.
fn interpolated_ap(precision: &[f64], recall: &[f64]) -> f64 {
    let mut envelope = precision.to_vec();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut sum = 0.0;
    let mut idx = 0;
    for level in 0..RECALL_LEVELS {
        let r = level as f64 / (RECALL_LEVELS - 1) as f64;
        while idx < recall.len() && recall[idx] < r {
            idx += 1;
        }
        if idx == recall.len() {
            break;
        }
        sum += envelope[idx];
    }
    sum / RECALL_LEVELS as f64
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values
        .into_iter()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Evaluates predictions (labels already mapped onto ground-truth labels)
/// against ground truth. Predictions whose label is not a ground-truth
/// category are ignored.
pub fn ap_evaluate(
    preds: &[Prediction],
    gts: &[GroundTruthInstance],
    config: &ApConfig,
    groups: Option<&CategoryGroups>,
) -> Result<ApResult, EvalError> {
    if gts.is_empty() {
        return Err(EvalError::NoGroundTruth);
    }
    let labels: BTreeSet<&str> = gts.iter().map(|g| g.label.as_str()).collect();
    let mut categories: BTreeMap<&str, Category> = BTreeMap::new();
    let mut pred_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for &label in &labels {
        let cat_gts: Vec<&GroundTruthInstance> = gts.iter().filter(|g| g.label == label).collect();
        let mut cat_preds: Vec<&Prediction> = preds.iter().filter(|p| p.label == label).collect();
        cat_preds.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
        pred_counts.insert(label, cat_preds.len());
        let ious = cat_preds
            .iter()
            .map(|p| cat_gts.iter().map(|g| iou_3d(&p.mask, &g.mask)).collect())
            .collect();
        categories.insert(
            label,
            Category {
                num_gt: cat_gts.len(),
                ious,
            },
        );
    }

    let mut per_category = BTreeMap::new();
    // (label, [(ap, recall) per averaged threshold], ap50/rc50, ap25/rc25)
    let mut ap_grid = Vec::new();
    let mut rc_grid = Vec::new();
    let mut ap50s = Vec::new();
    let mut ap25s = Vec::new();
    let mut rc50s = Vec::new();
    let mut rc25s = Vec::new();
    for (&label, cat) in &categories {
        let (aps, rcs): (Vec<f64>, Vec<f64>) =
            config.thresholds.iter().map(|&t| cat.evaluate(t)).unzip();
        let (ap50, rc50) = cat.evaluate(0.5);
        let (ap25, rc25) = cat.evaluate(0.25);
        let ap = mean(aps.iter().copied()).unwrap_or(0.0);
        per_category.insert(
            label.to_string(),
            CategoryAp {
                ap: 100.0 * ap,
                ap50: 100.0 * ap50,
                ap25: 100.0 * ap25,
                num_gt: cat.num_gt,
                num_pred: pred_counts[label],
            },
        );
        ap_grid.push(ap);
        rc_grid.push(mean(rcs).unwrap_or(0.0));
        ap50s.push(ap50);
        ap25s.push(ap25);
        rc50s.push(rc50);
        rc25s.push(rc25);
    }

    let pct = |v: Vec<f64>| 100.0 * mean(v).unwrap_or(0.0);
    let groups = groups.map(|g| {
        let group_mean = |names: &[String]| {
            let selected: BTreeSet<&str> = names.iter().map(String::as_str).collect();
            mean(
                per_category
                    .iter()
                    .filter(|(l, _)| selected.contains(l.as_str()))
                    .map(|(_, c)| c.ap),
            )
        };
        GroupAp {
            head: group_mean(&g.head),
            common: group_mean(&g.common),
            tail: group_mean(&g.tail),
        }
    });
    Ok(ApResult {
        ap: pct(ap_grid),
        ap50: pct(ap50s),
        ap25: pct(ap25s),
        ar: pct(rc_grid),
        rc50: pct(rc50s),
        rc25: pct(rc25s),
        per_category,
        groups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::PointSet;

    fn set(range: std::ops::Range<u32>) -> PointSet {
        range.collect()
    }

    fn pred(range: std::ops::Range<u32>, label: &str, conf: f64) -> Prediction {
        Prediction::new(set(range), label, conf).unwrap()
    }

    fn gt(range: std::ops::Range<u32>, label: &str) -> GroundTruthInstance {
        GroundTruthInstance::new(set(range), label).unwrap()
    }

    #[test]
    fn default_thresholds() {
        let t = ApConfig::default().thresholds;
        assert_eq!(t.len(), 10);
        assert_eq!(t[0], 0.5);
        assert_eq!(t[2], 0.6);
        assert_eq!(t[9], 0.95);
    }

    #[test]
    fn perfect_predictor() {
        let gts = vec![gt(0..10, "a"), gt(10..20, "b"), gt(20..25, "a")];
        let preds: Vec<Prediction> =
            gts.iter().map(|g| Prediction::new(g.mask.clone(), g.label.clone(), 0.7).unwrap()).collect();
        let r = ap_evaluate(&preds, &gts, &ApConfig::default(), None).unwrap();
        assert_eq!((r.ap, r.ap50, r.ap25), (100.0, 100.0, 100.0));
        assert_eq!((r.ar, r.rc50, r.rc25), (100.0, 100.0, 100.0));
    }

    #[test]
    fn true_positive_ranked_first() {
        // IoU 0.6 = 6 / 10.
        let gts = vec![gt(0..8, "a")];
        let preds = vec![pred(2..10, "a", 0.9), pred(100..110, "a", 0.8)];
        let r = ap_evaluate(&preds, &gts, &ApConfig::default(), None).unwrap();
        assert_eq!(r.ap50, 100.0);
        assert_eq!(r.rc50, 100.0);
    }

    #[test]
    fn false_positive_ranked_first() {
        let gts = vec![gt(0..8, "a")];
        let preds = vec![pred(2..10, "a", 0.8), pred(100..110, "a", 0.9)];
        let r = ap_evaluate(&preds, &gts, &ApConfig::default(), None).unwrap();
        assert_eq!(r.ap50, 50.0);
        // IoU 0.6 passes 0.50 through 0.60 only: 3 of 10 thresholds.
        assert!((r.ap - 15.0).abs() < 1e-12);
        assert!((r.ar - 30.0).abs() < 1e-12);
    }

    #[test]
    fn category_without_predictions_scores_zero() {
        let gts = vec![gt(0..4, "a"), gt(4..8, "b")];
        let preds = vec![pred(0..4, "a", 1.0), pred(50..60, "zzz", 1.0)];
        let r = ap_evaluate(&preds, &gts, &ApConfig::default(), None).unwrap();
        assert_eq!(r.ap50, 50.0);
        assert_eq!(r.per_category["b"].ap, 0.0);
        assert_eq!(r.per_category["b"].num_pred, 0);
        assert!(!r.per_category.contains_key("zzz"));
    }

    #[test]
    fn duplicates_are_false_positives() {
        let gts = vec![gt(0..4, "a")];
        let preds = vec![pred(0..4, "a", 0.9), pred(0..4, "a", 0.8)];
        let r = ap_evaluate(&preds, &gts, &ApConfig::default(), None).unwrap();
        // Recall reaches 1 at rank 1 with precision 1.
        assert_eq!(r.ap50, 100.0);
    }

    #[test]
    fn group_splits() {
        let gts = vec![gt(0..4, "a"), gt(4..8, "b"), gt(8..12, "c")];
        let preds = vec![pred(0..4, "a", 1.0), pred(8..12, "c", 1.0)];
        let groups = CategoryGroups {
            head: vec!["a".into(), "b".into()],
            common: vec!["c".into()],
            tail: vec!["d".into()],
        };
        let r = ap_evaluate(&preds, &gts, &ApConfig::default(), Some(&groups)).unwrap();
        let g = r.groups.unwrap();
        assert_eq!(g.head, Some(50.0));
        assert_eq!(g.common, Some(100.0));
        assert_eq!(g.tail, None);
    }

    #[test]
    fn no_ground_truth_is_an_error() {
        assert_eq!(
            ap_evaluate(&[], &[], &ApConfig::default(), None),
            Err(EvalError::NoGroundTruth)
        );
    }

    #[test]
    fn interpolation_hand_values() {
        // TP, FP, TP over 2 GT: precision 1, .5, .667; recall .5, .5, 1.
        let p = [1.0, 0.5, 2.0 / 3.0];
        let r = [0.5, 0.5, 1.0];
        let ap = interpolated_ap(&p, &r);
        let expected = (51.0 * 1.0 + 50.0 * (2.0 / 3.0)) / 101.0;
        assert!((ap - expected).abs() < 1e-15);
    }
}
