//! Scoring labeled 3D instance predictions against ground truth.
//!
//! Two protocols are provided:
//!
//! * the OE score, a one-to-one Hungarian matching on the cost
//!   `C(k, j) = −∛(o·ρ·max(0, s))` where `o` is mask IoU, `ρ` prediction
//!   confidence and `s` the cosine similarity of label embeddings. The score
//!   is `100 · Σ −C / J` over matched pairs, so unmatched ground truth counts
//!   as zero;
//! * label reassignment followed by ScanNet-style average precision, see [`ap`].

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::mask::PointSet;

pub mod ap;
mod hungarian;

pub use ap::{ap_evaluate, ApConfig, ApResult, CategoryAp, CategoryGroups, GroupAp};
pub use hungarian::{hungarian_match, Assignment, CostMatrix};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("no embedding for label(s): {}", .0.join(", "))]
    MissingEmbeddings(Vec<String>),
    #[error("embedding for '{label}' has dimension {found}, table uses {expected}")]
    EmbeddingDimension {
        label: String,
        expected: usize,
        found: usize,
    },
    #[error("embedding for '{0}' has zero or non-finite norm")]
    DegenerateEmbedding(String),
    #[error("vectors of dimension {0} and {1} cannot be compared")]
    DimensionMismatch(usize, usize),
    #[error("cosine similarity of a zero vector is undefined")]
    ZeroVector,
    #[error("evaluation needs at least one ground-truth instance")]
    NoGroundTruth,
    #[error("{0} has an empty mask")]
    EmptyMask(String),
    #[error("confidence {0} outside [0, 1]")]
    Confidence(f64),
}

/// A labeled, scored 3D instance mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mask: PointSet,
    pub label: String,
    pub confidence: f64,
}

impl Prediction {
    pub fn new(mask: PointSet, label: impl Into<String>, confidence: f64) -> Result<Self, EvalError> {
        let label = label.into();
        if mask.is_empty() {
            return Err(EvalError::EmptyMask(format!("prediction '{label}'")));
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(EvalError::Confidence(confidence));
        }
        Ok(Self {
            mask,
            label,
            confidence,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthInstance {
    pub mask: PointSet,
    pub label: String,
}

impl GroundTruthInstance {
    pub fn new(mask: PointSet, label: impl Into<String>) -> Result<Self, EvalError> {
        let label = label.into();
        if mask.is_empty() {
            return Err(EvalError::EmptyMask(format!("ground truth '{label}'")));
        }
        Ok(Self { mask, label })
    }
}

/// Label → unit-norm text embedding. Vectors are normalized on insertion.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingTable {
    dim: Option<usize>,
    vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts (or replaces) a label's vector after normalizing it.
    pub fn insert(&mut self, label: impl Into<String>, vector: Vec<f64>) -> Result<(), EvalError> {
        let label = label.into();
        if let Some(expected) = self.dim {
            if vector.len() != expected {
                return Err(EvalError::EmbeddingDimension {
                    label,
                    expected,
                    found: vector.len(),
                });
            }
        }
        let norm = vector.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(EvalError::DegenerateEmbedding(label));
        }
        self.dim = Some(vector.len());
        self.vectors
            .insert(label, vector.into_iter().map(|x| x / norm).collect());
        Ok(())
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, label: &str) -> Option<&[f64]> {
        self.vectors.get(label).map(Vec::as_slice)
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.vectors.keys().map(String::as_str)
    }

    /// Fails with every missing label listed, sorted.
    pub fn require<'a>(&self, labels: impl IntoIterator<Item = &'a str>) -> Result<(), EvalError> {
        let missing: BTreeSet<&str> = labels
            .into_iter()
            .filter(|l| !self.vectors.contains_key(*l))
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(EvalError::MissingEmbeddings(
                missing.into_iter().map(str::to_string).collect(),
            ))
        }
    }
}

/// `|a ∩ b| / |a ∪ b|`, or 0 when both are empty.
pub fn iou_3d(a: &PointSet, b: &PointSet) -> f64 {
    let inter = a.intersection_len(b);
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// `x·y / (‖x‖‖y‖)`, clamped to `[-1, 1]`.
///
/// The norm product is taken as `√(‖x‖²‖y‖²)`, which makes the similarity of
/// a vector with itself exactly 1.
pub fn cosine_sim(x: &[f64], y: &[f64]) -> Result<f64, EvalError> {
    if x.len() != y.len() {
        return Err(EvalError::DimensionMismatch(x.len(), y.len()));
    }
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let xx: f64 = x.iter().map(|a| a * a).sum();
    let yy: f64 = y.iter().map(|a| a * a).sum();
    let denom = (xx * yy).sqrt();
    if !(denom > 0.0) {
        return Err(EvalError::ZeroVector);
    }
    Ok((dot / denom).clamp(-1.0, 1.0))
}

/// Per-pair ingredients of the OE cost: IoU `o`, confidence `ρ` and label
/// similarity `s` for every prediction/ground-truth pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairTerms {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `rows × cols`.
    pub iou: Vec<f64>,
    /// Row-major `rows × cols`.
    pub similarity: Vec<f64>,
    /// One per row.
    pub confidence: Vec<f64>,
}

impl PairTerms {
    pub fn compute(
        preds: &[Prediction],
        gts: &[GroundTruthInstance],
        table: &EmbeddingTable,
    ) -> Result<Self, EvalError> {
        table.require(
            preds
                .iter()
                .map(|p| p.label.as_str())
                .chain(gts.iter().map(|g| g.label.as_str())),
        )?;
        let mut sim_cache: HashMap<(&str, &str), f64> = HashMap::new();
        let (rows, cols) = (preds.len(), gts.len());
        let mut iou = Vec::with_capacity(rows * cols);
        let mut similarity = Vec::with_capacity(rows * cols);
        for p in preds {
            for g in gts {
                iou.push(iou_3d(&p.mask, &g.mask));
                let key = (p.label.as_str(), g.label.as_str());
                let s = match sim_cache.get(&key) {
                    Some(&s) => s,
                    None => {
                        let s = cosine_sim(table.get(key.0).unwrap(), table.get(key.1).unwrap())?;
                        sim_cache.insert(key, s);
                        s
                    }
                };
                similarity.push(s);
            }
        }
        Ok(Self {
            rows,
            cols,
            iou,
            similarity,
            confidence: preds.iter().map(|p| p.confidence).collect(),
        })
    }

    #[inline]
    fn cost(&self, k: usize, j: usize) -> f64 {
        let i = k * self.cols + j;
        -(self.iou[i] * self.confidence[k] * self.similarity[i].max(0.0)).cbrt()
    }

    pub fn cost_matrix(&self) -> CostMatrix {
        CostMatrix::from_fn(self.rows, self.cols, |k, j| self.cost(k, j))
    }
}

/// `C(k, j) = −∛(o·ρ·max(0, s))`, entries in `[−1, 0]`.
pub fn build_cost_matrix(
    preds: &[Prediction],
    gts: &[GroundTruthInstance],
    table: &EmbeddingTable,
) -> Result<CostMatrix, EvalError> {
    Ok(PairTerms::compute(preds, gts, table)?.cost_matrix())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub pred: usize,
    pub gt: usize,
    pub iou: f64,
    pub similarity: f64,
    /// `−C(k, j)`.
    pub contribution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OeResult {
    /// In `[0, 100]`.
    pub score: f64,
    pub num_gt: usize,
    /// Assigned pairs with non-zero IoU, ascending by prediction index.
    pub pairs: Vec<MatchedPair>,
}

/// OE score from precomputed pair terms.
pub fn oe_score_from_terms(terms: &PairTerms) -> Result<OeResult, EvalError> {
    if terms.cols == 0 {
        return Err(EvalError::NoGroundTruth);
    }
    let assignment = hungarian_match(&terms.cost_matrix());
    let pairs: Vec<MatchedPair> = assignment
        .pairs
        .iter()
        .filter(|&&(k, j)| terms.iou[k * terms.cols + j] > 0.0)
        .map(|&(k, j)| MatchedPair {
            pred: k,
            gt: j,
            iou: terms.iou[k * terms.cols + j],
            similarity: terms.similarity[k * terms.cols + j],
            contribution: -terms.cost(k, j),
        })
        .collect();
    let total: f64 = pairs.iter().map(|p| p.contribution).sum();
    Ok(OeResult {
        score: 100.0 * total / terms.cols as f64,
        num_gt: terms.cols,
        pairs,
    })
}

pub fn oe_score(
    preds: &[Prediction],
    gts: &[GroundTruthInstance],
    table: &EmbeddingTable,
) -> Result<OeResult, EvalError> {
    if gts.is_empty() {
        return Err(EvalError::NoGroundTruth);
    }
    oe_score_from_terms(&PairTerms::compute(preds, gts, table)?)
}

/// Maps each predicted label to the ground-truth label with the highest
/// cosine similarity; ties go to the lexicographically smaller label.
pub fn reassign_labels<S: AsRef<str>>(
    pred_labels: &[S],
    gt_labels: &[S],
    table: &EmbeddingTable,
) -> Result<Vec<String>, EvalError> {
    let targets: BTreeSet<&str> = gt_labels.iter().map(AsRef::as_ref).collect();
    table.require(
        pred_labels
            .iter()
            .map(AsRef::as_ref)
            .chain(targets.iter().copied()),
    )?;
    if targets.is_empty() {
        return Err(EvalError::NoGroundTruth);
    }
    let mut cache: HashMap<&str, &str> = HashMap::new();
    let mut out = Vec::with_capacity(pred_labels.len());
    for label in pred_labels.iter().map(AsRef::as_ref) {
        if let Some(&hit) = cache.get(label) {
            out.push(hit.to_string());
            continue;
        }
        let x = table.get(label).unwrap();
        let mut best: Option<(f64, &str)> = None;
        for &target in &targets {
            let s = cosine_sim(x, table.get(target).unwrap())?;
            if best.is_none_or(|(b, _)| s > b) {
                best = Some((s, target));
            }
        }
        let chosen = best.unwrap().1;
        cache.insert(label, chosen);
        out.push(chosen.to_string());
    }
    Ok(out)
}

/// Applies [`reassign_labels`] to whole predictions.
pub fn reassign_predictions(
    preds: &[Prediction],
    gts: &[GroundTruthInstance],
    table: &EmbeddingTable,
) -> Result<Vec<Prediction>, EvalError> {
    let pred_labels: Vec<&str> = preds.iter().map(|p| p.label.as_str()).collect();
    let gt_labels: Vec<&str> = gts.iter().map(|g| g.label.as_str()).collect();
    let labels = reassign_labels(&pred_labels, &gt_labels, table)?;
    Ok(preds
        .iter()
        .zip(labels)
        .map(|(p, label)| Prediction {
            label,
            ..p.clone()
        })
        .collect())
}

/// Every confidence set to 1.0, order preserved.
pub fn fixed_confidence_mode(preds: &[Prediction]) -> Vec<Prediction> {
    preds
        .iter()
        .map(|p| Prediction {
            confidence: 1.0,
            ..p.clone()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(v: &[u32]) -> PointSet {
        PointSet::from_unsorted(v.to_vec())
    }

    fn table(entries: &[(&str, &[f64])]) -> EmbeddingTable {
        let mut t = EmbeddingTable::new();
        for (l, v) in entries {
            t.insert(*l, v.to_vec()).unwrap();
        }
        t
    }

    #[test]
    fn iou_cases() {
        assert_eq!(iou_3d(&set(&[1, 2, 3]), &set(&[1, 2, 3])), 1.0);
        assert_eq!(iou_3d(&set(&[1, 2]), &set(&[3, 4])), 0.0);
        assert_eq!(iou_3d(&set(&[0, 1, 2, 3]), &set(&[2, 3, 4, 5])), 2.0 / 6.0);
        assert_eq!(iou_3d(&set(&[]), &set(&[])), 0.0);
    }

    #[test]
    fn cosine_cases() {
        assert_eq!(cosine_sim(&[0.3, -0.7, 2.0], &[0.3, -0.7, 2.0]).unwrap(), 1.0);
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
        let s = cosine_sim(&[1.0, 0.0], &[0.9, 0.1]).unwrap();
        assert!((s - 0.9 / 0.82f64.sqrt()).abs() < 1e-15);
        assert!((s - 0.99388).abs() < 1e-5);
        assert_eq!(cosine_sim(&[1.0], &[1.0, 0.0]), Err(EvalError::DimensionMismatch(1, 2)));
        assert_eq!(cosine_sim(&[0.0, 0.0], &[1.0, 0.0]), Err(EvalError::ZeroVector));
    }

    #[test]
    fn embeddings_are_normalized() {
        let t = table(&[("a", &[3.0, 4.0])]);
        assert_eq!(t.get("a").unwrap(), &[0.6, 0.8]);
        let mut t = t;
        assert!(matches!(t.insert("b", vec![1.0]), Err(EvalError::EmbeddingDimension { .. })));
        assert!(matches!(t.insert("c", vec![0.0, 0.0]), Err(EvalError::DegenerateEmbedding(_))));
    }

    #[test]
    fn cost_entries() {
        let t = table(&[("x", &[1.0, 0.0]), ("half", &[0.5, 0.75f64.sqrt()]), ("neg", &[-1.0, 0.1])]);
        let gts = vec![GroundTruthInstance::new(set(&[0]), "x").unwrap()];
        let perfect = Prediction::new(set(&[0]), "x", 1.0).unwrap();
        let c = build_cost_matrix(&[perfect], &gts, &t).unwrap();
        assert_eq!(c.get(0, 0), -1.0);
        let neg = Prediction::new(set(&[0]), "neg", 1.0).unwrap();
        assert_eq!(build_cost_matrix(&[neg], &gts, &t).unwrap().get(0, 0), 0.0);
        let half = Prediction::new(set(&[0, 1]), "half", 1.0).unwrap();
        let c = build_cost_matrix(&[half], &gts, &t).unwrap().get(0, 0);
        assert!((c + 0.25f64.cbrt()).abs() < 1e-12);
        assert!((c + 0.629961).abs() < 1e-6);
    }

    #[test]
    fn oe_perfect_and_half() {
        let t = table(&[("x", &[1.0, 0.0]), ("half", &[0.5, 0.75f64.sqrt()])]);
        let gts = vec![GroundTruthInstance::new(set(&[0]), "x").unwrap()];
        let r = oe_score(&[Prediction::new(set(&[0]), "x", 1.0).unwrap()], &gts, &t).unwrap();
        assert_eq!(r.score, 100.0);
        let r = oe_score(&[Prediction::new(set(&[0, 1]), "half", 1.0).unwrap()], &gts, &t).unwrap();
        assert!((r.score - 62.9961).abs() < 1e-4);
        assert_eq!(r.pairs.len(), 1);
    }

    #[test]
    fn oe_unmatched_gt_and_zero_iou() {
        let t = table(&[("x", &[1.0])]);
        let gts = vec![
            GroundTruthInstance::new(set(&[0]), "x").unwrap(),
            GroundTruthInstance::new(set(&[1]), "x").unwrap(),
        ];
        let preds = vec![Prediction::new(set(&[0]), "x", 1.0).unwrap()];
        let r = oe_score(&preds, &gts, &t).unwrap();
        assert_eq!(r.score, 50.0);
        let preds = vec![Prediction::new(set(&[5]), "x", 1.0).unwrap()];
        let r = oe_score(&preds, &gts, &t).unwrap();
        assert_eq!(r.score, 0.0);
        assert!(r.pairs.is_empty(), "zero-IoU assignments are not reported");
        assert_eq!(oe_score(&preds, &[], &t), Err(EvalError::NoGroundTruth));
        assert_eq!(oe_score(&[], &gts, &t).unwrap().score, 0.0);
    }

    #[test]
    fn missing_embeddings_are_listed() {
        let t = table(&[("x", &[1.0])]);
        let gts = vec![GroundTruthInstance::new(set(&[0]), "zebra").unwrap()];
        let preds = vec![Prediction::new(set(&[0]), "aardvark", 1.0).unwrap()];
        assert_eq!(
            oe_score(&preds, &gts, &t),
            Err(EvalError::MissingEmbeddings(vec!["aardvark".into(), "zebra".into()]))
        );
    }

    #[test]
    fn reassignment() {
        let t = table(&[
            ("sofa", &[1.0, 0.0]),
            ("table", &[0.0, 1.0]),
            ("couch", &[0.9, 0.1]),
            ("desk", &[0.0, 1.0]),
        ]);
        let out = reassign_labels(&["couch", "table", "sofa"], &["table", "sofa"], &t).unwrap();
        assert_eq!(out, vec!["sofa", "table", "sofa"]);
        // "table" and "desk" share an embedding: the smaller label wins.
        let out = reassign_labels(&["table"], &["table", "desk"], &t).unwrap();
        assert_eq!(out, vec!["desk"]);
    }

    #[test]
    fn fixed_confidence() {
        let preds = vec![
            Prediction::new(set(&[0]), "a", 0.2).unwrap(),
            Prediction::new(set(&[1]), "b", 0.9).unwrap(),
        ];
        let fixed = fixed_confidence_mode(&preds);
        assert!(fixed.iter().all(|p| p.confidence == 1.0));
        assert_eq!(fixed[1].label, "b");
        assert_eq!(fixed_confidence_mode(&fixed), fixed);
        let t = table(&[("a", &[1.0]), ("b", &[1.0])]);
        let gts = vec![GroundTruthInstance::new(set(&[0]), "a").unwrap()];
        assert_eq!(oe_score(&fixed[..1], &gts, &t).unwrap().score, 100.0);
    }
}
