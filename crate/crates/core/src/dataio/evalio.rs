//! Evaluation inputs.
//!
//! Predictions and ground truth are JSON lines, one instance per line:
//!
//! ```text
//! {"label": "chair", "confidence": 0.8, "indices": [4, 5, 9]}
//! {"label": "table", "confidence": 0.6, "mask_file": "masks/3.txt"}
//! ```
//!
//! `confidence` is absent for ground truth. A `mask_file` holds
//! whitespace-separated point indices and is resolved relative to the JSON
//! file. Embeddings are `{"label": ..., "vector": [...]}` lines, category
//! groups a JSON object with `head`, `common` and `tail` label lists.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_jsonl, read_text, write_jsonl, DataError};
use crate::evaluation::{EmbeddingTable, GroundTruthInstance, Prediction};
use crate::mask::PointSet;

pub use crate::evaluation::CategoryGroups;

#[derive(Debug, Serialize, Deserialize)]
struct InstanceRecord {
    label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    indices: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mask_file: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
struct EmbeddingRecord {
    label: String,
    vector: Vec<f64>,
}

fn read_index_file(path: &Path) -> Result<Vec<u32>, DataError> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        for word in line.split_whitespace() {
            out.push(
                word.parse()
                    .map_err(|_| DataError::parse(path, i + 1, format!("bad point index '{word}'")))?,
            );
        }
    }
    Ok(out)
}

fn instance_mask(path: &Path, line: usize, rec: &InstanceRecord) -> Result<PointSet, DataError> {
    let indices = match (&rec.indices, &rec.mask_file) {
        (Some(indices), None) => indices.clone(),
        (None, Some(file)) => {
            let base = path.parent().unwrap_or(Path::new(""));
            read_index_file(&base.join(file))?
        }
        _ => {
            return Err(DataError::parse(
                path,
                line,
                "exactly one of 'indices' and 'mask_file' is required",
            ))
        }
    };
    Ok(PointSet::from_unsorted(indices))
}

fn check_bound(path: &Path, line: usize, mask: &PointSet, num_points: Option<usize>) -> Result<(), DataError> {
    match (mask.max(), num_points) {
        (Some(max), Some(n)) if max as usize >= n => Err(DataError::parse(
            path,
            line,
            format!("point index {max} out of range for a cloud of {n} points"),
        )),
        _ => Ok(()),
    }
}

/// Loads predictions; indices are checked against `num_points` when given.
pub fn load_predictions(path: &Path, num_points: Option<usize>) -> Result<Vec<Prediction>, DataError> {
    read_jsonl::<InstanceRecord>(path)?
        .into_iter()
        .map(|(line, rec)| {
            let mask = instance_mask(path, line, &rec)?;
            check_bound(path, line, &mask, num_points)?;
            let confidence = rec
                .confidence
                .ok_or_else(|| DataError::parse(path, line, "missing 'confidence'"))?;
            Prediction::new(mask, rec.label, confidence)
                .map_err(|e| DataError::parse(path, line, e.to_string()))
        })
        .collect()
}

pub fn load_ground_truth(
    path: &Path,
    num_points: Option<usize>,
) -> Result<Vec<GroundTruthInstance>, DataError> {
    read_jsonl::<InstanceRecord>(path)?
        .into_iter()
        .map(|(line, rec)| {
            let mask = instance_mask(path, line, &rec)?;
            check_bound(path, line, &mask, num_points)?;
            GroundTruthInstance::new(mask, rec.label)
                .map_err(|e| DataError::parse(path, line, e.to_string()))
        })
        .collect()
}

pub fn save_predictions(preds: &[Prediction], path: &Path) -> Result<(), DataError> {
    let records: Vec<InstanceRecord> = preds
        .iter()
        .map(|p| InstanceRecord {
            label: p.label.clone(),
            confidence: Some(p.confidence),
            indices: Some(p.mask.as_slice().to_vec()),
            mask_file: None,
        })
        .collect();
    write_jsonl(path, &records)
}

pub fn save_ground_truth(gts: &[GroundTruthInstance], path: &Path) -> Result<(), DataError> {
    let records: Vec<InstanceRecord> = gts
        .iter()
        .map(|g| InstanceRecord {
            label: g.label.clone(),
            confidence: None,
            indices: Some(g.mask.as_slice().to_vec()),
            mask_file: None,
        })
        .collect();
    write_jsonl(path, &records)
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingTable, DataError> {
    let mut table = EmbeddingTable::new();
    for (line, rec) in read_jsonl::<EmbeddingRecord>(path)? {
        table
            .insert(rec.label, rec.vector)
            .map_err(|e| DataError::parse(path, line, e.to_string()))?;
    }
    Ok(table)
}

/// Writes `(label, vector)` pairs in the given order.
pub fn save_embeddings(entries: &[(String, Vec<f64>)], path: &Path) -> Result<(), DataError> {
    let records: Vec<EmbeddingRecord> = entries
        .iter()
        .map(|(label, vector)| EmbeddingRecord {
            label: label.clone(),
            vector: vector.clone(),
        })
        .collect();
    write_jsonl(path, &records)
}

pub fn load_category_groups(path: &Path) -> Result<CategoryGroups, DataError> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| DataError::parse(path, e.line(), e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predictions_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pred.jsonl");
        let preds = vec![
            Prediction::new(PointSet::from_unsorted(vec![3, 1]), "chair", 0.25).unwrap(),
            Prediction::new(PointSet::from_unsorted(vec![7]), "a \"quoted\" label", 1.0).unwrap(),
        ];
        save_predictions(&preds, &path).unwrap();
        assert_eq!(load_predictions(&path, Some(8)).unwrap(), preds);
        let err = load_predictions(&path, Some(5)).unwrap_err();
        assert!(matches!(err, DataError::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn mask_file_is_relative_to_json() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("m")).unwrap();
        std::fs::write(dir.path().join("m/0.txt"), "5 2\n9\n").unwrap();
        let path = dir.path().join("gt.jsonl");
        std::fs::write(&path, "{\"label\": \"x\", \"mask_file\": \"m/0.txt\"}\n\n").unwrap();
        let gts = load_ground_truth(&path, None).unwrap();
        assert_eq!(gts.len(), 1);
        assert_eq!(gts[0].mask.as_slice(), &[2, 5, 9]);
    }

    #[test]
    fn malformed_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        std::fs::write(&path, "{\"label\": \"x\", \"confidence\": 0.5, \"indices\": [1]}\n{\"label\": \"x\", \"confidence\": 0.5}\n").unwrap();
        assert!(matches!(load_predictions(&path, None), Err(DataError::Parse { line: 2, .. })));
        std::fs::write(&path, "{\"label\": \"x\", \"confidence\": 1.5, \"indices\": [1]}\n").unwrap();
        assert!(matches!(load_predictions(&path, None), Err(DataError::Parse { line: 1, .. })));
        std::fs::write(&path, "{\"label\": \"x\", \"indices\": []}\n").unwrap();
        assert!(load_ground_truth(&path, None).is_err());
        std::fs::write(&path, "not json\n").unwrap();
        assert!(matches!(load_ground_truth(&path, None), Err(DataError::Parse { line: 1, .. })));
    }

    #[test]
    fn embeddings_and_groups() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.jsonl");
        save_embeddings(&[("a".into(), vec![3.0, 4.0]), ("b".into(), vec![0.0, 2.0])], &path).unwrap();
        let t = load_embeddings(&path).unwrap();
        assert_eq!(t.get("a").unwrap(), &[0.6, 0.8]);
        assert_eq!(t.get("b").unwrap(), &[0.0, 1.0]);

        let gpath = dir.path().join("groups.json");
        std::fs::write(&gpath, r#"{"head": ["a"], "tail": ["b"]}"#).unwrap();
        let g = load_category_groups(&gpath).unwrap();
        assert_eq!(g.head, vec!["a"]);
        assert!(g.common.is_empty());
    }
}
