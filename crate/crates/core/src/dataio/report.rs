//! Evaluation reports as JSON or TSV.

use std::fmt::Write as _;
use std::io;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::DataError;
use crate::evaluation::{ApResult, OeResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Tsv,
}

impl FromStr for ReportFormat {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(Self::Json),
            "tsv" => Ok(Self::Tsv),
            _ => Err(DataError::UnknownFormat(s.to_string())),
        }
    }
}

/// One matched prediction/ground-truth pair with its labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchRow {
    pub pred: usize,
    pub gt: usize,
    pub pred_label: String,
    pub gt_label: String,
    pub iou: f64,
    pub similarity: f64,
    pub confidence: f64,
    pub contribution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub num_predictions: usize,
    pub num_ground_truth: usize,
    pub fixed_confidence: bool,
    pub oe: f64,
    pub matches: Vec<MatchRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ap: Option<ApResult>,
}

impl Report {
    /// Builds match rows from an OE result.
    pub fn new(
        oe: &OeResult,
        pred_labels: &[&str],
        pred_confidences: &[f64],
        gt_labels: &[&str],
        fixed_confidence: bool,
        ap: Option<ApResult>,
    ) -> Self {
        let matches = oe
            .pairs
            .iter()
            .map(|p| MatchRow {
                pred: p.pred,
                gt: p.gt,
                pred_label: pred_labels[p.pred].to_string(),
                gt_label: gt_labels[p.gt].to_string(),
                iou: p.iou,
                similarity: p.similarity,
                confidence: pred_confidences[p.pred],
                contribution: p.contribution,
            })
            .collect();
        Self {
            num_predictions: pred_labels.len(),
            num_ground_truth: oe.num_gt,
            fixed_confidence,
            oe: oe.score,
            matches,
            ap,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// `key<TAB>value` summary lines, then a header and one row per match.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k}\t{v}");
        };
        kv("num_predictions", self.num_predictions.to_string());
        kv("num_ground_truth", self.num_ground_truth.to_string());
        kv("fixed_confidence", self.fixed_confidence.to_string());
        kv("oe", format!("{:?}", self.oe));
        if let Some(ap) = &self.ap {
            for (k, v) in [
                ("ap", ap.ap),
                ("ap50", ap.ap50),
                ("ap25", ap.ap25),
                ("ar", ap.ar),
                ("rc50", ap.rc50),
                ("rc25", ap.rc25),
            ] {
                kv(k, format!("{v:?}"));
            }
            if let Some(g) = &ap.groups {
                for (k, v) in [("ap_head", g.head), ("ap_common", g.common), ("ap_tail", g.tail)] {
                    kv(k, v.map_or_else(|| "nan".to_string(), |v| format!("{v:?}")));
                }
            }
            for (label, c) in &ap.per_category {
                kv(&format!("ap[{}]", escape(label)), format!("{:?}", c.ap));
            }
        }
        out.push_str("pred\tgt\tpred_label\tgt_label\tiou\tsimilarity\tconfidence\tcontribution\n");
        for m in &self.matches {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{:?}\t{:?}\t{:?}\t{:?}",
                m.pred,
                m.gt,
                escape(&m.pred_label),
                escape(&m.gt_label),
                m.iou,
                m.similarity,
                m.confidence,
                m.contribution
            );
        }
        out
    }

    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Json => {
                let mut s = self.to_json();
                s.push('\n');
                s
            }
            ReportFormat::Tsv => self.to_tsv(),
        }
    }
}

/// Keeps labels on one TSV field.
fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\t', "\\t").replace('\n', "\\n")
}

pub fn write_report(report: &Report, format: ReportFormat, out: &mut impl io::Write) -> io::Result<()> {
    out.write_all(report.render(format).as_bytes())
}
