//! Evaluation metrics for captions, answers, grounding and detection.

mod caption;
mod detection;
mod eval;
mod grounding;

pub use caption::{
    bleu, caption_scores, cider_d, cider_d_per_image, meteor_lite, meteor_single, rouge_l, rouge_l_single,
    tokenize_caption, CaptionEvalSet, CaptionItem, CaptionScores,
};
pub use detection::{
    attach_external_scores, average_precision_from_flags, detection_ap, filter_by_score, DetectionPrediction,
    GroundTruthBox, ScoreTable,
};
pub use eval::{
    eval_caption, eval_classification, eval_detection, eval_grounding, eval_vqa, parse_detection_predictions,
    parse_text_predictions, DetectionEvalOptions, DetectionPredictionLine, TextPrediction,
};
pub use grounding::{grounding_metrics, GroundingScores, PR_THRESHOLDS};

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::geometry::GeometryError;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("{0} is empty")]
    Empty(&'static str),
    #[error("image {0} has no references")]
    NoReferences(String),
    #[error("BLEU order must be 1..=4, got {0}")]
    BleuOrder(usize),
    #[error("{predictions} predictions for {truths} ground truths")]
    LengthMismatch { predictions: usize, truths: usize },
    #[error("no ground-truth boxes")]
    NoGroundTruth,
    #[error("IoU threshold {0} outside [0, 1]")]
    Threshold(f64),
    #[error("no score for prediction {index} of {id}")]
    MissingScore { id: String, index: usize },
    #[error("id mismatch: {0}")]
    IdMismatch(String),
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("non-finite metric {0}")]
    NonFinite(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnswerMode {
    Vqa,
    Classification,
}

fn normalize_answer(s: &str) -> String {
    let t = s.trim().to_lowercase();
    t.strip_suffix('.').unwrap_or(&t).trim().to_owned()
}

/// Category names often appear as `storage_tank` or `storage-tank` in
/// reference lists; treat separators as spaces.
fn category_form(s: &str) -> String {
    normalize_answer(s)
        .replace(['_', '-'], " ")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn answers_match(prediction: &str, truth: &str, mode: AnswerMode) -> bool {
    normalize_answer(prediction) == normalize_answer(truth)
        || (mode == AnswerMode::Classification && category_form(prediction) == category_form(truth))
}

/// Exact-match accuracy after normalization (lowercase, trim, one trailing
/// period removed).
pub fn answer_accuracy<P: AsRef<str>, T: AsRef<str>>(
    predictions: &[P],
    truths: &[T],
    mode: AnswerMode,
) -> Result<f64, MetricError> {
    if predictions.len() != truths.len() {
        return Err(MetricError::LengthMismatch { predictions: predictions.len(), truths: truths.len() });
    }
    if truths.is_empty() {
        return Err(MetricError::Empty("answer pairs"));
    }
    let hits = predictions
        .iter()
        .zip(truths)
        .filter(|(p, t)| answers_match(p.as_ref(), t.as_ref(), mode))
        .count();
    Ok(hits as f64 / truths.len() as f64)
}

/// Metric name to value, plus counts. Serialized as a two-column TSV.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EvalReport {
    pub task: String,
    pub seed: u64,
    pub values: BTreeMap<String, f64>,
    pub counts: BTreeMap<String, usize>,
}

impl EvalReport {
    pub fn new(task: &str) -> Self {
        Self { task: task.to_owned(), ..Default::default() }
    }

    pub fn set(&mut self, key: impl Into<String>, v: f64) {
        self.values.insert(key.into(), v);
    }

    pub fn count(&mut self, key: impl Into<String>, n: usize) {
        self.counts.insert(key.into(), n);
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.values.get(key).copied()
    }

    pub fn check_finite(&self) -> Result<(), MetricError> {
        match self.values.iter().find(|(_, v)| !v.is_finite()) {
            Some((k, _)) => Err(MetricError::NonFinite(k.clone())),
            None => Ok(()),
        }
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("metric\tvalue\n");
        let _ = writeln!(s, "task\t{}", self.task);
        let _ = writeln!(s, "seed\t{}", self.seed);
        for (k, v) in &self.values {
            let _ = writeln!(s, "{k}\t{v}");
        }
        for (k, v) in &self.counts {
            let _ = writeln!(s, "{k}\t{v}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn answer_normalization() {
        assert!(answers_match("Airport.", "airport", AnswerMode::Vqa));
        assert!(!answers_match("harbour", "harbor", AnswerMode::Vqa));
        assert!(answers_match("storage tank", "storage_tank", AnswerMode::Classification));
        assert!(!answers_match("storage tank", "storage_tank", AnswerMode::Vqa));
        let preds = ["a", "b", "c", "d", "e", "f", "g", "x", "y", "z"];
        let truths = ["a", "b", "c", "d", "e", "f", "g", "h", "i", "j"];
        assert_eq!(answer_accuracy(&preds, &truths, AnswerMode::Vqa).unwrap(), 0.7);
        assert!(answer_accuracy(&preds[..3], &truths, AnswerMode::Vqa).is_err());
    }

    #[test]
    fn report_tsv() {
        let mut r = EvalReport::new("vqa");
        r.seed = 7;
        r.set("accuracy", 0.5);
        r.count("pairs", 2);
        assert_eq!(r.to_tsv(), "metric\tvalue\ntask\tvqa\nseed\t7\naccuracy\t0.5\npairs\t2\n");
        r.set("bad", f64::NAN);
        assert!(r.check_finite().is_err());
    }
}
