use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::compiler::BoxFormat;
use crate::geometry::{hbb_iou, obb_iou, BoxShape, OrientedBox};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionPrediction {
    pub image_id: String,
    /// Position of this prediction within its image's output.
    pub index: usize,
    pub category: String,
    pub shape: BoxShape,
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthBox {
    pub image_id: String,
    pub category: String,
    pub shape: BoxShape,
}

fn as_obb(s: &BoxShape) -> Result<OrientedBox, MetricError> {
    match s {
        BoxShape::Oriented(q) => Ok(*q),
        BoxShape::Horizontal(h) => Ok(OrientedBox::from_hbb(h)?),
    }
}

fn iou(a: &BoxShape, b: &BoxShape, kind: BoxFormat) -> Result<f64, MetricError> {
    Ok(match kind {
        BoxFormat::Hbb => hbb_iou(&a.to_hbb(), &b.to_hbb())?,
        BoxFormat::Obb => obb_iou(&as_obb(a)?, &as_obb(b)?),
    })
}

/// All-point interpolated area under the precision envelope.
pub fn average_precision_from_flags(tp_flags: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut recall = Vec::with_capacity(tp_flags.len() + 2);
    let mut precision = Vec::with_capacity(tp_flags.len() + 2);
    recall.push(0.0);
    precision.push(0.0);
    let mut tp = 0usize;
    for (i, &hit) in tp_flags.iter().enumerate() {
        tp += usize::from(hit);
        recall.push(tp as f64 / num_gt as f64);
        precision.push(tp as f64 / (i + 1) as f64);
    }
    recall.push(1.0);
    precision.push(0.0);
    for i in (0..precision.len() - 1).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    (1..recall.len())
        .filter(|&i| recall[i] != recall[i - 1])
        .map(|i| (recall[i] - recall[i - 1]) * precision[i])
        .sum()
}

fn single_category_ap(
    preds: &[&DetectionPrediction],
    gts: &[&GroundTruthBox],
    iou_threshold: f64,
    kind: BoxFormat,
) -> Result<f64, MetricError> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    let scores: Vec<f64> = preds
        .iter()
        .map(|p| {
            p.score
                .filter(|s| s.is_finite())
                .ok_or_else(|| MetricError::MissingScore { id: p.image_id.clone(), index: p.index })
        })
        .collect::<Result<_, _>>()?;
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut by_image: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, g) in gts.iter().enumerate() {
        by_image.entry(g.image_id.as_str()).or_default().push(i);
    }
    let mut matched = vec![false; gts.len()];
    let mut flags = Vec::with_capacity(preds.len());
    for &pi in &order {
        let p = preds[pi];
        let mut best: Option<(usize, f64)> = None;
        for &gi in by_image.get(p.image_id.as_str()).map(Vec::as_slice).unwrap_or(&[]) {
            if matched[gi] {
                continue;
            }
            let v = iou(&p.shape, &gts[gi].shape, kind)?;
            if v >= iou_threshold && best.is_none_or(|(_, b)| v > b) {
                best = Some((gi, v));
            }
        }
        if let Some((gi, _)) = best {
            matched[gi] = true;
        }
        flags.push(best.is_some());
    }
    Ok(average_precision_from_flags(&flags, gts.len()))
}

/// AP at `iou_threshold`. Predictions match only ground truths of the same
/// image and category; with several categories the result is the mean of the
/// per-category APs over categories present in the ground truth.
pub fn detection_ap(
    preds: &[DetectionPrediction],
    gts: &[GroundTruthBox],
    iou_threshold: f64,
    kind: BoxFormat,
) -> Result<f64, MetricError> {
    if gts.is_empty() {
        return Err(MetricError::NoGroundTruth);
    }
    if !(0.0..=1.0).contains(&iou_threshold) {
        return Err(MetricError::Threshold(iou_threshold));
    }
    let categories: BTreeSet<&str> = gts.iter().map(|g| g.category.as_str()).collect();
    let mut total = 0.0;
    for c in &categories {
        let p: Vec<&DetectionPrediction> = preds.iter().filter(|p| p.category == *c).collect();
        let g: Vec<&GroundTruthBox> = gts.iter().filter(|g| g.category == *c).collect();
        total += single_category_ap(&p, &g, iou_threshold, kind)?;
    }
    Ok(total / categories.len() as f64)
}

/// Externally computed confidences keyed by `(image id, prediction index)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreTable {
    scores: HashMap<(String, usize), f64>,
}

impl ScoreTable {
    pub fn insert(&mut self, id: impl Into<String>, index: usize, score: f64) {
        self.scores.insert((id.into(), index), score);
    }

    pub fn get(&self, id: &str, index: usize) -> Option<f64> {
        self.scores.get(&(id.to_owned(), index)).copied()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Tab-separated `id, index, score` lines; a header row starting with
    /// `id` and blank lines are skipped.
    pub fn parse_tsv(text: &str) -> Result<Self, MetricError> {
        let mut t = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (n == 0 && line.starts_with("id")) {
                continue;
            }
            let bad = |msg: &str| MetricError::Parse { line: n + 1, message: msg.to_owned() };
            let f: Vec<&str> = line.split('\t').map(str::trim).collect();
            if f.len() != 3 {
                return Err(bad("expected 3 tab-separated fields"));
            }
            let index = f[1].parse::<usize>().map_err(|_| bad("invalid index"))?;
            let score = f[2].parse::<f64>().ok().filter(|s| s.is_finite()).ok_or_else(|| bad("invalid score"))?;
            t.insert(f[0], index, score);
        }
        Ok(t)
    }
}

/// Overwrites each prediction's score from `table`. A missing entry is an
/// error when `strict`, otherwise the score becomes 0.
pub fn attach_external_scores(
    preds: &mut [DetectionPrediction],
    table: &ScoreTable,
    strict: bool,
) -> Result<(), MetricError> {
    for p in preds.iter_mut() {
        p.score = match table.get(&p.image_id, p.index) {
            Some(s) => Some(s),
            None if strict => return Err(MetricError::MissingScore { id: p.image_id.clone(), index: p.index }),
            None => Some(0.0),
        };
    }
    Ok(())
}

/// Keeps predictions scoring at least `tau`; unscored ones only pass
/// `tau = -inf`.
pub fn filter_by_score(preds: &[DetectionPrediction], tau: f64) -> Vec<DetectionPrediction> {
    preds
        .iter()
        .filter(|p| p.score.unwrap_or(f64::NEG_INFINITY) >= tau)
        .cloned()
        .collect()
}
