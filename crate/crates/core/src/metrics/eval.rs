//! Scoring prediction files against compiled ground-truth records.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{
    answer_accuracy, attach_external_scores, caption_scores, detection_ap, filter_by_score, grounding_metrics,
    AnswerMode, CaptionEvalSet, DetectionPrediction, EvalReport, GroundTruthBox, MetricError, ScoreTable,
};
use crate::compiler::{parse_box_text, parse_detection_answer, BoxFormat, InstructionRecord, Task};
use crate::geometry::{BoxShape, HorizontalBox, NormalizedBox};

/// One line of a text prediction file: `{"id", "turn"?, "text"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextPrediction {
    pub id: String,
    #[serde(default)]
    pub turn: usize,
    pub text: String,
}

/// One line of a detection prediction file. `scores[i]` is the confidence of
/// the i-th box in `text`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionPredictionLine {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
}

fn parse_jsonl<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>, MetricError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| MetricError::Parse { line: n + 1, message: e.to_string() }))
        .collect()
}

pub fn parse_text_predictions(text: &str) -> Result<Vec<TextPrediction>, MetricError> {
    parse_jsonl(text)
}

pub fn parse_detection_predictions(text: &str) -> Result<Vec<DetectionPredictionLine>, MetricError> {
    parse_jsonl(text)
}

fn records_of(records: &[InstructionRecord], task: Task) -> Result<Vec<&InstructionRecord>, MetricError> {
    let mut seen = HashSet::new();
    let out: Vec<&InstructionRecord> = records.iter().filter(|r| r.task == task).collect();
    for r in &out {
        if !seen.insert(r.id.as_str()) {
            return Err(MetricError::DuplicateId(r.id.clone()));
        }
    }
    if out.is_empty() {
        return Err(MetricError::Empty("ground-truth records"));
    }
    Ok(out)
}

/// Pairs every ground-truth key with exactly one prediction. The first
/// prediction without ground truth, or ground truth without prediction, is
/// reported.
fn align<'a, K, P>(truth_keys: &[K], preds: &'a [P], key: impl Fn(&P) -> K, show: impl Fn(&K) -> String) -> Result<Vec<&'a P>, MetricError>
where
    K: std::hash::Hash + Eq + Clone,
{
    let truth: HashSet<&K> = truth_keys.iter().collect();
    let mut by_key: HashMap<K, &P> = HashMap::new();
    for p in preds {
        let k = key(p);
        if !truth.contains(&k) {
            return Err(MetricError::IdMismatch(show(&k)));
        }
        if by_key.insert(k.clone(), p).is_some() {
            return Err(MetricError::DuplicateId(show(&k)));
        }
    }
    truth_keys
        .iter()
        .map(|k| by_key.get(k).copied().ok_or_else(|| MetricError::IdMismatch(show(k))))
        .collect()
}

fn assistant_texts(r: &InstructionRecord) -> Vec<&str> {
    r.rounds().map(|(_, a)| a).collect()
}

/// One candidate per caption record (its `turn` is ignored); all assistant
/// turns of the record are the references.
pub fn eval_caption(records: &[InstructionRecord], preds: &[TextPrediction]) -> Result<EvalReport, MetricError> {
    let gt = records_of(records, Task::Caption)?;
    let keys: Vec<String> = gt.iter().map(|r| r.id.clone()).collect();
    let aligned = align(&keys, preds, |p| p.id.clone(), Clone::clone)?;
    let set = CaptionEvalSet::from_texts(
        gt.iter()
            .zip(&aligned)
            .map(|(r, p)| (r.id.as_str(), p.text.as_str(), assistant_texts(r))),
    )?;
    let s = caption_scores(&set);
    let mut rep = EvalReport::new("caption");
    for (n, v) in s.bleu.iter().enumerate() {
        rep.set(format!("BLEU-{}", n + 1), *v);
    }
    rep.set("ROUGE-L", s.rouge_l);
    rep.set("METEOR", s.meteor);
    rep.set("CIDEr-D", s.cider_d);
    rep.set("CIDEr-D_x100", s.cider_d * 100.0);
    rep.count("images", set.len());
    rep.check_finite()?;
    Ok(rep)
}

fn eval_answers(
    records: &[InstructionRecord],
    preds: &[TextPrediction],
    task: Task,
    mode: AnswerMode,
) -> Result<EvalReport, MetricError> {
    let gt = records_of(records, task)?;
    let mut keys = Vec::new();
    let mut truths = Vec::new();
    for r in &gt {
        for (turn, a) in assistant_texts(r).into_iter().enumerate() {
            keys.push((r.id.clone(), turn));
            truths.push(a);
        }
    }
    let aligned = align(&keys, preds, |p| (p.id.clone(), p.turn), |(id, t)| format!("{id} (turn {t})"))?;
    let texts: Vec<&str> = aligned.iter().map(|p| p.text.as_str()).collect();
    let mut rep = EvalReport::new(task.as_str());
    rep.set("accuracy", answer_accuracy(&texts, &truths, mode)?);
    rep.count("pairs", truths.len());
    Ok(rep)
}

pub fn eval_vqa(records: &[InstructionRecord], preds: &[TextPrediction]) -> Result<EvalReport, MetricError> {
    eval_answers(records, preds, Task::Vqa, AnswerMode::Vqa)
}

pub fn eval_classification(records: &[InstructionRecord], preds: &[TextPrediction]) -> Result<EvalReport, MetricError> {
    eval_answers(records, preds, Task::Classification, AnswerMode::Classification)
}

/// First bracketed span of `text`, parsed as a horizontal box.
fn extract_hbb(text: &str) -> Option<HorizontalBox> {
    let start = text.find('[')?;
    let end = start + text[start..].find(']')?;
    match parse_box_text(&text[start..=end]).ok()? {
        NormalizedBox::Horizontal(v) => HorizontalBox::from_slice(&v).ok(),
        NormalizedBox::Oriented(_) => None,
    }
}

/// Grounding is scored in normalized image coordinates.
pub fn eval_grounding(records: &[InstructionRecord], preds: &[TextPrediction]) -> Result<EvalReport, MetricError> {
    let gt = records_of(records, Task::GroundingLocate)?;
    let mut keys = Vec::new();
    let mut truths = Vec::new();
    for r in &gt {
        for (turn, a) in assistant_texts(r).into_iter().enumerate() {
            let b = extract_hbb(a).ok_or_else(|| MetricError::Parse { line: 0, message: format!("bad truth box in {}", r.id) })?;
            keys.push((r.id.clone(), turn));
            truths.push(b);
        }
    }
    let aligned = align(&keys, preds, |p| (p.id.clone(), p.turn), |(id, t)| format!("{id} (turn {t})"))?;
    let pairs: Vec<(Option<HorizontalBox>, HorizontalBox)> =
        aligned.iter().zip(&truths).map(|(p, t)| (extract_hbb(&p.text), *t)).collect();
    let g = grounding_metrics(&pairs)?;
    let mut rep = EvalReport::new("grounding");
    for (t, v) in &g.precision_at {
        rep.set(format!("Pr@{t:.1}"), *v);
    }
    rep.set("mIoU", g.miou);
    rep.set("cIoU", g.ciou);
    rep.count("pairs", g.pairs);
    rep.count("unparseable", g.unparseable);
    Ok(rep)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionEvalOptions {
    pub format: BoxFormat,
    pub strict: bool,
    /// Extra threshold reported next to AP@40 and AP@50.
    pub iou_threshold: Option<f64>,
    pub scores: Option<ScoreTable>,
    pub score_threshold: Option<f64>,
}

impl Default for DetectionEvalOptions {
    fn default() -> Self {
        Self { format: BoxFormat::Hbb, strict: true, iou_threshold: None, scores: None, score_threshold: None }
    }
}

fn shape_of(b: &NormalizedBox) -> Option<BoxShape> {
    BoxShape::from_values(b.values()).ok()
}

/// Ground truth comes from the first round of each detection record. Boxes
/// in predictions that fail to parse are counted as `malformed` and dropped.
pub fn eval_detection(
    records: &[InstructionRecord],
    lines: &[DetectionPredictionLine],
    opts: &DetectionEvalOptions,
) -> Result<EvalReport, MetricError> {
    let gt_records = records_of(records, opts.format.task())?;
    let mut gts = Vec::new();
    for r in &gt_records {
        let (items, bad) = parse_detection_answer(r.turns[1].text.as_str());
        if bad > 0 {
            return Err(MetricError::Parse { line: 0, message: format!("bad truth box in {}", r.id) });
        }
        for (category, b) in items {
            let shape = shape_of(&b).ok_or_else(|| MetricError::Parse { line: 0, message: format!("bad truth box in {}", r.id) })?;
            gts.push(GroundTruthBox { image_id: r.id.clone(), category, shape });
        }
    }
    let keys: Vec<String> = gt_records.iter().map(|r| r.id.clone()).collect();
    let aligned = align(&keys, lines, |l| l.id.clone(), Clone::clone)?;

    let mut preds = Vec::new();
    let mut malformed = 0;
    for line in aligned {
        let (items, bad) = parse_detection_answer(&line.text);
        malformed += bad;
        for (index, (category, b)) in items.into_iter().enumerate() {
            let Some(shape) = shape_of(&b) else {
                malformed += 1;
                continue;
            };
            let score = match line.scores.as_ref().and_then(|s| s.get(index)) {
                Some(s) => Some(*s),
                None if opts.scores.is_some() => None,
                None if opts.strict => return Err(MetricError::MissingScore { id: line.id.clone(), index }),
                None => Some(0.0),
            };
            preds.push(DetectionPrediction { image_id: line.id.clone(), index, category, shape, score });
        }
    }
    if let Some(table) = &opts.scores {
        attach_external_scores(&mut preds, table, opts.strict)?;
    }
    let total_preds = preds.len();
    if let Some(tau) = opts.score_threshold {
        preds = filter_by_score(&preds, tau);
    }

    let mut rep = EvalReport::new(opts.format.task().as_str());
    let mut thresholds = vec![0.4, 0.5];
    if let Some(t) = opts.iou_threshold {
        if !thresholds.contains(&t) {
            thresholds.push(t);
        }
    }
    for t in thresholds {
        rep.set(format!("AP@{}", (t * 100.0).round()), detection_ap(&preds, &gts, t, opts.format)?);
    }
    rep.count("images", gt_records.len());
    rep.count("instances", gts.len());
    rep.count("predictions", total_preds);
    rep.count("kept_predictions", preds.len());
    rep.count("malformed", malformed);
    Ok(rep)
}
