//! Conversion of [`SourceSample`]s into multi-turn instruction records.
//!
//! Prompt wording for classification, captioning, VQA and (non-referring)
//! detection is fixed verbatim. The referring-detection, grounding and
//! region-caption prompts are our own wording built on the same pattern.

mod box_text;
mod corpus;

pub use box_text::{
    format_detection_answer, parse_box_text, parse_detection_answer, serialize_box_text, BoxTextError,
};
pub use corpus::{
    compile_corpus, load_manifest, records_to_jsonl, CompileOptions, CompileOutput, CorpusError, CorpusStats,
    Manifest, SourceFormat, SourceSpec, SourceTask, StatsRow,
};

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{hbb_from_obb, normalize_box, BoundsMode, BoxShape, GeometryError, ImageSize};
use crate::ingest::{Modality, Payload, SourceSample};

pub const CLASSIFICATION_PROMPT: &str =
    "What is the category of this RS image? Answering the question using a single word or phrase. Reference categories include ";
pub const CAPTION_PROMPT: &str = "Please provide a one-sentence caption for the provided RS image in detail.";
pub const VQA_SUFFIX: &str = "Answering the question using a single word or phrase.";
pub const LOCATE_INSTRUCTION: &str = "Please output the horizontal bounding box coordinates of the target described above.";
pub const DESCRIBE_PROMPT: &str = "Please provide a description of the target region";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classification,
    Caption,
    Vqa,
    DetectionHbb,
    DetectionObb,
    GroundingLocate,
    RegionCaption,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Classification => "classification",
            Task::Caption => "caption",
            Task::Vqa => "vqa",
            Task::DetectionHbb => "detection_hbb",
            Task::DetectionObb => "detection_obb",
            Task::GroundingLocate => "grounding_locate",
            Task::RegionCaption => "region_caption",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Human,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    #[serde(rename = "from")]
    pub role: Role,
    #[serde(rename = "value")]
    pub text: String,
}

impl Turn {
    fn human(text: impl Into<String>) -> Self {
        Self { role: Role::Human, text: text.into() }
    }

    fn assistant(text: impl Into<String>) -> Self {
        Self { role: Role::Assistant, text: text.into() }
    }
}

/// One conversation bound to an image. Turns alternate human/assistant,
/// starting with human.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub id: String,
    #[serde(rename = "image")]
    pub image_path: String,
    pub modality: Modality,
    pub task: Task,
    #[serde(rename = "conversations")]
    pub turns: Vec<Turn>,
}

impl InstructionRecord {
    fn new(sample: &SourceSample, task: Task, rounds: Vec<(String, String)>) -> Self {
        let turns = rounds
            .into_iter()
            .flat_map(|(h, a)| [Turn::human(h), Turn::assistant(a)])
            .collect();
        Self {
            id: sample.id.clone(),
            image_path: sample.image_path.clone(),
            modality: sample.modality,
            task,
            turns,
        }
    }

    /// `(human, assistant)` pairs.
    pub fn rounds(&self) -> impl Iterator<Item = (&str, &str)> {
        self.turns.chunks(2).map(|p| (p[0].text.as_str(), p[1].text.as_str()))
    }

    pub fn round_count(&self) -> usize {
        self.turns.len() / 2
    }

    /// Alternation check: non-empty, even length, human first.
    pub fn is_well_formed(&self) -> bool {
        !self.turns.is_empty()
            && self.turns.len().is_multiple_of(2)
            && self.turns.chunks(2).all(|p| p[0].role == Role::Human && p[1].role == Role::Assistant)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoxFormat {
    Hbb,
    Obb,
}

impl BoxFormat {
    fn word(self) -> &'static str {
        match self {
            BoxFormat::Hbb => "horizontal",
            BoxFormat::Obb => "oriented",
        }
    }

    pub fn task(self) -> Task {
        match self {
            BoxFormat::Hbb => Task::DetectionHbb,
            BoxFormat::Obb => Task::DetectionObb,
        }
    }
}

impl FromStr for BoxFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "hbb" => Ok(BoxFormat::Hbb),
            "obb" => Ok(BoxFormat::Obb),
            other => Err(format!("unknown box format \"{other}\" (expected hbb or obb)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroundingDirection {
    Locate,
    Describe,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CompileError {
    #[error("expected a {expected} payload, found {found}")]
    WrongPayload { expected: &'static str, found: &'static str },
    #[error("category \"{0}\" is not in the reference category list")]
    CategoryNotInReferences(String),
    #[error("no captions left after cleaning")]
    NoCaptions,
    #[error("empty question at pair {0}")]
    EmptyQuestion(usize),
    #[error("no question/answer pairs")]
    NoQaPairs,
    #[error("no detection instances")]
    NoInstances,
    #[error("oriented boxes requested but instance {0} only has a horizontal box")]
    MissingOrientedBox(usize),
    #[error("empty referring expression at entry {0}")]
    EmptyExpression(usize),
    #[error("no grounding entries")]
    NoGroundings,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub fn detection_prompt(format: BoxFormat) -> String {
    format!("Detect all objects shown in the RS image and describe using {} bounding boxes", format.word())
}

pub fn referring_detection_prompt(category: &str, format: BoxFormat) -> String {
    format!("Detect all the {category} shown in the RS image and describe using {} bounding boxes", format.word())
}

pub fn classification_prompt(references: &[String]) -> String {
    format!("{CLASSIFICATION_PROMPT}{}", references.join(", "))
}

/// Appends the single-word/phrase instruction unless already present.
pub fn vqa_prompt(question: &str) -> String {
    let q = question.trim();
    if q.ends_with(VQA_SUFFIX) {
        q.to_owned()
    } else {
        format!("{q} {VQA_SUFFIX}")
    }
}

pub fn locate_prompt(expression: &str) -> String {
    format!("{} {LOCATE_INSTRUCTION}", expression.trim())
}

pub fn describe_prompt(box_text: &str) -> String {
    format!("{DESCRIBE_PROMPT} {box_text}.")
}

fn wrong(expected: &'static str, p: &Payload) -> CompileError {
    CompileError::WrongPayload { expected, found: p.kind() }
}

pub fn compile_classification(sample: &SourceSample) -> Result<InstructionRecord, CompileError> {
    let Payload::Classification { category, reference_categories } = &sample.payload else {
        return Err(wrong("classification", &sample.payload));
    };
    if !reference_categories.iter().any(|c| c == category) {
        return Err(CompileError::CategoryNotInReferences(category.clone()));
    }
    let rounds = vec![(classification_prompt(reference_categories), category.clone())];
    Ok(InstructionRecord::new(sample, Task::Classification, rounds))
}

/// One round per distinct caption; the first occurrence of a repeated caption
/// is kept.
pub fn compile_caption(sample: &SourceSample) -> Result<InstructionRecord, CompileError> {
    let Payload::Captions(captions) = &sample.payload else {
        return Err(wrong("captions", &sample.payload));
    };
    let mut seen = HashSet::new();
    let rounds: Vec<(String, String)> = captions
        .iter()
        .map(|c| c.trim())
        .filter(|c| !c.is_empty() && seen.insert(*c))
        .map(|c| (CAPTION_PROMPT.to_owned(), c.to_owned()))
        .collect();
    if rounds.is_empty() {
        return Err(CompileError::NoCaptions);
    }
    Ok(InstructionRecord::new(sample, Task::Caption, rounds))
}

pub fn compile_vqa(sample: &SourceSample) -> Result<InstructionRecord, CompileError> {
    let Payload::VqaPairs(pairs) = &sample.payload else {
        return Err(wrong("vqa", &sample.payload));
    };
    if pairs.is_empty() {
        return Err(CompileError::NoQaPairs);
    }
    let mut rounds = Vec::with_capacity(pairs.len());
    for (i, p) in pairs.iter().enumerate() {
        if p.question.trim().is_empty() {
            return Err(CompileError::EmptyQuestion(i));
        }
        rounds.push((vqa_prompt(&p.question), p.answer.clone()));
    }
    Ok(InstructionRecord::new(sample, Task::Vqa, rounds))
}

fn box_string(shape: &BoxShape, size: ImageSize, bounds: BoundsMode) -> Result<String, CompileError> {
    Ok(serialize_box_text(&normalize_box(shape, size, bounds)?))
}

/// First round lists every instance; with `referring`, one extra round per
/// distinct category (in order of first appearance) lists only that
/// category's boxes.
pub fn compile_detection(
    sample: &SourceSample,
    format: BoxFormat,
    referring: bool,
    bounds: BoundsMode,
) -> Result<InstructionRecord, CompileError> {
    let Payload::Detection(instances) = &sample.payload else {
        return Err(wrong("detection", &sample.payload));
    };
    if instances.is_empty() {
        return Err(CompileError::NoInstances);
    }
    let mut entries = Vec::with_capacity(instances.len());
    for (i, inst) in instances.iter().enumerate() {
        let shape = match (format, &inst.shape) {
            (BoxFormat::Hbb, BoxShape::Oriented(q)) => BoxShape::Horizontal(hbb_from_obb(q)),
            (BoxFormat::Hbb, s @ BoxShape::Horizontal(_)) => *s,
            (BoxFormat::Obb, s @ BoxShape::Oriented(_)) => *s,
            (BoxFormat::Obb, BoxShape::Horizontal(_)) => return Err(CompileError::MissingOrientedBox(i)),
        };
        entries.push((inst.category.as_str(), box_string(&shape, sample.image_size, bounds)?));
    }
    let join = |filter: Option<&str>| {
        entries
            .iter()
            .filter(|(c, _)| filter.is_none_or(|f| f == *c))
            .map(|(c, b)| format!("{c} {b}"))
            .collect::<Vec<_>>()
            .join("; ")
    };
    let mut rounds = vec![(detection_prompt(format), join(None))];
    if referring {
        let mut cats: Vec<&str> = Vec::new();
        for (c, _) in &entries {
            if !cats.contains(c) {
                cats.push(c);
            }
        }
        for c in cats {
            rounds.push((referring_detection_prompt(c, format), join(Some(c))));
        }
    }
    Ok(InstructionRecord::new(sample, format.task(), rounds))
}

pub fn compile_grounding(
    sample: &SourceSample,
    direction: GroundingDirection,
    bounds: BoundsMode,
) -> Result<InstructionRecord, CompileError> {
    let Payload::Grounding(entries) = &sample.payload else {
        return Err(wrong("grounding", &sample.payload));
    };
    if entries.is_empty() {
        return Err(CompileError::NoGroundings);
    }
    let mut rounds = Vec::with_capacity(entries.len());
    for (i, e) in entries.iter().enumerate() {
        let expr = e.expression.trim();
        if expr.is_empty() {
            return Err(CompileError::EmptyExpression(i));
        }
        let b = box_string(&BoxShape::Horizontal(e.bbox), sample.image_size, bounds)?;
        rounds.push(match direction {
            GroundingDirection::Locate => (locate_prompt(expr), b),
            GroundingDirection::Describe => (describe_prompt(&b), expr.to_owned()),
        });
    }
    let task = match direction {
        GroundingDirection::Locate => Task::GroundingLocate,
        GroundingDirection::Describe => Task::RegionCaption,
    };
    Ok(InstructionRecord::new(sample, task, rounds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{HorizontalBox, OrientedBox};
    use crate::ingest::{DetectionInstance, GroundingEntry, QaPair};

    fn sample(payload: Payload) -> SourceSample {
        SourceSample {
            id: "s1".into(),
            image_path: "img/s1.png".into(),
            modality: Modality::Optical,
            image_size: ImageSize::new(4, 4).unwrap(),
            payload,
        }
    }

    fn assistant_texts(r: &InstructionRecord) -> Vec<&str> {
        r.rounds().map(|(_, a)| a).collect()
    }

    #[test]
    fn classification_template() {
        let s = sample(Payload::Classification {
            category: "airport".into(),
            reference_categories: vec!["airport".into(), "beach".into()],
        });
        let r = compile_classification(&s).unwrap();
        assert_eq!(r.turns.len(), 2);
        assert_eq!(r.turns[1].text, "airport");
        assert_eq!(
            r.turns[0].text,
            "What is the category of this RS image? Answering the question using a single word or phrase. Reference categories include airport, beach"
        );

        let single = sample(Payload::Classification { category: "beach".into(), reference_categories: vec!["beach".into()] });
        assert!(compile_classification(&single).unwrap().turns[0].text.ends_with("include beach"));

        let missing = sample(Payload::Classification { category: "port".into(), reference_categories: vec!["beach".into()] });
        assert_eq!(compile_classification(&missing), Err(CompileError::CategoryNotInReferences("port".into())));
    }

    #[test]
    fn caption_dedup() {
        let caps = |v: &[&str]| Payload::Captions(v.iter().map(|s| s.to_string()).collect());
        let r = compile_caption(&sample(caps(&["a", "b", "c", "d", "e"]))).unwrap();
        assert_eq!(r.round_count(), 5);
        let r = compile_caption(&sample(caps(&["a", "a", "b"]))).unwrap();
        assert_eq!(assistant_texts(&r), ["a", "b"]);
        assert!(r.rounds().all(|(h, _)| h == CAPTION_PROMPT));
        assert_eq!(compile_caption(&sample(caps(&["x"]))).unwrap().round_count(), 1);
        assert_eq!(compile_caption(&sample(caps(&[" ", ""]))), Err(CompileError::NoCaptions));
    }

    #[test]
    fn vqa_suffix_once() {
        let pairs = vec![
            QaPair { question: "Is there a bridge?".into(), answer: "yes".into() },
            QaPair { question: format!("How many cars? {VQA_SUFFIX}"), answer: "4".into() },
            QaPair { question: "Is it rural?".into(), answer: "no".into() },
        ];
        let r = compile_vqa(&sample(Payload::VqaPairs(pairs))).unwrap();
        assert_eq!(r.round_count(), 3);
        for (h, _) in r.rounds() {
            assert!(h.ends_with(VQA_SUFFIX));
            assert_eq!(h.matches(VQA_SUFFIX).count(), 1);
        }
        assert_eq!(assistant_texts(&r)[1], "4");
        let empty_q = vec![QaPair { question: " ".into(), answer: "x".into() }];
        assert_eq!(compile_vqa(&sample(Payload::VqaPairs(empty_q))), Err(CompileError::EmptyQuestion(0)));
    }

    fn obb(v: [f64; 8]) -> BoxShape {
        BoxShape::Oriented(OrientedBox::from_slice(&v).unwrap())
    }

    #[test]
    fn obb_detection_box_string() {
        let s = sample(Payload::Detection(vec![DetectionInstance {
            category: "plane".into(),
            shape: obb([1.0, 1.0, 3.0, 1.0, 3.0, 3.0, 1.0, 3.0]),
            difficult: false,
        }]));
        let r = compile_detection(&s, BoxFormat::Obb, false, BoundsMode::Strict).unwrap();
        assert_eq!(r.task, Task::DetectionObb);
        assert_eq!(r.turns[0].text, "Detect all objects shown in the RS image and describe using oriented bounding boxes");
        assert_eq!(r.turns[1].text, "plane [0.2500,0.2500,0.7500,0.2500,0.7500,0.7500,0.2500,0.7500]");
    }

    #[test]
    fn referring_rounds_per_category() {
        let mk = |c: &str, x: f64| DetectionInstance {
            category: c.into(),
            shape: BoxShape::Horizontal(HorizontalBox::new(x, 0.0, x + 1.0, 1.0).unwrap()),
            difficult: false,
        };
        let s = sample(Payload::Detection(vec![mk("plane", 0.0), mk("ship", 1.0), mk("plane", 2.0)]));
        let r = compile_detection(&s, BoxFormat::Hbb, true, BoundsMode::Strict).unwrap();
        assert_eq!(r.round_count(), 3);
        let a = assistant_texts(&r);
        assert_eq!(a[0].split("; ").count(), 3);
        assert!(r.turns[2].text.starts_with("Detect all the plane shown"));
        assert_eq!(a[1].split("; ").count(), 2);
        assert!(a[2].starts_with("ship ["));
        assert_eq!(
            compile_detection(&s, BoxFormat::Obb, false, BoundsMode::Strict),
            Err(CompileError::MissingOrientedBox(0))
        );
    }

    #[test]
    fn hbb_from_obb_source() {
        let s = sample(Payload::Detection(vec![DetectionInstance {
            category: "ship".into(),
            shape: obb([1.0, 0.0, 2.0, 1.0, 1.0, 2.0, 0.0, 1.0]),
            difficult: false,
        }]));
        let r = compile_detection(&s, BoxFormat::Hbb, false, BoundsMode::Strict).unwrap();
        assert_eq!(r.turns[1].text, "ship [0.0000,0.0000,0.5000,0.5000]");
    }

    #[test]
    fn grounding_directions() {
        let s = sample(Payload::Grounding(vec![
            GroundingEntry { expression: "the white storage tank".into(), bbox: HorizontalBox::new(0.0, 0.0, 2.0, 2.0).unwrap() },
            GroundingEntry { expression: "the bridge".into(), bbox: HorizontalBox::new(1.0, 1.0, 4.0, 3.0).unwrap() },
        ]));
        let loc = compile_grounding(&s, GroundingDirection::Locate, BoundsMode::Strict).unwrap();
        assert_eq!(loc.task, Task::GroundingLocate);
        assert_eq!(loc.round_count(), 2);
        assert_eq!(loc.turns[1].text, "[0.0000,0.0000,0.5000,0.5000]");
        assert!(loc.turns[0].text.starts_with("the white storage tank"));
        let desc = compile_grounding(&s, GroundingDirection::Describe, BoundsMode::Strict).unwrap();
        assert_eq!(desc.task, Task::RegionCaption);
        assert_eq!(desc.turns[1].text, "the white storage tank");
        assert!(desc.turns[0].text.contains("[0.0000,0.0000,0.5000,0.5000]"));
    }

    #[test]
    fn record_json_shape() {
        let s = sample(Payload::Captions(vec!["a lake".into()]));
        let r = compile_caption(&s).unwrap();
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(
            json,
            format!(
                r#"{{"id":"s1","image":"img/s1.png","modality":"optical","task":"caption","conversations":[{{"from":"human","value":"{CAPTION_PROMPT}"}},{{"from":"assistant","value":"a lake"}}]}}"#
            )
        );
    }
}
