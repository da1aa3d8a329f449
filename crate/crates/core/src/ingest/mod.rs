//! Annotation parsers producing [`SourceSample`]s plus diagnostics.
//!
//! Supported inputs:
//!
//! * classification manifest, CSV with header
//!   `id,image_path,modality,width,height,category` (any column order);
//! * canonical line-delimited task files, one JSON object per line with
//!   `id`, `image_path`, `modality`, `size: [w, h]` and one of
//!   `captions`, `qa`, `groundings`, `objects`;
//! * DOTA label text (`x1 y1 ... x4 y4 category difficult`), located through
//!   an index CSV `id,image_path,modality,width,height,label_file`.
//!
//! Data problems never abort parsing. Each rejected row or entry yields a
//! [`Diagnostic`]; only unreadable files surface as [`IngestError`].

mod classification;
mod dota;
mod records;

pub use classification::{parse_classification_manifest, parse_classification_str, write_classification_csv};
pub use dota::{parse_dota_annotation, parse_dota_index, ImageMeta};
pub use records::{
    parse_caption_file, parse_detection_file, parse_grounding_file, parse_task_str, parse_vqa_file,
    write_canonical, write_canonical_line, RecordKind,
};

use std::collections::HashMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BoundsMode, BoxShape, HorizontalBox, ImageSize};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Optical,
    Sar,
    Infrared,
}

impl Modality {
    /// Label used in corpus statistics tables.
    pub fn table_label(self) -> &'static str {
        match self {
            Modality::Optical => "optical",
            Modality::Sar => "SAR",
            Modality::Infrared => "infrared",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Optical => "optical",
            Modality::Sar => "sar",
            Modality::Infrared => "infrared",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "optical" => Ok(Modality::Optical),
            "sar" => Ok(Modality::Sar),
            "infrared" | "ir" => Ok(Modality::Infrared),
            other => Err(format!("unknown modality \"{other}\"")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaPair {
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionInstance {
    pub category: String,
    pub shape: BoxShape,
    pub difficult: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingEntry {
    pub expression: String,
    pub bbox: HorizontalBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Payload {
    Classification { category: String, reference_categories: Vec<String> },
    Captions(Vec<String>),
    VqaPairs(Vec<QaPair>),
    Detection(Vec<DetectionInstance>),
    Grounding(Vec<GroundingEntry>),
}

impl Payload {
    pub fn is_empty(&self) -> bool {
        match self {
            Payload::Classification { category, .. } => category.is_empty(),
            Payload::Captions(v) => v.is_empty(),
            Payload::VqaPairs(v) => v.is_empty(),
            Payload::Detection(v) => v.is_empty(),
            Payload::Grounding(v) => v.is_empty(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Payload::Classification { .. } => "classification",
            Payload::Captions(_) => "captions",
            Payload::VqaPairs(_) => "vqa",
            Payload::Detection(_) => "detection",
            Payload::Grounding(_) => "grounding",
        }
    }
}

/// One annotated image with its task payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSample {
    pub id: String,
    pub image_path: String,
    pub modality: Modality,
    pub image_size: ImageSize,
    pub payload: Payload,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SourceLocation {
    pub file: String,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub sample_id: Option<String>,
    pub severity: Severity,
    pub message: String,
    pub location: Option<SourceLocation>,
}

impl Diagnostic {
    pub fn error(sample_id: Option<&str>, message: impl Into<String>, location: Option<SourceLocation>) -> Self {
        Self {
            sample_id: sample_id.map(str::to_owned),
            severity: Severity::Error,
            message: message.into(),
            location,
        }
    }

    pub fn warning(sample_id: Option<&str>, message: impl Into<String>, location: Option<SourceLocation>) -> Self {
        Self {
            severity: Severity::Warning,
            ..Self::error(sample_id, message, location)
        }
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        write!(f, "{sev}")?;
        if let Some(loc) = &self.location {
            write!(f, " {}:{}", loc.file, loc.line)?;
        }
        if let Some(id) = &self.sample_id {
            write!(f, " [{id}]")?;
        }
        write!(f, ": {}", self.message)
    }
}

/// Sorts diagnostics by (file, line); unlocated ones keep their relative order
/// at the end.
pub fn sort_diagnostics(diags: &mut [Diagnostic]) {
    diags.sort_by(|a, b| match (&a.location, &b.location) {
        (Some(x), Some(y)) => x.cmp(y),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParseOptions {
    pub bounds: BoundsMode,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Parsed {
    pub samples: Vec<SourceSample>,
    pub diagnostics: Vec<Diagnostic>,
}

impl Parsed {
    pub fn extend(&mut self, other: Parsed) {
        self.samples.extend(other.samples);
        self.diagnostics.extend(other.diagnostics);
    }

    pub fn has_errors(&self) -> bool {
        self.diagnostics.iter().any(Diagnostic::is_error)
    }
}

pub(crate) fn read_file(path: &std::path::Path) -> Result<String, IngestError> {
    std::fs::read_to_string(path).map_err(|source| IngestError::Io { path: path.to_owned(), source })
}

fn shape_in_image(shape: &BoxShape, size: ImageSize) -> bool {
    let (w, h) = (size.width as f64, size.height as f64);
    shape
        .values()
        .iter()
        .enumerate()
        .all(|(i, v)| *v >= 0.0 && *v <= if i % 2 == 0 { w } else { h })
}

/// Corpus-wide cleaning checks. Duplicate ids, out-of-image boxes, empty
/// payloads and categories missing from their reference list are errors;
/// repeated captions of one image are warnings (the compiler drops them).
pub fn validate_corpus(samples: &[SourceSample]) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    let mut seen: HashMap<&str, usize> = HashMap::new();
    for (idx, s) in samples.iter().enumerate() {
        let id = Some(s.id.as_str());
        if let Some(first) = seen.insert(&s.id, idx) {
            diags.push(Diagnostic::error(id, format!("duplicate id (first seen at sample {first})"), None));
            seen.insert(&s.id, first);
        }
        if s.payload.is_empty() {
            diags.push(Diagnostic::error(id, format!("empty {} payload", s.payload.kind()), None));
            continue;
        }
        match &s.payload {
            Payload::Captions(caps) => {
                let mut counts: Vec<(&str, usize)> = Vec::new();
                for c in caps {
                    match counts.iter_mut().find(|(k, _)| *k == c.as_str()) {
                        Some((_, n)) => *n += 1,
                        None => counts.push((c.as_str(), 1)),
                    }
                }
                for (c, n) in counts.into_iter().filter(|(_, n)| *n > 1) {
                    diags.push(Diagnostic::warning(id, format!("duplicate caption \"{c}\" ({n} copies)"), None));
                }
            }
            Payload::Classification { category, reference_categories } => {
                if !reference_categories.contains(category) {
                    diags.push(Diagnostic::error(
                        id,
                        format!("category \"{category}\" missing from reference list"),
                        None,
                    ));
                }
            }
            Payload::Detection(objs) => {
                for (i, o) in objs.iter().enumerate() {
                    if !shape_in_image(&o.shape, s.image_size) {
                        diags.push(Diagnostic::error(id, format!("object {i} box outside image"), None));
                    }
                }
            }
            Payload::Grounding(gs) => {
                for (i, g) in gs.iter().enumerate() {
                    if !shape_in_image(&BoxShape::Horizontal(g.bbox), s.image_size) {
                        diags.push(Diagnostic::error(id, format!("grounding {i} box outside image"), None));
                    }
                }
            }
            Payload::VqaPairs(_) => {}
        }
    }
    diags
}
