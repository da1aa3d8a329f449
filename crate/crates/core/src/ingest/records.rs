use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    read_file, DetectionInstance, Diagnostic, GroundingEntry, IngestError, Modality, ParseOptions, Parsed,
    Payload, QaPair, SourceLocation, SourceSample,
};
use crate::geometry::normalize::fit_to_image;
use crate::geometry::{BoxShape, ImageSize};

/// Which payload field a canonical task file carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordKind {
    Captions,
    Vqa,
    Grounding,
    Detection,
}

impl RecordKind {
    fn field(self) -> &'static str {
        match self {
            RecordKind::Captions => "captions",
            RecordKind::Vqa => "qa",
            RecordKind::Grounding => "groundings",
            RecordKind::Detection => "objects",
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RawGrounding {
    expression: String,
    #[serde(rename = "box")]
    bbox: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawObject {
    category: String,
    #[serde(rename = "box")]
    bbox: Vec<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    difficult: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct Line {
    id: String,
    image_path: String,
    modality: String,
    size: [u32; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    captions: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    qa: Option<Vec<QaPair>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    groundings: Option<Vec<RawGrounding>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    objects: Option<Vec<RawObject>>,
}

pub fn parse_caption_file(path: &Path, opts: &ParseOptions) -> Result<Parsed, IngestError> {
    parse_file(path, RecordKind::Captions, opts)
}

pub fn parse_vqa_file(path: &Path, opts: &ParseOptions) -> Result<Parsed, IngestError> {
    parse_file(path, RecordKind::Vqa, opts)
}

pub fn parse_grounding_file(path: &Path, opts: &ParseOptions) -> Result<Parsed, IngestError> {
    parse_file(path, RecordKind::Grounding, opts)
}

pub fn parse_detection_file(path: &Path, opts: &ParseOptions) -> Result<Parsed, IngestError> {
    parse_file(path, RecordKind::Detection, opts)
}

fn parse_file(path: &Path, kind: RecordKind, opts: &ParseOptions) -> Result<Parsed, IngestError> {
    let text = read_file(path)?;
    Ok(parse_task_str(&text, &path.display().to_string(), kind, opts))
}

/// Parses a canonical line-delimited task file held in memory. Blank lines
/// are ignored.
pub fn parse_task_str(text: &str, file: &str, kind: RecordKind, opts: &ParseOptions) -> Parsed {
    let mut out = Parsed::default();
    for (n, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let loc = SourceLocation { file: file.into(), line: n + 1 };
        let line: Line = match serde_json::from_str(raw) {
            Ok(l) => l,
            Err(e) => {
                out.diagnostics.push(Diagnostic::error(None, format!("malformed record: {e}"), Some(loc)));
                continue;
            }
        };
        let mut diags = Vec::new();
        if let Some(sample) = convert(line, kind, opts, &loc, &mut diags) {
            out.samples.push(sample);
        }
        out.diagnostics.extend(diags);
    }
    out
}

fn convert(
    line: Line,
    kind: RecordKind,
    opts: &ParseOptions,
    loc: &SourceLocation,
    diags: &mut Vec<Diagnostic>,
) -> Option<SourceSample> {
    let id = line.id.trim().to_owned();
    let at = || Some(loc.clone());
    let mut error = |msg: String| {
        diags.push(Diagnostic::error(Some(&id), msg, at()));
        None
    };
    if id.is_empty() {
        return error("empty id".into());
    }
    let modality = match line.modality.parse::<Modality>() {
        Ok(m) => m,
        Err(e) => return error(e),
    };
    let size = match ImageSize::new(line.size[0], line.size[1]) {
        Ok(s) => s,
        Err(e) => return error(e.to_string()),
    };

    let mut entry_diags = Vec::new();
    let warn = |msg: String| Diagnostic::warning(Some(&id), msg, at());
    let fail = |msg: String| Diagnostic::error(Some(&id), msg, at());
    let payload = match kind {
        RecordKind::Captions => {
            let Some(caps) = line.captions else {
                return error("missing \"captions\" field".into());
            };
            let mut kept = Vec::new();
            for (i, c) in caps.iter().enumerate() {
                let c = c.trim();
                if c.is_empty() {
                    entry_diags.push(warn(format!("caption {i} is empty; dropped")));
                } else {
                    kept.push(c.to_owned());
                }
            }
            Payload::Captions(kept)
        }
        RecordKind::Vqa => {
            let Some(pairs) = line.qa else {
                return error("missing \"qa\" field".into());
            };
            let mut kept = Vec::new();
            for (i, p) in pairs.into_iter().enumerate() {
                let (q, a) = (p.question.trim(), p.answer.trim());
                if q.is_empty() {
                    entry_diags.push(warn(format!("question {i} is empty; dropped")));
                } else if a.is_empty() {
                    entry_diags.push(warn(format!("answer {i} is empty; dropped")));
                } else {
                    kept.push(QaPair { question: q.to_owned(), answer: a.to_owned() });
                }
            }
            Payload::VqaPairs(kept)
        }
        RecordKind::Grounding => {
            let Some(gs) = line.groundings else {
                return error("missing \"groundings\" field".into());
            };
            let mut kept = Vec::new();
            for (i, g) in gs.into_iter().enumerate() {
                let expr = g.expression.trim();
                if expr.is_empty() {
                    entry_diags.push(warn(format!("grounding {i} has an empty expression; dropped")));
                    continue;
                }
                if g.bbox.len() != 4 {
                    entry_diags.push(fail(format!("grounding {i}: expected 4 box values, got {}", g.bbox.len())));
                    continue;
                }
                match BoxShape::from_values(&g.bbox).and_then(|s| fit_to_image(&s, size, opts.bounds)) {
                    Ok(s) => kept.push(GroundingEntry { expression: expr.to_owned(), bbox: s.to_hbb() }),
                    Err(e) => entry_diags.push(fail(format!("grounding {i}: {e}"))),
                }
            }
            Payload::Grounding(kept)
        }
        RecordKind::Detection => {
            let Some(objs) = line.objects else {
                return error("missing \"objects\" field".into());
            };
            let mut kept = Vec::new();
            for (i, o) in objs.into_iter().enumerate() {
                let cat = o.category.trim();
                if cat.is_empty() {
                    entry_diags.push(fail(format!("object {i}: empty category")));
                    continue;
                }
                match BoxShape::from_values(&o.bbox).and_then(|s| fit_to_image(&s, size, opts.bounds)) {
                    Ok(shape) => kept.push(DetectionInstance { category: cat.to_owned(), shape, difficult: o.difficult }),
                    Err(e) => entry_diags.push(fail(format!("object {i}: {e}"))),
                }
            }
            Payload::Detection(kept)
        }
    };
    diags.append(&mut entry_diags);
    if payload.is_empty() {
        diags.push(Diagnostic::error(Some(&id), format!("no usable {} entries", kind.field()), at()));
        return None;
    }
    Some(SourceSample { id, image_path: line.image_path, modality, image_size: size, payload })
}

/// Canonical line for a sample, or `None` for classification samples (which
/// live in CSV manifests).
pub fn write_canonical_line(sample: &SourceSample) -> Option<String> {
    let mut line = Line {
        id: sample.id.clone(),
        image_path: sample.image_path.clone(),
        modality: sample.modality.as_str().into(),
        size: [sample.image_size.width, sample.image_size.height],
        captions: None,
        qa: None,
        groundings: None,
        objects: None,
    };
    match &sample.payload {
        Payload::Classification { .. } => return None,
        Payload::Captions(c) => line.captions = Some(c.clone()),
        Payload::VqaPairs(q) => line.qa = Some(q.clone()),
        Payload::Grounding(g) => {
            line.groundings = Some(
                g.iter()
                    .map(|e| RawGrounding { expression: e.expression.clone(), bbox: e.bbox.to_array().to_vec() })
                    .collect(),
            )
        }
        Payload::Detection(d) => {
            line.objects = Some(
                d.iter()
                    .map(|o| RawObject { category: o.category.clone(), bbox: o.shape.values(), difficult: o.difficult })
                    .collect(),
            )
        }
    }
    Some(serde_json::to_string(&line).expect("serializable line"))
}

pub fn write_canonical(samples: &[SourceSample]) -> String {
    samples
        .iter()
        .filter_map(write_canonical_line)
        .map(|l| l + "\n")
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoundsMode;
    use crate::ingest::Severity;

    fn strict() -> ParseOptions {
        ParseOptions { bounds: BoundsMode::Strict }
    }

    #[test]
    fn five_captions() {
        let text = r#"{"id":"c1","image_path":"a.png","modality":"optical","size":[256,256],"captions":["a","b","c","d","e"]}"#;
        let p = parse_task_str(text, "c.jsonl", RecordKind::Captions, &strict());
        assert_eq!(p.samples.len(), 1);
        assert!(matches!(&p.samples[0].payload, Payload::Captions(c) if c.len() == 5));
    }

    #[test]
    fn two_qa_pairs() {
        let text = r#"{"id":"q1","image_path":"a.png","modality":"sar","size":[64,64],"qa":[{"question":"Is it urban?","answer":"yes"},{"question":"How many ships?","answer":"4"}]}"#;
        let p = parse_task_str(text, "q.jsonl", RecordKind::Vqa, &strict());
        assert!(matches!(&p.samples[0].payload, Payload::VqaPairs(q) if q.len() == 2));
        assert_eq!(p.samples[0].modality, Modality::Sar);
    }

    #[test]
    fn grounding_out_of_bounds() {
        let text = r#"{"id":"g1","image_path":"a.png","modality":"optical","size":[100,100],"groundings":[{"expression":"the tank","box":[10,10,150,40]}]}"#;
        let p = parse_task_str(text, "g.jsonl", RecordKind::Grounding, &strict());
        assert!(p.samples.is_empty());
        assert!(p.diagnostics.iter().any(|d| d.is_error() && d.message.contains("outside image")));

        let p = parse_task_str(text, "g.jsonl", RecordKind::Grounding, &ParseOptions { bounds: BoundsMode::Lenient });
        assert_eq!(p.samples.len(), 1);
        match &p.samples[0].payload {
            Payload::Grounding(g) => assert_eq!(g[0].bbox.xmax, 100.0),
            _ => unreachable!(),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "\n{\"id\": oops}\n";
        let p = parse_task_str(text, "x.jsonl", RecordKind::Captions, &strict());
        assert_eq!(p.diagnostics.len(), 1);
        assert_eq!(p.diagnostics[0].location.as_ref().unwrap().line, 2);
    }

    #[test]
    fn empty_caption_warns_and_drops() {
        let text = r#"{"id":"c1","image_path":"a.png","modality":"optical","size":[8,8],"captions":["  ","a lake"]}"#;
        let p = parse_task_str(text, "c.jsonl", RecordKind::Captions, &strict());
        assert_eq!(p.diagnostics.len(), 1);
        assert_eq!(p.diagnostics[0].severity, Severity::Warning);
        assert!(matches!(&p.samples[0].payload, Payload::Captions(c) if c == &["a lake"]));
    }

    #[test]
    fn all_entries_dropped_is_an_error() {
        let text = r#"{"id":"c1","image_path":"a.png","modality":"optical","size":[8,8],"captions":[""]}"#;
        let p = parse_task_str(text, "c.jsonl", RecordKind::Captions, &strict());
        assert!(p.samples.is_empty());
        assert!(p.has_errors());
    }

    #[test]
    fn detection_objects_mix_box_kinds() {
        let text = r#"{"id":"d1","image_path":"a.png","modality":"infrared","size":[10,10],"objects":[{"category":"car","box":[1,1,3,3]},{"category":"ship","box":[3,1,1,3,1,1,3,3],"difficult":true}]}"#;
        let p = parse_task_str(text, "d.jsonl", RecordKind::Detection, &strict());
        let Payload::Detection(objs) = &p.samples[0].payload else { panic!() };
        assert!(matches!(objs[0].shape, BoxShape::Horizontal(_)));
        assert!(matches!(objs[1].shape, BoxShape::Oriented(_)));
        assert!(objs[1].difficult);
        let again = parse_task_str(&write_canonical(&p.samples), "d2.jsonl", RecordKind::Detection, &strict());
        assert_eq!(again.samples, p.samples);
    }
}
