//! Textual box syntax used inside assistant turns: `[v1,v2,...]` with 4
//! (HBB) or 8 (OBB) fixed-point values, four decimals each.

use thiserror::Error;

use crate::geometry::{GeometryError, NormalizedBox};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoxTextError {
    #[error("box text must be enclosed in brackets: \"{0}\"")]
    Unbracketed(String),
    #[error("malformed number \"{0}\"")]
    Number(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

fn fixed4(v: f64) -> String {
    let k = (v * 10_000.0).round() as i64;
    format!("{}.{:04}", k / 10_000, k % 10_000)
}

pub fn serialize_box_text(b: &NormalizedBox) -> String {
    let parts: Vec<String> = b.values().iter().map(|v| fixed4(*v)).collect();
    format!("[{}]", parts.join(","))
}

pub fn parse_box_text(text: &str) -> Result<NormalizedBox, BoxTextError> {
    let t = text.trim();
    let inner = t
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(|| BoxTextError::Unbracketed(t.to_owned()))?;
    let values = inner
        .split(',')
        .map(|p| {
            let p = p.trim();
            p.parse::<f64>().map_err(|_| BoxTextError::Number(p.to_owned()))
        })
        .collect::<Result<Vec<f64>, _>>()?;
    Ok(NormalizedBox::from_values(&values)?)
}

/// `category [box]` entries joined by `"; "`.
pub fn format_detection_answer(items: &[(String, NormalizedBox)]) -> String {
    items
        .iter()
        .map(|(c, b)| format!("{c} {}", serialize_box_text(b)))
        .collect::<Vec<_>>()
        .join("; ")
}

/// Parses an assistant (or model) detection answer. Returns the well-formed
/// entries in order and the number of segments that could not be parsed.
pub fn parse_detection_answer(text: &str) -> (Vec<(String, NormalizedBox)>, usize) {
    let mut items = Vec::new();
    let mut malformed = 0;
    for seg in text.split(';') {
        let seg = seg.trim();
        if seg.is_empty() {
            continue;
        }
        let Some(open) = seg.find('[') else {
            malformed += 1;
            continue;
        };
        let category = seg[..open].trim();
        match parse_box_text(&seg[open..]) {
            Ok(b) if !category.is_empty() => items.push((category.to_owned(), b)),
            _ => malformed += 1,
        }
    }
    (items, malformed)
}
