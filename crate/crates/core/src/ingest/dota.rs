use std::path::Path;

use super::{
    read_file, DetectionInstance, Diagnostic, IngestError, Modality, ParseOptions, Parsed, Payload,
    SourceLocation, SourceSample,
};
use crate::geometry::normalize::fit_to_image;
use crate::geometry::{canonicalize_obb, BoxShape, ImageSize, Point};

/// Image-level metadata that DOTA label files do not carry themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageMeta {
    pub id: String,
    pub image_path: String,
    pub modality: Modality,
    pub size: ImageSize,
}

const METADATA_PREFIXES: [&str; 2] = ["imagesource:", "gsd:"];

/// Parses one DOTA label file. Returns no sample (plus diagnostics) when no
/// line yields a usable instance.
pub fn parse_dota_annotation(text: &str, meta: &ImageMeta, file: &str, opts: &ParseOptions) -> Parsed {
    let mut out = Parsed::default();
    let mut instances = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || METADATA_PREFIXES.iter().any(|p| line.starts_with(p)) {
            continue;
        }
        let loc = SourceLocation { file: file.into(), line: n + 1 };
        match parse_line(line, meta.size, opts) {
            Ok(inst) => instances.push(inst),
            Err(msg) => out.diagnostics.push(Diagnostic::error(Some(&meta.id), msg, Some(loc))),
        }
    }
    if instances.is_empty() {
        out.diagnostics.push(Diagnostic::warning(
            Some(&meta.id),
            "no objects annotated; image skipped",
            Some(SourceLocation { file: file.into(), line: 0 }),
        ));
        return out;
    }
    out.samples.push(SourceSample {
        id: meta.id.clone(),
        image_path: meta.image_path.clone(),
        modality: meta.modality,
        image_size: meta.size,
        payload: Payload::Detection(instances),
    });
    out
}

fn parse_line(line: &str, size: ImageSize, opts: &ParseOptions) -> Result<DetectionInstance, String> {
    let tokens: Vec<&str> = line.split_whitespace().collect();
    if tokens.len() != 10 {
        return Err(format!("expected 10 tokens, found {}", tokens.len()));
    }
    let mut coords = [0.0_f64; 8];
    for (c, tok) in coords.iter_mut().zip(&tokens[..8]) {
        *c = tok
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| format!("non-numeric coordinate \"{tok}\""))?;
    }
    let difficult = match tokens[9] {
        "0" => false,
        "1" => true,
        other => return Err(format!("difficult flag must be 0 or 1, found \"{other}\"")),
    };
    let shape = BoxShape::from_values(&coords).or_else(|e| {
        // Corners slightly outside the image are common; clamp before
        // canonicalizing when lenient.
        if opts.bounds == crate::geometry::BoundsMode::Lenient {
            let (w, h) = (size.width as f64, size.height as f64);
            let pts: Vec<Point> = coords
                .chunks(2)
                .map(|c| Point::new(c[0].clamp(0.0, w), c[1].clamp(0.0, h)))
                .collect();
            canonicalize_obb(&pts).map(BoxShape::Oriented)
        } else {
            Err(e)
        }
    });
    let shape = shape
        .and_then(|s| fit_to_image(&s, size, opts.bounds))
        .map_err(|e| e.to_string())?;
    Ok(DetectionInstance { category: tokens[8].to_owned(), shape, difficult })
}

/// Parses a DOTA index CSV (`id,image_path,modality,width,height,label_file`,
/// label paths relative to the index) and every label file it references.
pub fn parse_dota_index(path: &Path, opts: &ParseOptions) -> Result<Parsed, IngestError> {
    let text = read_file(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let file = path.display().to_string();
    let mut out = Parsed::default();
    if text.trim().is_empty() {
        return Ok(out);
    }
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map(|h| h.iter().map(|s| s.to_ascii_lowercase()).collect())
        .unwrap_or_default();
    let col = |name: &str| header.iter().position(|h| h == name);
    let cols = ["id", "image_path", "modality", "width", "height", "label_file"].map(col);

    for record in reader.records() {
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
                out.diagnostics.push(Diagnostic::error(
                    None,
                    format!("malformed row: {e}"),
                    Some(SourceLocation { file: file.clone(), line }),
                ));
                continue;
            }
        };
        let loc = SourceLocation { file: file.clone(), line: record.position().map(|p| p.line() as usize).unwrap_or(0) };
        let get = |i: usize| cols[i].and_then(|c| record.get(c));
        let Some(fields) = (0..6).map(get).collect::<Option<Vec<&str>>>() else {
            out.diagnostics.push(Diagnostic::error(get(0), "missing column in DOTA index", Some(loc)));
            continue;
        };
        let id = fields[0];
        let modality = match fields[2].parse::<Modality>() {
            Ok(m) => m,
            Err(e) => {
                out.diagnostics.push(Diagnostic::error(Some(id), e, Some(loc)));
                continue;
            }
        };
        let size = match (fields[3].parse::<u32>(), fields[4].parse::<u32>()) {
            (Ok(w), Ok(h)) if w > 0 && h > 0 => ImageSize { width: w, height: h },
            _ => {
                out.diagnostics.push(Diagnostic::error(Some(id), "invalid image size", Some(loc)));
                continue;
            }
        };
        let label_path = base.join(fields[5]);
        let label = match read_file(&label_path) {
            Ok(t) => t,
            Err(e) => {
                out.diagnostics.push(Diagnostic::error(Some(id), e.to_string(), Some(loc)));
                continue;
            }
        };
        let meta = ImageMeta { id: id.into(), image_path: fields[1].into(), modality, size };
        out.extend(parse_dota_annotation(&label, &meta, &label_path.display().to_string(), opts));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoundsMode;

    fn meta() -> ImageMeta {
        ImageMeta {
            id: "P0001".into(),
            image_path: "images/P0001.png".into(),
            modality: Modality::Optical,
            size: ImageSize::new(100, 100).unwrap(),
        }
    }

    fn strict() -> ParseOptions {
        ParseOptions { bounds: BoundsMode::Strict }
    }

    #[test]
    fn single_plane() {
        let p = parse_dota_annotation("1 1 3 1 3 3 1 3 plane 0\n", &meta(), "P0001.txt", &strict());
        assert!(p.diagnostics.is_empty());
        let Payload::Detection(objs) = &p.samples[0].payload else { panic!() };
        assert_eq!(objs[0].category, "plane");
        assert!(!objs[0].difficult);
        assert_eq!(objs[0].shape.values(), vec![1.0, 1.0, 3.0, 1.0, 3.0, 3.0, 1.0, 3.0]);
    }

    #[test]
    fn metadata_lines_skipped() {
        let text = "imagesource:GoogleEarth\ngsd:0.5\n3 1 3 3 1 3 1 1 ship 1\n";
        let p = parse_dota_annotation(text, &meta(), "P0001.txt", &strict());
        assert!(p.diagnostics.is_empty());
        let Payload::Detection(objs) = &p.samples[0].payload else { panic!() };
        assert!(objs[0].difficult);
        assert_eq!(objs[0].shape.values()[..2], [1.0, 1.0]);
    }

    #[test]
    fn bad_lines_reported() {
        let text = "1 1 3 1 3 3 1 3 plane\n1 1 x 1 3 3 1 3 plane 0\n0 0 1 0 2 0 3 0 plane 0\n1 1 3 1 3 3 1 3 plane 2\n5 5 9 5 9 9 5 9 ship 0\n";
        let p = parse_dota_annotation(text, &meta(), "P0001.txt", &strict());
        assert_eq!(p.diagnostics.len(), 4);
        assert!(p.diagnostics[0].message.contains("expected 10 tokens, found 9"));
        assert!(p.diagnostics[1].message.contains("non-numeric"));
        assert!(p.diagnostics[2].message.contains("degenerate"));
        assert_eq!(p.diagnostics[3].location.as_ref().unwrap().line, 4);
        let Payload::Detection(objs) = &p.samples[0].payload else { panic!() };
        assert_eq!(objs.len(), 1);
    }

    #[test]
    fn out_of_image_corner() {
        let text = "-2 1 30 1 30 30 1 30 plane 0\n";
        let p = parse_dota_annotation(text, &meta(), "P.txt", &strict());
        assert!(p.samples.is_empty());
        let p = parse_dota_annotation(text, &meta(), "P.txt", &ParseOptions { bounds: BoundsMode::Lenient });
        assert_eq!(p.samples.len(), 1);
    }
}
