use std::collections::BTreeSet;
use std::path::Path;

use super::{read_file, Diagnostic, IngestError, Modality, Parsed, Payload, SourceLocation, SourceSample};
use crate::geometry::ImageSize;

const COLUMNS: [&str; 6] = ["id", "image_path", "modality", "width", "height", "category"];

pub fn parse_classification_manifest(path: &Path) -> Result<Parsed, IngestError> {
    let text = read_file(path)?;
    Ok(parse_classification_str(&text, &path.display().to_string()))
}

/// One classification sample per valid row. The reference category list of
/// every sample is the sorted set of categories over the accepted rows.
pub fn parse_classification_str(text: &str, file: &str) -> Parsed {
    let mut out = Parsed::default();
    if text.trim().is_empty() {
        return out;
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let header: Vec<String> = match reader.headers() {
        Ok(h) => h.iter().map(|s| s.to_ascii_lowercase()).collect(),
        Err(e) => {
            out.diagnostics.push(Diagnostic::error(
                None,
                format!("unreadable header: {e}"),
                Some(SourceLocation { file: file.into(), line: 1 }),
            ));
            return out;
        }
    };
    let index: Vec<Option<usize>> = COLUMNS.iter().map(|c| header.iter().position(|h| h == c)).collect();

    let mut rows: Vec<(String, String, Modality, ImageSize, String)> = Vec::new();
    for result in reader.records() {
        let record = match result {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
                out.diagnostics.push(Diagnostic::error(
                    None,
                    format!("malformed row: {e}"),
                    Some(SourceLocation { file: file.into(), line }),
                ));
                continue;
            }
        };
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let loc = Some(SourceLocation { file: file.into(), line });
        let mut fields = Vec::with_capacity(COLUMNS.len());
        let mut missing = None;
        for (col, idx) in COLUMNS.iter().zip(&index) {
            match idx.and_then(|i| record.get(i)) {
                Some(v) => fields.push(v.to_owned()),
                None => {
                    missing = Some(*col);
                    break;
                }
            }
        }
        let id_hint = index[0].and_then(|i| record.get(i)).map(str::to_owned);
        if let Some(col) = missing {
            out.diagnostics
                .push(Diagnostic::error(id_hint.as_deref(), format!("missing column \"{col}\""), loc));
            continue;
        }
        let [id, image_path, modality, width, height, category]: [String; 6] =
            fields.try_into().expect("six columns");
        let err = |msg: String| Diagnostic::error(Some(&id), msg, loc.clone());
        if id.is_empty() {
            out.diagnostics.push(err("empty id".into()));
            continue;
        }
        let modality = match modality.parse::<Modality>() {
            Ok(m) => m,
            Err(e) => {
                out.diagnostics.push(err(e));
                continue;
            }
        };
        let size = match (width.parse::<u32>(), height.parse::<u32>()) {
            (Ok(w), Ok(h)) => match ImageSize::new(w, h) {
                Ok(s) => s,
                Err(e) => {
                    out.diagnostics.push(err(e.to_string()));
                    continue;
                }
            },
            _ => {
                out.diagnostics.push(err(format!("invalid image size \"{width}x{height}\"")));
                continue;
            }
        };
        if category.is_empty() {
            out.diagnostics.push(err("empty category".into()));
            continue;
        }
        rows.push((id, image_path, modality, size, category));
    }

    let refs: Vec<String> = rows
        .iter()
        .map(|r| r.4.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    out.samples = rows
        .into_iter()
        .map(|(id, image_path, modality, image_size, category)| SourceSample {
            id,
            image_path,
            modality,
            image_size,
            payload: Payload::Classification { category, reference_categories: refs.clone() },
        })
        .collect();
    out
}

/// Writes classification samples back out in the manifest dialect.
pub fn write_classification_csv(samples: &[SourceSample]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(COLUMNS).expect("in-memory write");
    for s in samples {
        if let Payload::Classification { category, .. } = &s.payload {
            w.write_record([
                s.id.as_str(),
                s.image_path.as_str(),
                s.modality.as_str(),
                &s.image_size.width.to_string(),
                &s.image_size.height.to_string(),
                category.as_str(),
            ])
            .expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "id,image_path,modality,width,height,category\n";

    #[test]
    fn reference_list_is_sorted_distinct() {
        let text = format!(
            "{HEADER}a,img/a.png,optical,256,256,beach\nb,img/b.png,optical,256,256,airport\nc,img/c.png,optical,256,256,beach\n"
        );
        let p = parse_classification_str(&text, "m.csv");
        assert!(p.diagnostics.is_empty());
        assert_eq!(p.samples.len(), 3);
        for s in &p.samples {
            match &s.payload {
                Payload::Classification { reference_categories, .. } => {
                    assert_eq!(reference_categories, &["airport", "beach"])
                }
                _ => panic!("wrong payload"),
            }
        }
    }

    #[test]
    fn empty_file() {
        let p = parse_classification_str("", "m.csv");
        assert!(p.samples.is_empty() && p.diagnostics.is_empty());
    }

    #[test]
    fn unknown_modality_skipped() {
        let text = format!("{HEADER}a,a.png,radar,10,10,beach\nb,b.png,sar,10,10,ship\n");
        let p = parse_classification_str(&text, "m.csv");
        assert_eq!(p.samples.len(), 1);
        assert_eq!(p.diagnostics.len(), 1);
        assert!(p.diagnostics[0].message.contains("unknown modality"));
        assert_eq!(p.diagnostics[0].location.as_ref().unwrap().line, 2);
    }

    #[test]
    fn missing_column_and_empty_category() {
        let p = parse_classification_str("id,image_path,modality,width,height\na,a.png,optical,1,1\n", "m.csv");
        assert!(p.samples.is_empty());
        assert!(p.diagnostics[0].message.contains("missing column \"category\""));

        let p = parse_classification_str(&format!("{HEADER}a,a.png,optical,1,1,\n"), "m.csv");
        assert!(p.samples.is_empty());
        assert!(p.diagnostics[0].message.contains("empty category"));
    }

    #[test]
    fn csv_round_trip() {
        let text = format!("{HEADER}a,img/a.png,optical,256,256,beach\nb,img/b.png,infrared,64,32,port\n");
        let p = parse_classification_str(&text, "m.csv");
        let again = parse_classification_str(&write_classification_csv(&p.samples), "m2.csv");
        assert_eq!(again.samples, p.samples);
    }
}
