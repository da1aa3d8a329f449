use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    compile_caption, compile_classification, compile_detection, compile_grounding, compile_vqa, BoxFormat,
    GroundingDirection, InstructionRecord, Task,
};
use crate::geometry::BoundsMode;
use crate::ingest::{
    parse_caption_file, parse_classification_manifest, parse_detection_file, parse_dota_index, parse_grounding_file,
    parse_vqa_file, sort_diagnostics, validate_corpus, Diagnostic, IngestError, Modality, ParseOptions, Parsed,
    SourceLocation,
};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error(transparent)]
    Io(#[from] IngestError),
    #[error("invalid manifest {path}: {message}")]
    Manifest { path: String, message: String },
    #[error("{} error(s) in strict mode", .0.iter().filter(|d| d.is_error()).count())]
    Rejected(Vec<Diagnostic>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceTask {
    Classification,
    Caption,
    Vqa,
    Detection,
    Grounding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceFormat {
    Csv,
    Jsonl,
    Dota,
}

fn default_box_formats() -> Vec<BoxFormat> {
    vec![BoxFormat::Hbb]
}

fn default_directions() -> Vec<GroundingDirection> {
    vec![GroundingDirection::Locate, GroundingDirection::Describe]
}

fn default_strict() -> bool {
    true
}

/// One input file. `path` is resolved against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub name: String,
    pub task: SourceTask,
    pub path: PathBuf,
    #[serde(default)]
    pub format: Option<SourceFormat>,
    #[serde(default = "default_box_formats")]
    pub box_formats: Vec<BoxFormat>,
    #[serde(default)]
    pub referring: bool,
    #[serde(default = "default_directions")]
    pub directions: Vec<GroundingDirection>,
}

impl SourceSpec {
    pub fn resolved_format(&self) -> SourceFormat {
        self.format.unwrap_or(match self.task {
            SourceTask::Classification => SourceFormat::Csv,
            _ => SourceFormat::Jsonl,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(default = "default_strict")]
    pub strict: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub shuffle_turns: bool,
    pub sources: Vec<SourceSpec>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

pub fn load_manifest(path: &Path) -> Result<Manifest, CorpusError> {
    let text = crate::ingest::read_file(path)?;
    let mut m: Manifest = toml::from_str(&text)
        .map_err(|e| CorpusError::Manifest { path: path.display().to_string(), message: e.to_string() })?;
    m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(m)
}

/// Command-line overrides; `None` keeps the manifest value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CompileOptions {
    pub strict: Option<bool>,
    pub seed: Option<u64>,
    pub shuffle_turns: Option<bool>,
    pub box_format: Option<BoxFormat>,
    pub referring: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StatsRow {
    pub task: Task,
    pub source: String,
    pub modality: Modality,
    pub records: usize,
    pub rounds: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CorpusStats {
    pub rows: Vec<StatsRow>,
    pub total_records: usize,
    pub total_rounds: usize,
}

impl CorpusStats {
    fn from_records(records: &[(String, InstructionRecord)]) -> Self {
        let mut rows: Vec<StatsRow> = Vec::new();
        for (source, r) in records {
            let pos = rows
                .iter()
                .position(|s| s.task == r.task && &s.source == source && s.modality == r.modality);
            let row = match pos {
                Some(i) => &mut rows[i],
                None => {
                    rows.push(StatsRow { task: r.task, source: source.clone(), modality: r.modality, records: 0, rounds: 0 });
                    rows.last_mut().unwrap()
                }
            };
            row.records += 1;
            row.rounds += r.round_count();
        }
        let total_records = records.len();
        let total_rounds = records.iter().map(|(_, r)| r.round_count()).sum();
        Self { rows, total_records, total_rounds }
    }

    pub fn by_task_modality(&self) -> BTreeMap<(Task, Modality), usize> {
        let mut out = BTreeMap::new();
        for r in &self.rows {
            *out.entry((r.task, r.modality)).or_default() += r.records;
        }
        out
    }

    /// Tab-separated table with columns Task, Data, Size, Type, Turns and a
    /// trailing TOTAL row.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("Task\tData\tSize\tType\tTurns\n");
        for r in &self.rows {
            let _ = writeln!(s, "{}\t{}\t{}\t{}\t{}", r.task, r.source, r.records, r.modality.table_label(), r.rounds);
        }
        let _ = writeln!(s, "TOTAL\t-\t{}\t-\t{}", self.total_records, self.total_rounds);
        s
    }
}

#[derive(Debug, Clone)]
pub struct CompileOutput {
    pub records: Vec<InstructionRecord>,
    pub stats: CorpusStats,
    pub diagnostics: Vec<Diagnostic>,
}

pub fn records_to_jsonl(records: &[InstructionRecord]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r).expect("records serialize"));
        s.push('\n');
    }
    s
}

fn read_source(spec: &SourceSpec, path: &Path, opts: &ParseOptions) -> Result<Parsed, CorpusError> {
    let bad = |msg: String| CorpusError::Manifest { path: spec.name.clone(), message: msg };
    let parsed = match (spec.task, spec.resolved_format()) {
        (SourceTask::Classification, SourceFormat::Csv) => parse_classification_manifest(path)?,
        (SourceTask::Caption, SourceFormat::Jsonl) => parse_caption_file(path, opts)?,
        (SourceTask::Vqa, SourceFormat::Jsonl) => parse_vqa_file(path, opts)?,
        (SourceTask::Detection, SourceFormat::Jsonl) => parse_detection_file(path, opts)?,
        (SourceTask::Detection, SourceFormat::Dota) => parse_dota_index(path, opts)?,
        (SourceTask::Grounding, SourceFormat::Jsonl) => parse_grounding_file(path, opts)?,
        (task, fmt) => return Err(bad(format!("format {fmt:?} is not supported for {task:?} sources"))),
    };
    Ok(parsed)
}

/// Parses, validates and compiles every source. In strict mode any error
/// diagnostic rejects the whole corpus; otherwise failing samples are skipped.
/// Records are ordered by task, then by source and sample order.
pub fn compile_corpus(manifest: &Manifest, opts: &CompileOptions) -> Result<CompileOutput, CorpusError> {
    let strict = opts.strict.unwrap_or(manifest.strict);
    let seed = opts.seed.unwrap_or(manifest.seed);
    let shuffle = opts.shuffle_turns.unwrap_or(manifest.shuffle_turns);
    let bounds = if strict { BoundsMode::Strict } else { BoundsMode::Lenient };
    let parse_opts = ParseOptions { bounds };

    let mut diagnostics = Vec::new();
    let mut compiled: Vec<(String, InstructionRecord)> = Vec::new();
    for spec in &manifest.sources {
        let path = manifest.base_dir.join(&spec.path);
        let parsed = read_source(spec, &path, &parse_opts)?;
        diagnostics.extend(parsed.diagnostics);
        let file = path.display().to_string();
        for mut d in validate_corpus(&parsed.samples) {
            d.location.get_or_insert(SourceLocation { file: file.clone(), line: 0 });
            diagnostics.push(d);
        }

        let formats = opts.box_format.map(|f| vec![f]).unwrap_or_else(|| spec.box_formats.clone());
        let referring = opts.referring.unwrap_or(spec.referring);
        for sample in &parsed.samples {
            let results = match spec.task {
                SourceTask::Classification => vec![compile_classification(sample)],
                SourceTask::Caption => vec![compile_caption(sample)],
                SourceTask::Vqa => vec![compile_vqa(sample)],
                SourceTask::Detection => formats
                    .iter()
                    .map(|f| compile_detection(sample, *f, referring, bounds))
                    .collect(),
                SourceTask::Grounding => spec
                    .directions
                    .iter()
                    .map(|d| compile_grounding(sample, *d, bounds))
                    .collect(),
            };
            for res in results {
                match res {
                    Ok(r) => compiled.push((spec.name.clone(), r)),
                    Err(e) => diagnostics.push(Diagnostic::error(
                        Some(&sample.id),
                        format!("compile: {e}"),
                        Some(SourceLocation { file: file.clone(), line: 0 }),
                    )),
                }
            }
        }
    }

    sort_diagnostics(&mut diagnostics);
    if strict && diagnostics.iter().any(Diagnostic::is_error) {
        return Err(CorpusError::Rejected(diagnostics));
    }

    compiled.sort_by_key(|(_, r)| r.task);
    if shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (_, r) in &mut compiled {
            let mut rounds: Vec<_> = r.turns.chunks(2).map(|c| c.to_vec()).collect();
            rounds.shuffle(&mut rng);
            r.turns = rounds.concat();
        }
    }
    let stats = CorpusStats::from_records(&compiled);
    let records = compiled.into_iter().map(|(_, r)| r).collect();
    Ok(CompileOutput { records, stats, diagnostics })
}
