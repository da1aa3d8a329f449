//! Python bindings for rsinstruct.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use rsinstruct::compiler::{self, BoxFormat, CompileOptions};
use rsinstruct::geometry::{self, HorizontalBox, ImageSize, NormalizedBox, Point};
use rsinstruct::kernels::{self, KernelError, Stage};
use rsinstruct::metrics::{self, DetectionEvalOptions, ScoreTable};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn kernel_err(e: KernelError) -> PyErr {
    match e {
        KernelError::Io { .. } => PyIOError::new_err(e.to_string()),
        e => value_err(e),
    }
}

fn hbb(v: [f64; 4]) -> PyResult<HorizontalBox> {
    HorizontalBox::from_slice(&v).map_err(value_err)
}

fn points(v: &[f64]) -> PyResult<Vec<Point>> {
    if v.len() != 8 {
        return Err(value_err(format!("expected 8 coordinates, got {}", v.len())));
    }
    Ok(v.chunks(2).map(|c| Point::new(c[0], c[1])).collect())
}

fn obb(v: &[f64]) -> PyResult<geometry::OrientedBox> {
    geometry::canonicalize_obb(&points(v)?).map_err(value_err)
}

/// IoU of two `[xmin, ymin, xmax, ymax]` boxes.
#[pyfunction]
fn hbb_iou(a: [f64; 4], b: [f64; 4]) -> PyResult<f64> {
    geometry::hbb_iou(&hbb(a)?, &hbb(b)?).map_err(value_err)
}

/// IoU of two convex quads given as 8 corner coordinates in any order.
#[pyfunction]
fn obb_iou(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    Ok(geometry::obb_iou(&obb(&a)?, &obb(&b)?))
}

#[pyfunction]
fn canonicalize_obb(corners: Vec<f64>) -> PyResult<Vec<f64>> {
    Ok(obb(&corners)?.to_array().to_vec())
}

/// Pixel box (4 or 8 values) to its normalized box text.
#[pyfunction]
#[pyo3(signature = (values, width, height, strict = true))]
fn box_to_text(values: Vec<f64>, width: u32, height: u32, strict: bool) -> PyResult<String> {
    let shape = geometry::BoxShape::from_values(&values).map_err(value_err)?;
    let size = ImageSize::new(width, height).map_err(value_err)?;
    let mode = if strict { geometry::BoundsMode::Strict } else { geometry::BoundsMode::Lenient };
    let n = geometry::normalize_box(&shape, size, mode).map_err(value_err)?;
    Ok(compiler::serialize_box_text(&n))
}

/// Normalized coordinates of a `[...]` box string.
#[pyfunction]
fn parse_box_text(text: &str) -> PyResult<Vec<f64>> {
    let b = compiler::parse_box_text(text).map_err(value_err)?;
    Ok(match b {
        NormalizedBox::Horizontal(v) => v.to_vec(),
        NormalizedBox::Oriented(v) => v.to_vec(),
    })
}

#[pyfunction]
fn tokenize_caption(text: &str) -> Vec<String> {
    metrics::tokenize_caption(text)
}

/// Corpus-level caption scores for `(id, candidate, references)` rows.
#[pyfunction]
fn caption_scores(rows: Vec<(String, String, Vec<String>)>) -> PyResult<BTreeMap<String, f64>> {
    let set = metrics::CaptionEvalSet::from_texts(rows).map_err(value_err)?;
    let s = metrics::caption_scores(&set);
    let mut out = BTreeMap::new();
    for (n, v) in s.bleu.iter().enumerate() {
        out.insert(format!("BLEU-{}", n + 1), *v);
    }
    out.insert("ROUGE-L".into(), s.rouge_l);
    out.insert("METEOR".into(), s.meteor);
    out.insert("CIDEr-D".into(), s.cider_d);
    Ok(out)
}

/// Pr@t, mIoU and cIoU for `(prediction or None, truth)` pairs.
#[pyfunction]
fn grounding_metrics(pairs: Vec<(Option<[f64; 4]>, [f64; 4])>) -> PyResult<BTreeMap<String, f64>> {
    let pairs = pairs
        .into_iter()
        .map(|(p, t)| Ok((p.map(hbb).transpose()?, hbb(t)?)))
        .collect::<PyResult<Vec<_>>>()?;
    let g = metrics::grounding_metrics(&pairs).map_err(value_err)?;
    let mut out: BTreeMap<String, f64> = g.precision_at.iter().map(|(t, v)| (format!("Pr@{t:.1}"), *v)).collect();
    out.insert("mIoU".into(), g.miou);
    out.insert("cIoU".into(), g.ciou);
    Ok(out)
}

fn format_of(s: &str) -> PyResult<BoxFormat> {
    s.parse().map_err(value_err)
}

/// Records and stats TSV compiled from a manifest file.
#[pyfunction]
#[pyo3(signature = (manifest, strict = None, seed = None, box_format = None))]
fn compile_manifest(manifest: PathBuf, strict: Option<bool>, seed: Option<u64>, box_format: Option<&str>) -> PyResult<(String, String)> {
    let m = compiler::load_manifest(&manifest).map_err(value_err)?;
    let opts = CompileOptions { strict, seed, box_format: box_format.map(format_of).transpose()?, ..Default::default() };
    let out = compiler::compile_corpus(&m, &opts).map_err(value_err)?;
    Ok((compiler::records_to_jsonl(&out.records), out.stats.to_tsv()))
}

fn parse_records(jsonl: &str) -> PyResult<Vec<compiler::InstructionRecord>> {
    jsonl.lines().filter(|l| !l.trim().is_empty()).map(|l| serde_json::from_str(l).map_err(value_err)).collect()
}

/// Scores prediction JSONL against record JSONL. `task` is one of caption,
/// vqa, classification, grounding, detection.
#[pyfunction]
#[pyo3(signature = (task, records, predictions, box_format = "hbb", strict = true))]
fn evaluate(task: &str, records: &str, predictions: &str, box_format: &str, strict: bool) -> PyResult<BTreeMap<String, f64>> {
    let gt = parse_records(records)?;
    let rep = match task {
        "detection" => {
            let lines = metrics::parse_detection_predictions(predictions).map_err(value_err)?;
            let opts = DetectionEvalOptions { format: format_of(box_format)?, strict, ..Default::default() };
            metrics::eval_detection(&gt, &lines, &opts)
        }
        _ => {
            let preds = metrics::parse_text_predictions(predictions).map_err(value_err)?;
            match task {
                "caption" => metrics::eval_caption(&gt, &preds),
                "vqa" => metrics::eval_vqa(&gt, &preds),
                "classification" => metrics::eval_classification(&gt, &preds),
                "grounding" => metrics::eval_grounding(&gt, &preds),
                other => return Err(value_err(format!("unknown task {other:?}"))),
            }
        }
    }
    .map_err(value_err)?;
    Ok(rep.values)
}

/// AP over single-image boxes: `truths` are `(category, box)`, `predictions`
/// are `(category, box, score)`.
#[pyfunction]
#[pyo3(signature = (predictions, truths, iou_threshold = 0.5))]
fn detection_ap(predictions: Vec<(String, Vec<f64>, f64)>, truths: Vec<(String, Vec<f64>)>, iou_threshold: f64) -> PyResult<f64> {
    let shape = |v: &[f64]| geometry::BoxShape::from_values(v).map_err(value_err);
    let gts = truths
        .iter()
        .map(|(c, b)| Ok(metrics::GroundTruthBox { image_id: "0".into(), category: c.clone(), shape: shape(b)? }))
        .collect::<PyResult<Vec<_>>>()?;
    let preds = predictions
        .iter()
        .enumerate()
        .map(|(i, (c, b, s))| {
            Ok(metrics::DetectionPrediction { image_id: "0".into(), index: i, category: c.clone(), shape: shape(b)?, score: Some(*s) })
        })
        .collect::<PyResult<Vec<_>>>()?;
    let kind = if gts.iter().any(|g| matches!(g.shape, geometry::BoxShape::Oriented(_))) { BoxFormat::Obb } else { BoxFormat::Hbb };
    metrics::detection_ap(&preds, &gts, iou_threshold, kind).map_err(value_err)
}

/// Keeps `(id, index, score)` entries for later clip-score filtering.
#[pyclass(name = "ScoreTable")]
#[derive(Default)]
struct PyScoreTable {
    inner: ScoreTable,
}

#[pymethods]
impl PyScoreTable {
    #[new]
    fn new() -> Self {
        Self::default()
    }

    fn insert(&mut self, id: &str, index: usize, score: f64) {
        self.inner.insert(id, index, score);
    }

    fn get(&self, id: &str, index: usize) -> Option<f64> {
        self.inner.get(id, index)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

fn stage_of(n: u8) -> PyResult<Stage> {
    Stage::try_from(n).map_err(kernel_err)
}

/// Desk-scale fusion/adapter model.
#[pyclass(name = "Model")]
struct PyModel {
    inner: kernels::Model,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (stage = 2, seed = 0))]
    fn new(stage: u8, seed: u64) -> PyResult<Self> {
        let inner = kernels::Model::init(kernels::KernelConfig::desk(stage_of(stage)?), seed).map_err(kernel_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn stage(&self) -> u8 {
        self.inner.config.stage.number()
    }

    fn enter_stage(&mut self, stage: u8, seed: u64) -> PyResult<()> {
        self.inner.enter_stage(stage_of(stage)?, seed).map_err(kernel_err)
    }

    fn parameter_names(&self) -> Vec<String> {
        self.inner.params.names().map(str::to_owned).collect()
    }

    fn trainable_names(&self) -> Vec<String> {
        self.inner.params.trainable_names().into_iter().collect()
    }

    fn parameter(&self, name: &str) -> PyResult<(Vec<usize>, Vec<f64>)> {
        let t = self.inner.params.tensor(name).map_err(kernel_err)?;
        Ok((t.shape().to_vec(), t.data().to_vec()))
    }

    /// Next-token loss on a random input of `n_visual` visual rows and
    /// `n_language` tokens.
    #[pyo3(signature = (n_visual = 2, n_language = 4, seed = 0))]
    fn random_loss(&self, n_visual: usize, n_language: usize, seed: u64) -> PyResult<f64> {
        let input = kernels::KernelInput::random(&self.inner.config, n_visual, n_language, seed);
        self.inner.loss(&input).map_err(kernel_err)
    }

    /// Gradient check of the trainable set; returns the report TSV and
    /// whether every parameter passed.
    #[pyo3(signature = (seed = 0, corrupt = false))]
    fn gradcheck(&self, seed: u64, corrupt: bool) -> PyResult<(String, bool)> {
        let input = kernels::KernelInput::random(&self.inner.config, 2, 4, seed);
        let opts = kernels::GradcheckOptions { corrupt, ..Default::default() };
        let r = kernels::gradcheck_model(&self.inner, &input, &self.inner.params.trainable_names(), &opts).map_err(kernel_err)?;
        Ok((r.to_tsv(), r.passed()))
    }

    /// Runs AdamW steps on a random input; returns the losses before and after.
    #[pyo3(signature = (steps = 10, lr = 1e-2, seed = 0))]
    fn train(&mut self, steps: usize, lr: f64, seed: u64) -> PyResult<(f64, f64)> {
        let input = kernels::KernelInput::random(&self.inner.config, 2, 4, seed);
        let cfg = kernels::AdamWConfig { lr, ..Default::default() };
        let r = kernels::freeze_invariance(&mut self.inner, &input, steps, cfg).map_err(kernel_err)?;
        if !r.changed_frozen.is_empty() {
            return Err(value_err(format!("frozen parameters changed: {:?}", r.changed_frozen)));
        }
        Ok((r.initial_loss, r.final_loss))
    }

    fn to_bytes(&self) -> Vec<u8> {
        self.inner.params.to_bytes()
    }
}

#[pymodule]
fn pyrsinstruct(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(hbb_iou, m)?)?;
    m.add_function(wrap_pyfunction!(obb_iou, m)?)?;
    m.add_function(wrap_pyfunction!(canonicalize_obb, m)?)?;
    m.add_function(wrap_pyfunction!(box_to_text, m)?)?;
    m.add_function(wrap_pyfunction!(parse_box_text, m)?)?;
    m.add_function(wrap_pyfunction!(tokenize_caption, m)?)?;
    m.add_function(wrap_pyfunction!(caption_scores, m)?)?;
    m.add_function(wrap_pyfunction!(grounding_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(detection_ap, m)?)?;
    m.add_function(wrap_pyfunction!(compile_manifest, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_class::<PyScoreTable>()?;
    m.add_class::<PyModel>()?;
    Ok(())
}
