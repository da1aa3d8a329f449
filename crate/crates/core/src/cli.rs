//! `rsinstruct` command-line front end.
//!
//! Exit status: 0 on success, 1 when the inputs are readable but rejected
//! (strict compile errors, id mismatches, failed checks), 2 on I/O or usage
//! errors. Diagnostics go to stderr; data goes to `--out` or stdout.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::compiler::{
    compile_corpus, load_manifest, records_to_jsonl, BoxFormat, CompileOptions, CompileOutput, CorpusError,
    InstructionRecord,
};
use crate::kernels::{
    freeze_invariance, gradcheck_model, AdamWConfig, GradcheckOptions, KernelConfig, KernelError, KernelInput, Model,
    Stage,
};
use crate::metrics::{
    eval_caption, eval_classification, eval_detection, eval_grounding, eval_vqa, parse_detection_predictions,
    parse_text_predictions, DetectionEvalOptions, EvalReport, MetricError, ScoreTable,
};

#[derive(Debug, Parser)]
#[command(name = "rsinstruct", version, about = "Remote-sensing instruction corpus compiler, metrics and kernel checks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compile a manifest into instruction records (JSONL).
    Compile(CompileArgs),
    /// Parse and compile without writing records; report diagnostics.
    Validate(ManifestArgs),
    /// Print the per-source statistics table.
    Stats(ManifestArgs),
    /// Caption metrics (BLEU-1..4, METEOR, ROUGE-L, CIDEr-D).
    EvalCaption(EvalArgs),
    /// VQA exact-match accuracy.
    EvalVqa(EvalArgs),
    /// Scene classification top-1 accuracy.
    EvalCls(EvalArgs),
    /// Grounding Pr@0.5..0.9, mIoU and cIoU.
    EvalGround(EvalArgs),
    /// Detection AP@40 / AP@50.
    EvalDet(EvalDetArgs),
    /// Gradient check and freeze check of the desk-scale kernels.
    KernelCheck(KernelArgs),
}

#[derive(Debug, Args)]
pub struct ModeArgs {
    #[arg(long, conflicts_with = "lenient")]
    pub strict: bool,
    #[arg(long)]
    pub lenient: bool,
}

impl ModeArgs {
    fn strict(&self) -> Option<bool> {
        match (self.strict, self.lenient) {
            (true, _) => Some(true),
            (_, true) => Some(false),
            _ => None,
        }
    }
}

#[derive(Debug, Args)]
pub struct ManifestArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub mode: ModeArgs,
    /// Only read by `stats`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct CompileArgs {
    #[command(flatten)]
    pub manifest: ManifestArgs,
    #[arg(long)]
    pub stats: Option<PathBuf>,
    /// Restrict detection sources to one box format.
    #[arg(long)]
    pub box_format: Option<BoxFormat>,
    #[arg(long)]
    pub referring: bool,
    #[arg(long)]
    pub shuffle_turns: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Compiled ground-truth records (JSONL).
    #[arg(long)]
    pub gt: PathBuf,
    /// Predictions (JSONL).
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EvalDetArgs {
    #[command(flatten)]
    pub eval: EvalArgs,
    #[command(flatten)]
    pub mode: ModeArgs,
    #[arg(long, default_value = "hbb")]
    pub box_format: BoxFormat,
    #[arg(long)]
    pub iou_threshold: Option<f64>,
    /// TSV of `id, index, score` overriding inline scores.
    #[arg(long)]
    pub score_file: Option<PathBuf>,
    #[arg(long)]
    pub score_threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct KernelArgs {
    #[arg(long, default_value_t = 2)]
    pub stage: u8,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
    /// Perturb analytic gradients (negative control).
    #[arg(long)]
    pub corrupt_grad: bool,
}

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn rejected(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }

    fn io(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }
}

impl From<CorpusError> for Failure {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Rejected(diags) => {
                let mut msg = e_count(&diags);
                for d in diags.iter().filter(|d| d.is_error()) {
                    msg.push('\n');
                    msg.push_str(&d.to_string());
                }
                Failure::rejected(msg)
            }
            other => Failure::io(other.to_string()),
        }
    }
}

fn e_count(diags: &[crate::ingest::Diagnostic]) -> String {
    format!("{} error(s) in strict mode", diags.iter().filter(|d| d.is_error()).count())
}

impl From<MetricError> for Failure {
    fn from(e: MetricError) -> Self {
        Failure::rejected(e.to_string())
    }
}

impl From<KernelError> for Failure {
    fn from(e: KernelError) -> Self {
        match e {
            KernelError::Io { .. } => Failure::io(e.to_string()),
            other => Failure::rejected(other.to_string()),
        }
    }
}

type CliResult = Result<(), Failure>;

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::io(format!("cannot read {}: {e}", path.display())))
}

fn emit(out: Option<&Path>, data: &str) -> CliResult {
    match out {
        Some(p) => std::fs::write(p, data).map_err(|e| Failure::io(format!("cannot write {}: {e}", p.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(data.as_bytes()).map_err(|e| Failure::io(format!("stdout: {e}")))
        }
    }
}

fn compile_manifest(args: &ManifestArgs, extra: CompileOptions) -> Result<CompileOutput, Failure> {
    let manifest = load_manifest(&args.manifest)?;
    let opts = CompileOptions { strict: args.mode.strict(), seed: args.seed, ..extra };
    let out = compile_corpus(&manifest, &opts)?;
    for d in &out.diagnostics {
        eprintln!("{d}");
    }
    Ok(out)
}

fn cmd_compile(a: &CompileArgs) -> CliResult {
    let extra = CompileOptions {
        box_format: a.box_format,
        referring: a.referring.then_some(true),
        shuffle_turns: a.shuffle_turns.then_some(true),
        ..Default::default()
    };
    let out = compile_manifest(&a.manifest, extra)?;
    emit(a.manifest.out.as_deref(), &records_to_jsonl(&out.records))?;
    if let Some(p) = &a.stats {
        emit(Some(p), &out.stats.to_tsv())?;
    }
    eprintln!("compiled {} records ({} rounds)", out.stats.total_records, out.stats.total_rounds);
    Ok(())
}

fn cmd_validate(a: &ManifestArgs) -> CliResult {
    let out = compile_manifest(a, CompileOptions::default())?;
    let errors = out.diagnostics.iter().filter(|d| d.is_error()).count();
    let warnings = out.diagnostics.len() - errors;
    eprintln!("{} records, {errors} error(s), {warnings} warning(s)", out.records.len());
    if errors > 0 {
        return Err(Failure::rejected(format!("{errors} sample(s) rejected")));
    }
    Ok(())
}

fn cmd_stats(a: &ManifestArgs) -> CliResult {
    let out = compile_manifest(a, CompileOptions::default())?;
    emit(a.out.as_deref(), &out.stats.to_tsv())
}

pub fn parse_records(text: &str) -> Result<Vec<InstructionRecord>, Failure> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| Failure::rejected(format!("ground truth line {}: {e}", n + 1))))
        .collect()
}

fn finish(mut rep: EvalReport, seed: u64, out: Option<&Path>) -> CliResult {
    rep.seed = seed;
    emit(out, &rep.to_tsv())
}

type TextEval = fn(&[InstructionRecord], &[crate::metrics::TextPrediction]) -> Result<EvalReport, MetricError>;

fn cmd_eval_text(a: &EvalArgs, eval: TextEval) -> CliResult {
    let gt = parse_records(&read(&a.gt)?)?;
    let preds = parse_text_predictions(&read(&a.pred)?)?;
    finish(eval(&gt, &preds)?, a.seed, a.out.as_deref())
}

fn cmd_eval_det(a: &EvalDetArgs) -> CliResult {
    let gt = parse_records(&read(&a.eval.gt)?)?;
    let lines = parse_detection_predictions(&read(&a.eval.pred)?)?;
    let scores = match &a.score_file {
        Some(p) => Some(ScoreTable::parse_tsv(&read(p)?)?),
        None => None,
    };
    let opts = DetectionEvalOptions {
        format: a.box_format,
        strict: a.mode.strict().unwrap_or(true),
        iou_threshold: a.iou_threshold,
        scores,
        score_threshold: a.score_threshold,
    };
    finish(eval_detection(&gt, &lines, &opts)?, a.eval.seed, a.eval.out.as_deref())
}

fn cmd_kernel_check(a: &KernelArgs) -> CliResult {
    let stage = Stage::try_from(a.stage).map_err(|e| Failure::io(e.to_string()))?;
    if stage == Stage::AlignmentPretrain {
        return Err(Failure::io("kernel-check supports stages 2 and 3"));
    }
    let mut model = Model::init(KernelConfig::desk(stage), a.seed)?;
    let input = KernelInput::random(&model.config, 2, 4, a.seed.wrapping_add(1));
    let opts = GradcheckOptions { corrupt: a.corrupt_grad, ..Default::default() };
    let report = gradcheck_model(&model, &input, &model.params.trainable_names(), &opts)?;
    let freeze = freeze_invariance(&mut model, &input, a.steps, AdamWConfig { lr: 1e-2, ..Default::default() })?;

    let mut text = format!("# stage={} seed={} h={:e} threshold={:e}\n", stage, a.seed, opts.h, opts.threshold);
    text.push_str(&report.to_tsv());
    emit(a.out.as_deref(), &text)?;
    eprintln!(
        "gradcheck: {} parameters, max relative error {:.3e}",
        report.entries.len(),
        report.max_rel_error()
    );
    eprintln!(
        "freeze check: {} steps, loss {:.6} -> {:.6}, {} frozen parameter(s) changed",
        freeze.steps,
        freeze.initial_loss,
        freeze.final_loss,
        freeze.changed_frozen.len()
    );
    let mut failed: Vec<String> = report.failures().map(|f| f.name.clone()).collect();
    failed.extend(freeze.changed_frozen.iter().map(|n| format!("{n} (changed while frozen)")));
    if !freeze.passed() && freeze.changed_frozen.is_empty() {
        failed.push("no trainable parameter moved".into());
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::rejected(format!("failing: {}", failed.join(", "))))
    }
}

pub fn execute(cli: &Cli) -> CliResult {
    match &cli.command {
        Command::Compile(a) => cmd_compile(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Stats(a) => cmd_stats(a),
        Command::EvalCaption(a) => cmd_eval_text(a, eval_caption),
        Command::EvalVqa(a) => cmd_eval_text(a, eval_vqa),
        Command::EvalCls(a) => cmd_eval_text(a, eval_classification),
        Command::EvalGround(a) => cmd_eval_text(a, eval_grounding),
        Command::EvalDet(a) => cmd_eval_det(a),
        Command::KernelCheck(a) => cmd_kernel_check(a),
    }
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
