#![allow(dead_code)]

use std::path::PathBuf;

use rsinstruct::compiler::{compile_corpus, load_manifest, CompileOptions, CompileOutput};

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

pub fn compile_fixture(manifest: &str) -> CompileOutput {
    let m = load_manifest(&fixture(manifest)).unwrap();
    compile_corpus(&m, &CompileOptions::default()).unwrap()
}

/// Every `[...]` span in `text`.
pub fn bracket_spans(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = text;
    let mut offset = 0;
    while let Some(s) = rest.find('[') {
        let Some(e) = rest[s..].find(']') else { break };
        out.push(&text[offset + s..offset + s + e + 1]);
        offset += s + e + 1;
        rest = &text[offset..];
    }
    out
}

use rsinstruct::compiler::{InstructionRecord, Task};

/// Prediction JSONL that reproduces the ground truth of `task` exactly.
/// Detection lines carry a unit score per box.
pub fn perfect_predictions(records: &[InstructionRecord], task: Task) -> String {
    let mut s = String::new();
    for r in records.iter().filter(|r| r.task == task) {
        let answers: Vec<&str> = r.rounds().map(|(_, a)| a).collect();
        let lines: Vec<serde_json::Value> = match task {
            Task::Caption => vec![serde_json::json!({ "id": r.id, "text": answers[0] })],
            Task::DetectionHbb | Task::DetectionObb => {
                let n = rsinstruct::compiler::parse_detection_answer(answers[0]).0.len();
                vec![serde_json::json!({ "id": r.id, "text": answers[0], "scores": vec![1.0; n] })]
            }
            _ => answers.iter().enumerate().map(|(t, a)| serde_json::json!({ "id": r.id, "turn": t, "text": a })).collect(),
        };
        for l in lines {
            s.push_str(&l.to_string());
            s.push('\n');
        }
    }
    s
}
