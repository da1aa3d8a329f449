mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::{bracket_spans, compile_fixture, fixture};
use rsinstruct::compiler::*;
use rsinstruct::ingest::{parse_caption_file, Modality, ParseOptions, Payload};

const FULL: &str = "corpus/manifest.toml";

#[test]
fn corpus_covers_tasks_and_modalities() {
    let out = compile_fixture(FULL);
    assert!(out.diagnostics.iter().all(|d| !d.is_error()), "{:?}", out.diagnostics);
    let samples: BTreeSet<&str> = out.records.iter().map(|r| r.id.as_str()).collect();
    assert!(samples.len() >= 50, "{} samples", samples.len());
    let tasks: BTreeSet<&str> = out.records.iter().map(|r| r.task.as_str()).collect();
    for t in ["classification", "caption", "vqa", "detection_hbb", "detection_obb", "grounding_locate", "region_caption"] {
        assert!(tasks.contains(t), "missing {t}");
    }
    let mods: BTreeSet<Modality> = out.records.iter().map(|r| r.modality).collect();
    assert_eq!(mods.len(), 3);
    assert!(out.records.iter().all(InstructionRecord::is_well_formed));
}

#[test]
fn caption_rounds_equal_unique_captions() {
    let out = compile_fixture(FULL);
    let mut unique = BTreeMap::new();
    for f in ["captions_optical.jsonl", "captions_infrared.jsonl"] {
        let parsed = parse_caption_file(&fixture(&format!("corpus/{f}")), &ParseOptions::default()).unwrap();
        for s in parsed.samples {
            let Payload::Captions(c) = &s.payload else { panic!() };
            let set: BTreeSet<&str> = c.iter().map(|c| c.trim()).collect();
            assert!(set.len() <= c.len());
            unique.insert(s.id.clone(), set.len());
        }
    }
    let caps: Vec<_> = out.records.iter().filter(|r| r.task == Task::Caption).collect();
    assert_eq!(caps.len(), unique.len());
    assert!(caps.iter().any(|r| r.round_count() < 3), "fixture should contain duplicates");
    for r in caps {
        assert_eq!(r.round_count(), unique[&r.id], "{}", r.id);
    }
}

#[test]
fn vqa_suffix_exactly_once() {
    let out = compile_fixture(FULL);
    let vqa: Vec<_> = out.records.iter().filter(|r| r.task == Task::Vqa).collect();
    assert_eq!(vqa.len(), 10);
    for r in vqa {
        for (h, _) in r.rounds() {
            assert_eq!(h.matches(VQA_SUFFIX).count(), 1, "{h}");
        }
    }
}

#[test]
fn box_strings_round_trip() {
    let out = compile_fixture(FULL);
    let mut n = 0;
    for r in &out.records {
        for t in &r.turns {
            for span in bracket_spans(&t.text) {
                let b = parse_box_text(span).unwrap_or_else(|e| panic!("{span}: {e}"));
                assert_eq!(serialize_box_text(&b), span);
                n += 1;
            }
        }
    }
    assert!(n > 40, "{n} boxes");
}

#[test]
fn referring_rounds_per_category() {
    let out = compile_fixture(FULL);
    let r = out.records.iter().find(|r| r.task == Task::DetectionObb && r.id == "dobb_003").unwrap();
    let (items, bad) = parse_detection_answer(&r.turns[1].text);
    assert_eq!(bad, 0);
    let cats: BTreeSet<&str> = items.iter().map(|(c, _)| c.as_str()).collect();
    assert_eq!(r.round_count(), 1 + cats.len());
    assert!(r.turns[0].text.contains("oriented bounding boxes"));
}

#[test]
fn stats_rows_sum_to_records() {
    let out = compile_fixture(FULL);
    let keys: BTreeSet<(Task, &str)> = out.stats.rows.iter().map(|r| (r.task, r.source.as_str())).collect();
    assert_eq!(keys.len(), out.stats.rows.len(), "one row per (task, source)");
    assert_eq!(out.stats.rows.iter().map(|r| r.records).sum::<usize>(), out.records.len());
    let tsv = out.stats.to_tsv();
    for line in tsv.lines().skip(1).filter(|l| !l.starts_with("TOTAL")) {
        let ty = line.split('\t').nth(3).unwrap();
        assert!(["optical", "SAR", "infrared"].contains(&ty), "{line}");
    }
}

#[test]
fn compilation_is_deterministic() {
    let a = compile_fixture(FULL);
    let b = compile_fixture(FULL);
    assert_eq!(records_to_jsonl(&a.records), records_to_jsonl(&b.records));
    assert_eq!(a.stats.to_tsv(), b.stats.to_tsv());
}

#[test]
fn small_manifest_has_fifteen_records() {
    let out = compile_fixture("corpus/manifest_small.toml");
    assert_eq!(out.records.len(), 15);
}

#[test]
fn seeded_shuffle_is_reproducible() {
    let m = load_manifest(&fixture(FULL)).unwrap();
    let opts = CompileOptions { shuffle_turns: Some(true), seed: Some(9), ..Default::default() };
    let a = compile_corpus(&m, &opts).unwrap();
    let b = compile_corpus(&m, &opts).unwrap();
    assert_eq!(a.records, b.records);
    assert!(a.records.iter().all(InstructionRecord::is_well_formed));
}
