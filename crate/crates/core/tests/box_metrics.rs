use std::path::PathBuf;

use proptest::prelude::*;
use rsinstruct::compiler::{parse_box_text, BoxFormat};
use rsinstruct::geometry::{BoxShape, HorizontalBox};
use rsinstruct::metrics::*;
use serde_json::Value;

fn read(name: &str) -> Value {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/metrics").join(name);
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn hbb_of(text: &str) -> Option<HorizontalBox> {
    parse_box_text(text).ok().map(|b| HorizontalBox::from_slice(b.values()).unwrap())
}

fn shape_of(text: &str) -> BoxShape {
    BoxShape::from_values(parse_box_text(text).unwrap().values()).unwrap()
}

#[test]
fn grounding_fixture_matches_oracle() {
    let fx = read("grounding6.json");
    let oracle = &read("box_metrics_oracle.json")["grounding"];
    let pairs: Vec<_> = fx["pairs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| (hbb_of(p["pred"].as_str().unwrap()), hbb_of(p["truth"].as_str().unwrap()).unwrap()))
        .collect();
    let s = grounding_metrics(&pairs).unwrap();
    for (t, v) in &s.precision_at {
        assert_eq!(*v, oracle[format!("Pr@{t:.1}")].as_f64().unwrap(), "Pr@{t}");
    }
    assert!((s.miou - oracle["mIoU"].as_f64().unwrap()).abs() < 1e-12);
    assert!((s.ciou - oracle["cIoU"].as_f64().unwrap()).abs() < 1e-12);
    assert_eq!(s.unparseable, 1);
}

fn detection_fixture(score_key: &str) -> (Vec<DetectionPrediction>, Vec<GroundTruthBox>) {
    let fx = read("detection3x4.json");
    let image = fx["image"].as_str().unwrap();
    let gts = fx["ground_truth"]
        .as_array()
        .unwrap()
        .iter()
        .map(|g| GroundTruthBox {
            image_id: image.into(),
            category: g["category"].as_str().unwrap().into(),
            shape: shape_of(g["box"].as_str().unwrap()),
        })
        .collect();
    let preds = fx["predictions"]
        .as_array()
        .unwrap()
        .iter()
        .enumerate()
        .map(|(i, p)| DetectionPrediction {
            image_id: image.into(),
            index: i,
            category: p["category"].as_str().unwrap().into(),
            shape: shape_of(p["box"].as_str().unwrap()),
            score: p[score_key].as_f64(),
        })
        .collect();
    (preds, gts)
}

#[test]
fn detection_fixture_matches_oracle() {
    let oracle = &read("box_metrics_oracle.json")["detection"];
    let (preds, gts) = detection_fixture("score");
    for (t, key) in [(0.4, "AP@40"), (0.5, "AP@50")] {
        let ap = detection_ap(&preds, &gts, t, BoxFormat::Hbb).unwrap();
        assert!((ap - oracle[key].as_f64().unwrap()).abs() < 1e-12, "{key} = {ap}");
    }
    let obb = detection_ap(&preds, &gts, 0.5, BoxFormat::Obb).unwrap();
    assert!((obb - oracle["AP@50"].as_f64().unwrap()).abs() < 1e-12);
}

#[test]
fn clip_filtering_raises_ap() {
    let fx = read("detection3x4.json");
    let oracle = &read("box_metrics_oracle.json")["detection"];
    let (mut preds, gts) = detection_fixture("score");
    let base = detection_ap(&preds, &gts, 0.5, BoxFormat::Hbb).unwrap();
    let mut table = ScoreTable::default();
    for (i, p) in fx["predictions"].as_array().unwrap().iter().enumerate() {
        table.insert("P0007", i, p["clip_score"].as_f64().unwrap());
    }
    attach_external_scores(&mut preds, &table, true).unwrap();
    let kept = filter_by_score(&preds, fx["clip_threshold"].as_f64().unwrap());
    assert_eq!(kept.len(), 3);
    let filtered = detection_ap(&kept, &gts, 0.5, BoxFormat::Hbb).unwrap();
    assert!((filtered - oracle["AP@50_clip_filtered"].as_f64().unwrap()).abs() < 1e-12);
    assert!(filtered > base);
}

fn unit_box() -> impl Strategy<Value = HorizontalBox> {
    (0u32..90, 0u32..90, 1u32..10, 1u32..10).prop_map(|(x, y, w, h)| {
        let f = |v: u32| v as f64 / 100.0;
        HorizontalBox::new(f(x), f(y), f(x + w), f(y + h)).unwrap()
    })
}

proptest! {
    #[test]
    fn precision_non_increasing(pairs in prop::collection::vec((prop::option::of(unit_box()), unit_box()), 1..20)) {
        let s = grounding_metrics(&pairs).unwrap();
        for w in s.precision_at.windows(2) {
            prop_assert!(w[1].1 <= w[0].1);
        }
        prop_assert!((0.0..=1.0).contains(&s.miou) && (0.0..=1.0).contains(&s.ciou));
    }

    #[test]
    fn ciou_equals_miou_for_equal_unions(offsets in prop::collection::vec((0u32..50, 0u32..50), 1..10)) {
        // every truth is a 0.2 square and every prediction the same square shifted by 0.1
        let pairs: Vec<_> = offsets
            .iter()
            .map(|&(x, y)| {
                let (x, y) = (x as f64 / 100.0, y as f64 / 100.0);
                (
                    Some(HorizontalBox::new(x + 0.1, y, x + 0.3, y + 0.2).unwrap()),
                    HorizontalBox::new(x, y, x + 0.2, y + 0.2).unwrap(),
                )
            })
            .collect();
        let s = grounding_metrics(&pairs).unwrap();
        prop_assert!((s.ciou - s.miou).abs() < 1e-9);
    }

    #[test]
    fn trailing_false_positive_keeps_ap(
        gts in prop::collection::vec(unit_box(), 1..6),
        extra in prop::collection::vec((unit_box(), 0.0f64..1.0), 0..6),
    ) {
        let gt: Vec<GroundTruthBox> = gts
            .iter()
            .map(|b| GroundTruthBox { image_id: "a".into(), category: "c".into(), shape: BoxShape::Horizontal(*b) })
            .collect();
        let mut preds: Vec<DetectionPrediction> = extra
            .iter()
            .enumerate()
            .map(|(i, (b, s))| DetectionPrediction {
                image_id: "a".into(),
                index: i,
                category: "c".into(),
                shape: BoxShape::Horizontal(*b),
                score: Some(1.0 + s),
            })
            .collect();
        let before = detection_ap(&preds, &gt, 0.5, BoxFormat::Hbb).unwrap();
        preds.push(DetectionPrediction {
            image_id: "b".into(),
            index: 0,
            category: "c".into(),
            shape: BoxShape::Horizontal(gts[0]),
            score: Some(0.5),
        });
        let after = detection_ap(&preds, &gt, 0.5, BoxFormat::Hbb).unwrap();
        prop_assert_eq!(before, after);
    }
}
