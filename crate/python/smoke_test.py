"""Smoke test for the pyrsinstruct extension.

Build first:  pip install --no-build-isolation -e crates/python
Run:          python python/smoke_test.py
"""

import json
import math
import pathlib
import random

import pyrsinstruct as rs

ROOT = pathlib.Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "crates" / "core" / "tests" / "fixtures"


def check_geometry():
    assert rs.hbb_iou([0, 0, 2, 2], [1, 0, 3, 2]) == 1 / 3
    quad = [12, 2, 22, 12, 12, 22, 2, 12]
    canon = rs.canonicalize_obb(quad)
    assert rs.canonicalize_obb(canon) == canon
    assert math.isclose(rs.obb_iou(quad, canon), 1.0)
    try:
        from shapely.geometry import Polygon
    except ImportError:
        return
    rng = random.Random(5)
    for _ in range(50):
        a = [v + rng.uniform(-2, 2) for v in quad]
        b = [v + rng.uniform(3, 6) for v in quad]
        pa, pb = (Polygon(list(zip(q[0::2], q[1::2]))) for q in (a, b))
        want = pa.intersection(pb).area / pa.union(pb).area
        assert abs(rs.obb_iou(a, b) - want) < 1e-9


def check_box_text():
    text = rs.box_to_text([10, 20, 30, 40], 100, 200)
    assert text == "[0.1000,0.1000,0.3000,0.2000]", text
    assert rs.parse_box_text(text) == [0.1, 0.1, 0.3, 0.2]
    try:
        rs.box_to_text([10, 20, 130, 40], 100, 200)
    except ValueError:
        pass
    else:
        raise AssertionError("out-of-bounds box accepted in strict mode")


def check_metrics():
    rows = [("a", "a small white boat", ["a small white boat", "one boat on water"])]
    s = rs.caption_scores(rows)
    assert s["BLEU-1"] == 1.0 and s["ROUGE-L"] == 1.0
    g = rs.grounding_metrics([([0, 0, 0.5, 0.5], [0, 0, 0.5, 0.5]), (None, [0.1, 0.1, 0.2, 0.2])])
    assert g["Pr@0.5"] == 0.5 and g["mIoU"] == 0.5
    ap = rs.detection_ap([("plane", [0, 0, 10, 10], 0.9)], [("plane", [0, 0, 10, 10])])
    assert ap == 1.0
    table = rs.ScoreTable()
    table.insert("img", 0, 0.7)
    assert len(table) == 1 and table.get("img", 0) == 0.7


def check_compile_and_eval():
    records, stats = rs.compile_manifest(str(FIXTURES / "corpus" / "manifest.toml"))
    lines = [json.loads(l) for l in records.splitlines()]
    assert len(lines) == 69
    assert stats.startswith("Task\tData\tSize\tType\tTurns")
    preds = []
    for r in lines:
        if r["task"] != "vqa":
            continue
        answers = [t["value"] for t in r["conversations"] if t["from"] == "assistant"]
        preds += [json.dumps({"id": r["id"], "turn": i, "text": a}) for i, a in enumerate(answers)]
    rep = rs.evaluate("vqa", records, "\n".join(preds))
    assert rep["accuracy"] == 1.0


def check_kernels():
    m = rs.Model(stage=3, seed=1)
    assert m.stage == 3
    assert all(n.endswith((".alpha", ".beta")) for n in m.trainable_names())
    report, ok = m.gradcheck(seed=2)
    assert ok, report
    _, bad = m.gradcheck(seed=2, corrupt=True)
    assert not bad
    before, after = m.train(steps=20, lr=1e-2, seed=3)
    assert after < before
    shape, values = m.parameter("embed.weight")
    assert len(values) == math.prod(shape)
    assert m.to_bytes()[:4] == b"RSPS"


if __name__ == "__main__":
    for check in (check_geometry, check_box_text, check_metrics, check_compile_and_eval, check_kernels):
        check()
        print(f"ok  {check.__name__}")
    print("smoke test passed")
