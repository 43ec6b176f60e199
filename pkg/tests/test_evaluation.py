import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bplab.evaluation import (
    Detection,
    detection_order,
    evaluate,
    evaluate_dirs,
    format_detection,
    load_detections,
    match_detections,
    parse_detection,
    polygon_iou,
    prf,
    write_detections,
    write_report,
)
from bplab.fields import PolygonAnnotation, write_gt_file


def square(x, y, s=1.0):
    return np.array([[x, y], [x + s, y], [x + s, y + s], [x, y + s]], dtype=float)


def test_iou_examples():
    a = square(0, 0)
    assert polygon_iou(a, a) == pytest.approx(1.0)
    assert polygon_iou(a, square(5, 5)) == 0.0
    assert polygon_iou(a, square(0.5, 0)) == pytest.approx(0.5 / 1.5)
    assert polygon_iou(a, np.array([[0, 0], [1, 1], [2, 2]])) == 0.0
    assert polygon_iou(a, a[:2]) == 0.0


def test_iou_self_intersecting_input_is_repaired():
    bowtie = np.array([[0, 0], [2, 2], [2, 0], [0, 2]], dtype=float)
    v = polygon_iou(bowtie, square(0, 0, 2))
    assert 0 < v <= 1


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=6, max_size=6))
def test_iou_symmetric_and_bounded(vals):
    a = square(vals[0], vals[1], abs(vals[2]) + 0.1)
    b = square(vals[3], vals[4], abs(vals[5]) + 0.1)
    ab, ba = polygon_iou(a, b), polygon_iou(b, a)
    assert abs(ab - ba) < 1e-9 and 0 <= ab <= 1


def brute_force_tp(dets, gts, thr):
    care = [g for g in range(len(gts)) if not gts[g].is_ignore]
    best = 0
    for k in range(len(care) + 1):
        for chosen in itertools.permutations(care, k):
            for det_ids in itertools.permutations(range(len(dets)), k):
                if all(polygon_iou(dets[d].points, gts[g].vertices) >= thr for d, g in zip(det_ids, chosen)):
                    best = max(best, k)
    return best


def test_crafted_three_by_two_matches_exhaustive_oracle():
    gts = [PolygonAnnotation(square(0, 0, 10)), PolygonAnnotation(square(20, 0, 10))]
    dets = [
        Detection(square(1, 0, 10), 0.9),  # strong match to gt 0
        Detection(square(0, 0, 9), 0.8),  # also matches gt 0, must fall through
        Detection(square(21, 1, 9), 0.7),  # matches gt 1
    ]
    m = match_detections(dets, gts)
    assert m.tp == brute_force_tp(dets, gts, 0.5) == 2
    assert (m.fp, m.fn) == (1, 0)
    assert [(d, g) for d, g, _ in m.pairs] == [(0, 0), (2, 1)]


def test_perfect_and_empty_predictions():
    gts = {"a": [PolygonAnnotation(square(0, 0, 5))], "b": [PolygonAnnotation(square(3, 3, 4))]}
    perfect = {k: [Detection(g.vertices, 1.0) for g in v] for k, v in gts.items()}
    r = evaluate(perfect, gts)
    assert (r.precision, r.recall, r.f_measure) == (1.0, 1.0, 1.0)
    r = evaluate({}, gts)
    assert (r.precision, r.recall, r.f_measure) == (0.0, 0.0, 0.0)


def test_ignore_regions():
    gts = [PolygonAnnotation(square(0, 0, 5)), PolygonAnnotation(square(10, 0, 5), is_ignore=True)]
    dets = [Detection(square(10, 0, 5), 0.9), Detection(square(0, 0, 5), 0.5)]
    m = match_detections(dets, gts)
    assert (m.tp, m.fp, m.fn, m.n_gt) == (1, 0, 0, 1)


def test_score_order_with_ties():
    dets = [Detection(square(0, 0), 0.5), Detection(square(0, 0), 0.9), Detection(square(0, 0), 0.5)]
    assert detection_order(dets) == [1, 0, 2]


def test_prf():
    assert prf(3, 1, 6) == (0.75, 0.5, pytest.approx(0.6))
    assert prf(0, 0, 0) == (0.0, 0.0, 0.0)


def random_boxes(rng, n, scale=30):
    out = []
    for _ in range(n):
        x, y = rng.uniform(0, scale, 2)
        out.append(square(x, y, rng.uniform(3, 10)))
    return out


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_greedy_bounded_by_optimum_and_monotone(seed):
    rng = np.random.default_rng(seed)
    gts = [PolygonAnnotation(b) for b in random_boxes(rng, int(rng.integers(1, 4)))]
    dets = [Detection(b, float(rng.random())) for b in random_boxes(rng, int(rng.integers(0, 4)))]
    m = match_detections(dets, gts, 0.3)
    assert m.tp <= brute_force_tp(dets, gts, 0.3)
    assert m.tp + m.fn == m.n_gt and m.tp + m.fp <= len(dets)
    assert len({g for _, g, _ in m.pairs}) == m.tp
    extra = Detection(random_boxes(rng, 1)[0], float(rng.random()))
    assert match_detections(dets + [extra], gts, 0.3).tp >= m.tp


def test_detection_format_roundtrip(tmp_path):
    pts = np.array([[1.234, 5.0], [6.0, 7.5], [3.0, 9.0]])
    line = format_detection(pts, 0.87654321)
    assert line == "0.876543;1.23,5.00,6.00,7.50,3.00,9.00"
    det = parse_detection(line)
    np.testing.assert_allclose(det.points, np.round(pts, 2))
    assert parse_detection("") is None
    with pytest.raises(ValueError):
        parse_detection("0.5;1,2,3")
    write_detections(tmp_path / "x.txt", [det, det])
    assert len(load_detections(tmp_path / "x.txt")) == 2


def test_evaluate_dirs_reports_file_mismatches(tmp_path):
    gt_dir, pred_dir = tmp_path / "gt", tmp_path / "pred"
    gt_dir.mkdir()
    pred_dir.mkdir()
    write_gt_file(gt_dir / "a.txt", [PolygonAnnotation(square(0, 0, 5))])
    write_gt_file(gt_dir / "b.txt", [PolygonAnnotation(square(0, 0, 5))])
    write_detections(pred_dir / "a.txt", [Detection(square(0, 0, 5), 0.9)])
    write_detections(pred_dir / "zzz.txt", [])
    report, files = evaluate_dirs(gt_dir, pred_dir)
    assert files.missing_predictions == ["b"] and files.unexpected_predictions == ["zzz"]
    assert (report.tp, report.fn) == (1, 1)
    write_report(report, tmp_path / "out", files)
    summary = json.loads((tmp_path / "out" / "report.json").read_text())
    assert summary["recall"] == 0.5 and summary["missing_predictions"] == ["b"]
    assert "f_measure = " in (tmp_path / "out" / "report.txt").read_text()
    assert (tmp_path / "out" / "per_image.csv").read_text().splitlines()[0] == "image,tp,fp,fn,n_gt"
