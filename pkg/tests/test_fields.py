import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bplab.fields import (
    DegeneratePolygonWarning,
    OverlapWarning,
    PolygonAnnotation,
    boundary_mask,
    compute_classification_map,
    compute_direction_field,
    compute_distance_field,
    compute_prior_maps,
    format_gt_line,
    load_gt_file,
    nearest_boundary,
    normalize_polygon,
    parse_gt_line,
    rasterize_instances,
    signed_area,
    write_gt_file,
)

from .conftest import random_scene, random_star


# -- independent oracles -----------------------------------------------------


def winding_number(px, py, poly):
    """Scalar winding number of ``poly`` around ``(px, py)``."""
    wn = 0
    n = len(poly)
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        cross = (x1 - x0) * (py - y0) - (px - x0) * (y1 - y0)
        if y0 <= py < y1 and cross > 0:
            wn += 1
        elif y1 <= py < y0 and cross < 0:
            wn -= 1
    return wn


def oracle_labels(anns, size):
    h, w = size
    out = np.zeros(size, dtype=np.int32)
    for idx, a in enumerate(anns):
        for r in range(h):
            for c in range(w):
                if winding_number(c, r, a.vertices) != 0:
                    out[r, c] = idx + 1
    return out


def oracle_is_boundary(labels, r, c):
    h, w = labels.shape
    if labels[r, c] == 0:
        return False
    for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        rr, cc = r + dr, c + dc
        if not (0 <= rr < h and 0 <= cc < w) or labels[rr, cc] != labels[r, c]:
            return True
    return False


def oracle_fields(labels):
    """Exhaustive per-pixel nearest boundary pixel; first in raster order wins ties."""
    h, w = labels.shape
    bpix = {}
    for r in range(h):
        for c in range(w):
            if oracle_is_boundary(labels, r, c):
                bpix.setdefault(labels[r, c], []).append((c, r))
    dist = np.zeros((h, w))
    direction = np.zeros((2, h, w))
    raw = np.zeros((h, w))
    for inst, pts in bpix.items():
        pts = np.array(pts, dtype=np.float64)
        rs, cs = np.nonzero(labels == inst)
        for r, c in zip(rs, cs):
            d2 = (pts[:, 0] - c) ** 2 + (pts[:, 1] - r) ** 2
            best = 0
            for j in range(1, len(d2)):
                if d2[j] < d2[best]:
                    best = j
            bx, by = pts[best]
            raw[r, c] = np.sqrt(d2[best])
            if d2[best] > 0:
                direction[:, r, c] = [(bx - c) / raw[r, c], (by - r) / raw[r, c]]
        scale = raw[labels == inst].max()
        if scale > 0:
            dist[labels == inst] = raw[labels == inst] / scale
    return dist, direction, raw


# -- normalization and rasterization ------------------------------------------


def test_normalize_orients_ccw_and_clips():
    cw = np.array([[0, 0], [0, 10], [10, 10], [10, 0]], dtype=float)
    assert signed_area(cw) < 0
    out = normalize_polygon(cw)
    assert signed_area(out) > 0
    clipped = normalize_polygon(np.array([[-5, -5], [20, -5], [20, 20], [-5, 20]], dtype=float), (10, 12))
    assert clipped[:, 0].min() == 0 and clipped[:, 0].max() == 11
    assert clipped[:, 1].min() == 0 and clipped[:, 1].max() == 9


def test_normalize_drops_repeated_vertices():
    poly = np.array([[0, 0], [4, 0], [4, 0], [4, 4], [0, 4], [0, 0]], dtype=float)
    out = normalize_polygon(poly)
    assert len(out) == 4


def test_empty_polygon_list_gives_zero_grid():
    assert not rasterize_instances([], (8, 9)).any()


def test_integer_square_has_sixteen_pixels():
    sq = PolygonAnnotation([[2, 2], [6, 2], [6, 6], [2, 6]])
    labels = rasterize_instances([sq], (12, 12))
    assert labels.sum() == 16
    assert set(np.unique(labels)) == {0, 1}


def test_rasterizer_matches_winding_oracle(rng):
    size = (64, 64)
    anns = []
    for _ in range(20):
        cx, cy = rng.uniform(8, 56, size=2)
        anns.append(PolygonAnnotation(random_star(rng, cx, cy, 2.5, 9.5)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OverlapWarning)
        labels = rasterize_instances(anns, size)
    np.testing.assert_array_equal(labels, oracle_labels(anns, size))


def test_degenerate_polygon_is_skipped_with_warning():
    sliver = PolygonAnnotation([[1, 1], [5, 1], [5, 1.1]])
    with pytest.warns(DegeneratePolygonWarning):
        labels = rasterize_instances([sliver], (8, 8))
    assert not labels.any()


def test_overlap_later_instance_wins():
    a = PolygonAnnotation([[0.5, 0.5], [6.5, 0.5], [6.5, 6.5], [0.5, 6.5]])
    b = PolygonAnnotation([[3.5, 3.5], [8.5, 3.5], [8.5, 8.5], [3.5, 8.5]])
    with pytest.warns(OverlapWarning):
        labels = rasterize_instances([a, b], (10, 10))
    assert labels[5, 5] == 2 and labels[2, 2] == 1


def test_invalid_size_raises():
    with pytest.raises(ValueError):
        rasterize_instances([], (0, 5))


# -- nearest boundary and fields -----------------------------------------------


def square_labels(r, size=None):
    n = size or 2 * r + 5
    labels = np.zeros((n, n), dtype=np.int32)
    labels[2 : 2 + 2 * r + 1, 2 : 2 + 2 * r + 1] = 1
    return labels


def test_boundary_pixel_maps_to_itself():
    labels = square_labels(3)
    nb = nearest_boundary(labels)
    rs, cs = np.nonzero(boundary_mask(labels))
    np.testing.assert_array_equal(nb[rs, cs, 0], cs)
    np.testing.assert_array_equal(nb[rs, cs, 1], rs)


def test_square_center_distance_is_radius():
    r = 4
    labels = square_labels(r)
    _, _, raw = oracle_fields(labels)
    dist, scales = compute_distance_field(labels)
    c = 2 + r
    assert scales[1].value == pytest.approx(r)
    assert dist[c, c] == pytest.approx(1.0)
    assert raw[c, c] == pytest.approx(r)


def test_background_maps_to_itself():
    labels = square_labels(2)
    nb = nearest_boundary(labels)
    assert tuple(nb[0, 0]) == (0, 0)
    assert tuple(nb[0, 5]) == (5, 0)


def test_axis_aligned_direction():
    labels = np.zeros((13, 12), dtype=np.int32)
    labels[0:13, 1:9] = 1  # (5, 5) is 3 px from column 8, 4 from column 1, 5 from the top row
    d = compute_direction_field(labels)
    assert tuple(d[:, 5, 5]) == (1.0, 0.0)


def test_direction_ties_resolve_in_raster_order():
    labels = np.zeros((11, 13), dtype=np.int32)
    labels[2:9, 1:9] = 1  # (5, 2), (8, 5) and (5, 8) are all 3 px from (5, 5)
    assert tuple(compute_direction_field(labels)[:, 5, 5]) == (0.0, -1.0)


def test_random_instance_matches_oracle(rng):
    anns = [PolygonAnnotation(random_star(rng, 16, 16, 4, 14, k=9))]
    labels = rasterize_instances(anns, (32, 32))
    nb = nearest_boundary(labels)
    dist, direction, raw = oracle_fields(labels)
    ys, xs = np.mgrid[0:32, 0:32]
    got = np.hypot(nb[..., 0] - xs, nb[..., 1] - ys)
    np.testing.assert_allclose(got, raw, atol=1e-12)
    np.testing.assert_allclose(compute_direction_field(labels, nb), direction, atol=1e-12)


def test_thin_instance_is_flagged():
    labels = np.zeros((5, 9), dtype=np.int32)
    labels[2, 1:8] = 1
    dist, scales = compute_distance_field(labels)
    assert scales[1].thin and scales[1].value == 0
    assert not dist.any()


def test_adjacent_instances_stay_separate():
    labels = np.zeros((20, 12), dtype=np.int32)
    labels[1:9, 1:11] = 1
    labels[10:19, 1:11] = 2  # one background row between them
    nb = nearest_boundary(labels)
    for inst in (1, 2):
        rs, cs = np.nonzero(labels == inst)
        assert np.all(labels[nb[rs, cs, 1], nb[rs, cs, 0]] == inst)


def test_classification_and_ignore_masks():
    anns = [
        PolygonAnnotation([[1, 1], [5, 1], [5, 5], [1, 5]]),
        PolygonAnnotation([[8, 1], [12, 1], [12, 5], [8, 5]], is_ignore=True),
    ]
    maps = compute_prior_maps(anns, (8, 14))
    assert maps.cls.sum() == 32
    assert maps.cls[maps.ignore].min() == 1.0
    np.testing.assert_array_equal(maps.ignore, maps.labels == 2)
    assert not compute_classification_map(np.zeros((4, 4), dtype=np.int32)).any()


def check_field_invariants(maps):
    text = maps.labels > 0
    assert np.all(maps.dist[~text] == 0)
    assert np.all(maps.dir[:, ~text] == 0)
    assert maps.dist.min() >= 0 and maps.dist.max() <= 1
    norms = np.hypot(maps.dir[0], maps.dir[1])
    onb = boundary_mask(maps.labels)
    assert np.all(np.abs(norms[text & ~onb] - 1) < 1e-6)
    assert np.all(norms[onb] == 0)
    for inst, scale in maps.scales.items():
        if not scale.thin:
            assert maps.dist[maps.labels == inst].max() == pytest.approx(1.0)


def test_fields_match_oracle_on_random_scenes():
    rng = np.random.default_rng(7)
    for _ in range(5):
        anns = random_scene(rng, 64)
        maps = compute_prior_maps(anns, (64, 64))
        dist, direction, raw = oracle_fields(maps.labels)
        np.testing.assert_allclose(maps.dist, dist, atol=1e-6)
        np.testing.assert_allclose(maps.dir, direction, atol=1e-6)
        check_field_invariants(maps)
        for inst, scale in maps.scales.items():
            m = maps.labels == inst
            np.testing.assert_allclose(maps.dist[m] * scale.value, raw[m], atol=1e-6)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_field_invariants_property(seed):
    rng = np.random.default_rng(seed)
    anns = random_scene(rng, 48)
    maps = compute_prior_maps(anns, (48, 48))
    check_field_invariants(maps)
    again = compute_prior_maps(anns, (48, 48))
    np.testing.assert_array_equal(maps.dist, again.dist)
    np.testing.assert_array_equal(maps.dir, again.dir)


# -- ground-truth files ----------------------------------------------------------


def test_gt_line_roundtrip(tmp_path):
    anns = [
        PolygonAnnotation([[1, 2], [3.5, 2], [3.5, 7.25], [1, 7]]),
        PolygonAnnotation([[10, 10], [20, 10], [20, 20]], is_ignore=True),
    ]
    assert format_gt_line(anns[0]) == "1,2,3.5,2,3.5,7.25,1,7"
    assert format_gt_line(anns[1]).endswith(",#ignore")
    path = tmp_path / "a.txt"
    write_gt_file(path, anns)
    back = load_gt_file(path)
    assert [a.is_ignore for a in back] == [False, True]
    np.testing.assert_allclose(back[0].vertices, anns[0].vertices)


def test_malformed_gt_line():
    with pytest.raises(ValueError):
        parse_gt_line("1,2,3,4")
    with pytest.raises(ValueError):
        parse_gt_line("1,2,3,4,5,6,7")
    assert parse_gt_line("   ") is None
