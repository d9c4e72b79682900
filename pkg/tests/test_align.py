import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from photoscene.align import (
    GEO_MEDIAN_FALLBACK,
    MEDIAN_FALLBACK,
    OPTIMIZE,
    WarpBoxes,
    bounding_box,
    classify,
    coverage,
    initial_boxes,
    iou,
    match_instances,
    optimize_warp,
    select_view,
    soft_iou,
    warp_geo_to_photo,
    warp_mask_geo,
    warp_photo_to_geo,
    warp_points,
    weight_map,
)
from photoscene.errors import EmptyMask, PartNotVisible


def rect(shape, y0, x0, y1, x1):
    m = np.zeros(shape, dtype=bool)
    m[y0:y1, x0:x1] = True
    return m


def l_shape(shape=(128, 128)):
    m = rect(shape, 30, 40, 90, 100)
    m[60:90, 40:60] = False
    return m


def shifted(m, dy, dx):
    return np.roll(np.roll(m, dy, 0), dx, 1)


def brute_force_warp(field, shape, c_from, l_from, c_to, l_to):
    """Per-pixel evaluation of the box map with nearest-pixel lookup."""
    h, w = shape
    out = np.zeros(field.shape)
    inb = np.zeros(shape, dtype=bool)
    for y in range(h):
        for x in range(w):
            sy = (y - c_from[0]) / l_from[0] * l_to[0] + c_to[0]
            sx = (x - c_from[1]) / l_from[1] * l_to[1] + c_to[1]
            iy, ix = int(np.floor(sy + 0.5)), int(np.floor(sx + 0.5))
            if 0 <= iy < h and 0 <= ix < w:
                out[y, x] = field[iy, ix]
                inb[y, x] = True
    return out, inb


def test_hand_evaluated_point():
    got = warp_points(np.array([20.0, 20.0]), np.array([10.0, 10.0]), np.array([20.0, 20.0]),
                      np.array([30.0, 30.0]), np.array([40.0, 40.0]))
    np.testing.assert_array_equal(got, [50.0, 50.0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=2), st.lists(st.floats(1, 80), min_size=2, max_size=2),
       st.lists(st.floats(-50, 50), min_size=2, max_size=2), st.lists(st.floats(1, 80), min_size=2, max_size=2))
def test_box_corners_map_to_box_corners(c_p, l_p, c_g, l_g):
    c_p, l_p, c_g, l_g = map(np.array, (c_p, l_p, c_g, l_g))
    for sy in (-0.5, 0.5):
        for sx in (-0.5, 0.5):
            s = np.array([sy, sx])
            got = warp_points(c_p + s * l_p, c_p, l_p, c_g, l_g)
            np.testing.assert_allclose(got, c_g + s * l_g, rtol=1e-12, atol=1e-9)


def test_identity_boxes_are_identity_warp(rng):
    m = l_shape()
    c, l = bounding_box(m)
    uv = rng.uniform(size=m.shape + (2,))
    res = warp_geo_to_photo(uv, m, m, WarpBoxes(c, l, c, l))
    np.testing.assert_array_equal(res.mask, m)
    np.testing.assert_array_equal(res.uv[m], uv[m])
    photo = rng.uniform(size=m.shape + (3,))
    warped, wm = warp_photo_to_geo(photo, m, m, WarpBoxes(c, l, c, l))
    np.testing.assert_array_equal(warped[m], photo[m])
    np.testing.assert_array_equal(wm, m)


def test_warp_matches_brute_force(rng):
    shape = (24, 20)
    geo = rect(shape, 4, 3, 15, 12)
    photo = rect(shape, 8, 6, 22, 19)
    boxes = initial_boxes(geo, photo)
    uv = rng.uniform(size=shape + (2,))
    res = warp_geo_to_photo(uv, geo, photo, boxes)
    ref_uv, inb = brute_force_warp(uv, shape, boxes.c_p, boxes.l_p, boxes.c_g, boxes.l_g)
    ref_mask, _ = brute_force_warp(geo.astype(float), shape, boxes.c_p, boxes.l_p, boxes.c_g, boxes.l_g)
    expected = (ref_mask > 0) & inb & photo
    np.testing.assert_array_equal(res.mask, expected)
    np.testing.assert_array_equal(res.uv[expected], ref_uv[expected])


def test_out_of_bounds_sources_are_dropped():
    shape = (16, 16)
    geo = np.ones(shape, dtype=bool)
    boxes = WarpBoxes((7.5, 7.5), (16, 16), (7.5, 7.5), (8, 8))
    res = warp_geo_to_photo(np.zeros(shape + (2,)), geo, geo, boxes)
    assert res.mask[7, 7] and not res.mask[0, 0] and not res.mask[15, 15]


@settings(max_examples=40, deadline=None)
@given(st.integers(4, 30), st.integers(4, 30), st.integers(0, 20), st.integers(0, 20),
       st.floats(1.0, 2.5), st.integers(0, 10), st.integers(0, 10))
def test_roundtrip_geo_photo_geo_is_identity(h, w, y0, x0, zoom, py, px):
    """With the photo box at least as large as the geometry box every surviving
    geometry pixel comes back to itself."""
    shape = (96, 96)
    geo = rect(shape, y0, x0, y0 + h, x0 + w)
    ph, pw = int(np.ceil(h * zoom)), int(np.ceil(w * zoom))
    photo = rect(shape, py, px, min(py + ph, 96), min(px + pw, 96))
    boxes = initial_boxes(geo, photo)
    yy, xx = np.mgrid[0:96, 0:96]
    ids = np.stack([yy, xx], axis=-1).astype(np.float64)
    fwd = warp_geo_to_photo(ids, geo, photo, boxes)
    back, mask = warp_photo_to_geo(fwd.uv, fwd.mask, geo, boxes)
    assert mask.any()
    np.testing.assert_array_equal(back[mask], ids[mask])


def test_empty_photo_mask_gives_empty_output():
    m = l_shape()
    c, l = bounding_box(m)
    _, mask = warp_photo_to_geo(np.ones(m.shape + (3,)), np.zeros_like(m), m, WarpBoxes(c, l, c, l))
    assert not mask.any()


def test_identical_masks_need_no_refinement():
    m = l_shape()
    boxes, score, hist = optimize_warp(m, m)
    assert score == 1.0 and hist == [1.0] * len(hist)
    np.testing.assert_array_equal(boxes.c_g, boxes.c_p)
    np.testing.assert_array_equal(boxes.l_g, boxes.l_p)


@pytest.mark.parametrize("dy,dx", [(5, 0), (0, 5), (5, 5), (-5, 3)])
def test_translated_mask_is_recovered(dy, dx):
    m = l_shape()
    p = shifted(m, dy, dx)
    _, score, _ = optimize_warp(m, p)
    assert score >= 0.98


def test_refinement_improves_on_stray_pixels():
    m = l_shape()
    p = shifted(m, 5, 5)
    p[36, 107] = True
    boxes0 = initial_boxes(m, p)
    _, score, hist = optimize_warp(m, p)
    assert score > iou(p, warp_mask_geo(m, boxes0))
    assert all(b >= a for a, b in zip(hist, hist[1:]))


@settings(max_examples=25, deadline=None)
@given(st.integers(-8, 8), st.integers(-8, 8), st.integers(0, 2 ** 31))
def test_refinement_is_monotone(dy, dx, seed):
    rng = np.random.default_rng(seed)
    m = l_shape()
    p = shifted(m, dy, dx)
    flip = rng.uniform(size=m.shape) < 0.02
    p = p ^ (flip & (shifted(m, dy + 1, dx) ^ p))
    c, l = bounding_box(m)
    _, score, hist = optimize_warp(m, p, init=WarpBoxes(c, l, c, l))
    assert all(b >= a for a, b in zip(hist, hist[1:]))
    assert score == hist[-1] >= hist[0]


def test_match_prefers_larger_overlap():
    g = rect((64, 64), 10, 10, 40, 40)
    big = shifted(g, 1, 1)
    small = shifted(g, 26, 26)
    assert iou(g, big) > 0.8 and iou(g, small) < 0.1
    m = match_instances([g], [small, big])[0]
    assert m.photo_index == 1 and m.matched


def test_identical_masks_have_unit_soft_iou():
    g = l_shape()
    assert soft_iou(g, g) == pytest.approx(1.0)


def test_disjoint_candidate_is_flagged():
    g = rect((64, 64), 0, 0, 10, 10)
    far = rect((64, 64), 50, 50, 60, 60)
    m = match_instances([g], [far])[0]
    assert m.photo_index == 0 and not m.matched and m.soft_iou < 0.05


def test_semantic_labels_filter_candidates():
    g = rect((32, 32), 5, 5, 20, 20)
    m = match_instances([g], [g, g], geo_labels=["wall"], photo_labels=["floor", "wall"])[0]
    assert m.photo_index == 1


def test_weight_map_identical_and_orthogonal():
    mask = rect((40, 40), 0, 0, 30, 30)
    n = np.zeros((40, 40, 3))
    n[..., 2] = 1
    w, j, mode = weight_map(n, n, mask)
    assert j == mask.sum() and mode == OPTIMIZE
    np.testing.assert_array_equal(w, mask.astype(float))
    ortho = np.zeros_like(n)
    ortho[..., 0] = 1
    w, j, mode = weight_map(ortho, n, mask)
    assert j == 0 and mode == MEDIAN_FALLBACK and (w == 0).all()


def test_gating_threshold_is_exact():
    assert classify(True, 499) == MEDIAN_FALLBACK
    assert classify(True, 500) == OPTIMIZE
    assert classify(False, 10 ** 6) == GEO_MEDIAN_FALLBACK


def test_weight_threshold_is_strict():
    mask = np.ones((1, 2), dtype=bool)
    n_geo = np.tile([0.0, 0.0, 1.0], (1, 2, 1))
    z = np.array([0.95, 0.9501])
    n_inv = np.stack([np.sqrt(1 - z ** 2), np.zeros(2), z], axis=-1)[None]
    _, j, _ = weight_map(n_inv, n_geo, mask)
    assert j == 1


def test_select_single_view():
    masks = {0: rect((32, 32), 4, 4, 12, 12)}
    assert select_view({0: np.eye(4)}, masks, {0: np.zeros(8)})[0] == 0


def _pose(x):
    p = np.eye(4)
    p[0, 3] = x
    return p


def test_centered_view_beats_corner_view():
    centered = rect((64, 64), 24, 24, 40, 40)
    corner = rect((64, 64), 0, 0, 16, 16)
    assert coverage(centered) > coverage(corner)
    stats = {0: np.zeros(8), 1: np.zeros(8)}
    view, _ = select_view({0: _pose(0.0), 1: _pose(2.0)}, {0: corner, 1: centered}, stats)
    assert view == 1


def test_consensus_rejects_outlier_view():
    m = rect((64, 64), 20, 20, 44, 44)
    outlier = rect((64, 64), 16, 16, 48, 48)
    poses = {i: _pose(2.0 * i) for i in range(3)}
    stats = {0: np.zeros(8), 1: np.full(8, 0.01), 2: np.ones(8)}
    view, scores = select_view(poses, {0: m, 1: m, 2: outlier}, stats)
    assert view in (0, 1)
    assert [s.consensus for s in scores] == [1, 1, 0]


def test_close_views_are_subsampled():
    m = rect((64, 64), 20, 20, 44, 44)
    _, scores = select_view({0: _pose(0.0), 1: _pose(0.5)}, {0: m, 1: m}, {0: np.zeros(8), 1: np.zeros(8)})
    assert [s.view_index for s in scores] == [0]


def test_invisible_part_raises():
    with pytest.raises(PartNotVisible):
        select_view({0: np.eye(4)}, {0: np.zeros((8, 8), dtype=bool)}, {0: np.zeros(8)})
    with pytest.raises(EmptyMask):
        optimize_warp(np.zeros((8, 8), dtype=bool), np.ones((8, 8), dtype=bool))
