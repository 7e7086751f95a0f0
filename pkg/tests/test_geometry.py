import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from guidestage.geometry import (
    EmptyOrDegenerate,
    ExpandDir,
    Mask,
    RotatedRect,
    convex_hull,
    min_rotated_rect,
    pgm_bytes,
    read_pgm_mask,
    rect_iou,
    resize_with_fixed_dim,
)
from guidestage.oracles import iou_raster, min_rect_area_sweep
from guidestage.testing import random_convex_mask, random_rect


def _inside_or_on(hull, pts, tol=1e-9):
    ok = np.ones(len(pts), dtype=bool)
    for a, b in zip(hull, np.roll(hull, -1, axis=0)):
        cross = (b[0] - a[0]) * (pts[:, 1] - a[1]) - (b[1] - a[1]) * (pts[:, 0] - a[0])
        ok &= cross >= -tol
    return ok


# -- convex hull ------------------------------------------------------------------

def test_hull_of_triangle_is_the_triangle():
    tri = np.array([[0.0, 0.0], [4.0, 0.0], [1.0, 3.0]])
    hull = convex_hull(tri)
    assert sorted(map(tuple, hull)) == sorted(map(tuple, tri))


def test_hull_drops_interior_and_collinear_points():
    pts = [[0, 0], [1, 0], [1, 1], [0, 1], [0.5, 0.5], [0.5, 0.0]]
    hull = convex_hull(pts)
    assert sorted(map(tuple, hull)) == [(0, 0), (0, 1), (1, 0), (1, 1)]


def test_hull_is_counterclockwise():
    hull = convex_hull(np.random.default_rng(0).standard_normal((50, 2)))
    x, y = hull[:, 0], hull[:, 1]
    assert np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)) > 0


def test_hull_degenerate_inputs():
    assert convex_hull([[2.0, 3.0]]).tolist() == [[2.0, 3.0]]
    line = convex_hull([[0, 0], [1, 1], [2, 2], [3, 3]])
    assert sorted(map(tuple, line)) == [(0, 0), (3, 3)]
    with pytest.raises(ValueError):
        convex_hull(np.zeros((0, 2)))


def test_hull_contains_500_random_points():
    pts = np.random.default_rng(1).uniform(-10, 10, (500, 2))
    assert _inside_or_on(convex_hull(pts), pts).all()


# -- min rotated rect ---------------------------------------------------------------

def test_min_rect_axis_aligned_block():
    bits = np.zeros((10, 12), dtype=bool)
    bits[2:5, 3:8] = True  # 5 wide, 3 tall
    r = min_rotated_rect(Mask(bits))
    assert (r.width, r.height, r.angle) == (4.0, 2.0, 0.0)
    assert (r.cx, r.cy) == (5.5, 3.5)


def test_min_rect_degenerate_masks():
    single = np.zeros((5, 5), dtype=bool)
    single[2, 2] = True
    with pytest.raises(EmptyOrDegenerate):
        min_rotated_rect(Mask(single))
    with pytest.raises(EmptyOrDegenerate):
        min_rotated_rect(Mask(np.zeros((5, 5), dtype=bool)))
    row = np.zeros((5, 5), dtype=bool)
    row[2, :] = True
    with pytest.raises(EmptyOrDegenerate):
        min_rotated_rect(Mask(row))


def test_min_rect_rotated_square_matches_sweep():
    n = 64
    ys, xs = np.mgrid[0:n, 0:n] + 0.5
    bits = (np.abs(xs - 32) + np.abs(ys - 32)) <= 20  # a square turned 45 degrees
    m = Mask(bits)
    r = min_rotated_rect(m)
    sweep = min_rect_area_sweep(m.pixel_centers())
    assert abs(r.area - sweep) / sweep < 0.01
    assert abs(abs(r.angle) - math.pi / 4) < 1e-9


def test_min_rect_random_masks_against_sweep_and_containment():
    rng = np.random.default_rng(2)
    for _ in range(20):
        m = random_convex_mask(rng, 40)
        r = min_rotated_rect(m)
        pts = m.pixel_centers()
        assert abs(r.area - min_rect_area_sweep(pts)) / r.area < 0.01
        assert r.contains(pts, slack=1e-9).all()
        span = pts.max(axis=0) - pts.min(axis=0)
        assert r.area <= span[0] * span[1] + 1e-9
        assert -math.pi / 4 <= r.angle < math.pi / 4


# -- resize ----------------------------------------------------------------------

def _bottom_mid(r: RotatedRect):
    _, v = r.axes
    return np.array([r.cx, r.cy]) + (r.height / 2) * v


def test_resize_up_keeps_width_and_bottom_edge():
    r = RotatedRect(50.0, 80.0, 100.0, 40.0, 0.3)
    out = resize_with_fixed_dim(r, ExpandDir.UP, 2.0)
    assert out.width == 100.0 and out.height == 200.0 and out.angle == r.angle
    assert np.allclose(_bottom_mid(out), _bottom_mid(r), atol=1e-12)


def test_resize_up_grows_towards_image_top():
    out = resize_with_fixed_dim(RotatedRect(10.0, 50.0, 10.0, 10.0, 0.0), ExpandDir.UP, 3.0)
    assert out.cy == 40.0  # bottom edge stays at y = 55


def test_resize_left_right_keeps_height_and_center():
    r = RotatedRect(5.0, 6.0, 20.0, 50.0, -0.7)
    out = resize_with_fixed_dim(r, ExpandDir.LEFT_RIGHT, 0.5)
    assert (out.cx, out.cy, out.width, out.height, out.angle) == (5.0, 6.0, 100.0, 50.0, r.angle)


def test_resize_with_own_aspect_is_identity():
    r = RotatedRect(1.5, -2.0, 8.0, 6.0, 0.4)
    for d in (ExpandDir.UP, ExpandDir.LEFT_RIGHT):
        out = resize_with_fixed_dim(r, d, r.height / r.width)
        for f in ("cx", "cy", "width", "height", "angle"):
            assert abs(getattr(out, f) - getattr(r, f)) < 1e-12


def test_resize_errors():
    r = RotatedRect(0.0, 0.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        resize_with_fixed_dim(r, ExpandDir.UP, 0.0)
    with pytest.raises(ValueError):
        resize_with_fixed_dim(r, ExpandDir.FREE, 1.0)


@settings(max_examples=60, deadline=None)
@given(
    st.floats(-50, 50), st.floats(-50, 50), st.floats(0.5, 40), st.floats(0.5, 40), st.floats(-3, 3),
    st.sampled_from([ExpandDir.UP, ExpandDir.LEFT_RIGHT]), st.floats(0.1, 10),
)
def test_resize_is_idempotent(cx, cy, w, h, ang, d, aspect):
    once = resize_with_fixed_dim(RotatedRect(cx, cy, w, h, ang), d, aspect)
    twice = resize_with_fixed_dim(once, d, aspect)
    assert abs(twice.height / twice.width - aspect) < 1e-9
    for f in ("cx", "cy", "width", "height", "angle"):
        assert getattr(twice, f) == pytest.approx(getattr(once, f), abs=1e-9)


# -- rect type -------------------------------------------------------------------

def test_rect_rejects_nonpositive_extent():
    with pytest.raises(ValueError):
        RotatedRect(0.0, 0.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        RotatedRect(0.0, 0.0, 1.0, -1.0)


def test_rect_angle_wraps_half_turn():
    r = RotatedRect(0.0, 0.0, 3.0, 1.0, math.pi / 2)
    assert r.angle == -math.pi / 2
    assert RotatedRect(0.0, 0.0, 3.0, 1.0, 3.0).angle == pytest.approx(3.0 - math.pi)


def test_rect_json_roundtrip():
    r = RotatedRect(1.25, -3.5, 4.0, 2.0, 0.3)
    d = r.to_json()
    assert set(d) == {"cx", "cy", "w", "h", "angle_deg"}
    back = RotatedRect.from_json(d)
    assert back.angle == pytest.approx(r.angle, abs=1e-15) and back.width == r.width


# -- IoU -------------------------------------------------------------------------

def test_iou_identity_and_disjoint():
    a = RotatedRect(0.0, 0.0, 4.0, 2.0, 0.5)
    assert rect_iou(a, a) == pytest.approx(1.0, abs=1e-12)
    assert rect_iou(a, RotatedRect(100.0, 0.0, 4.0, 2.0, 0.5)) == 0.0


def test_iou_offset_unit_squares_against_raster():
    a = RotatedRect(0.5, 0.5, 1.0, 1.0)
    b = RotatedRect(1.0, 0.5, 1.0, 1.0)
    assert rect_iou(a, b) == pytest.approx(1 / 3, abs=1e-12)
    assert abs(rect_iou(a, b) - iou_raster(a, b, 512)) < 0.01


def test_iou_random_pairs_symmetric_and_match_raster():
    rng = np.random.default_rng(3)
    for _ in range(30):
        a, b = random_rect(rng), random_rect(rng)
        assert rect_iou(a, b) == pytest.approx(rect_iou(b, a), abs=1e-12)
        assert abs(rect_iou(a, b) - iou_raster(a, b, 256)) < 0.02


# -- PGM -------------------------------------------------------------------------

def test_pgm_roundtrip_and_threshold(tmp_path):
    bits = np.random.default_rng(4).uniform(size=(7, 9)) > 0.5
    p = tmp_path / "m.pgm"
    p.write_bytes(pgm_bytes(Mask(bits)))
    assert np.array_equal(read_pgm_mask(p).bits, bits)
    raw = b"P5\n# comment\n3 1\n255\n" + bytes([127, 128, 255])
    p.write_bytes(raw)
    assert read_pgm_mask(p).bits.tolist() == [[False, True, True]]


def test_pgm_rejects_other_formats(tmp_path):
    p = tmp_path / "m.pgm"
    p.write_bytes(b"P2\n1 1\n255\n0")
    with pytest.raises(ValueError):
        read_pgm_mask(p)
