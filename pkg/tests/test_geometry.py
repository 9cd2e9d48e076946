from collections import deque

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from rgbhsi.errors import DegenerateFit, ImplausibleTransform
from rgbhsi.geometry import (
    AffineTransform,
    FitConfig,
    components_of_binary,
    connected_components,
    contour_arclength,
    default_point_count,
    fit_affine,
    residual_rms,
    sample_contour,
    trace_contour,
    warp_binary,
    warp_component,
)
from rgbhsi.imaging import LabelMask

NEIGHBOURS = [(dx, dy) for dx in (-1, 0, 1) for dy in (-1, 0, 1) if dx or dy]


def bfs_components(cls, inst):
    """Independent flood fill over 8-neighbours with equal (class, instance)."""
    h, w = cls.shape
    seen = np.zeros((h, w), bool)
    comps = []
    for y in range(h):
        for x in range(w):
            if cls[y, x] == 0 or seen[y, x]:
                continue
            key = (cls[y, x], inst[y, x])
            q = deque([(x, y)])
            seen[y, x] = True
            pix = set()
            while q:
                cx, cy = q.popleft()
                pix.add((cx, cy))
                for dx, dy in NEIGHBOURS:
                    nx, ny = cx + dx, cy + dy
                    if 0 <= nx < w and 0 <= ny < h and not seen[ny, nx] and (cls[ny, nx], inst[ny, nx]) == key:
                        seen[ny, nx] = True
                        q.append((nx, ny))
            comps.append(frozenset(pix))
    return comps


@settings(max_examples=60, deadline=None)
@given(arrays(np.uint8, (12, 14), elements=st.integers(0, 3)), st.booleans())
def test_components_match_flood_fill(cls, with_instances):
    inst = (cls.astype(np.int32) * 10 + np.arange(14)[None, :] // 7) if with_instances else np.zeros_like(cls, np.int32)
    inst[cls == 0] = 0
    got = {frozenset(map(tuple, c.coords.tolist())) for c in connected_components(LabelMask(cls, inst))}
    want = set(bfs_components(cls, inst))
    assert got == want
    # partition: disjoint and covering the foreground
    allpix = [p for c in got for p in c]
    assert len(allpix) == len(set(allpix)) == int((cls > 0).sum())


def test_component_basics():
    assert connected_components(LabelMask.empty((5, 5))) == []
    cls = np.zeros((5, 7), np.uint8)
    cls[1:4, 0:3] = 1
    cls[1:4, 4:7] = 1
    assert len(connected_components(LabelMask(cls))) == 2
    diag = np.zeros((4, 4), np.uint8)
    diag[1, 1] = diag[2, 2] = 2
    assert len(connected_components(LabelMask(diag))) == 1


def _single(binary):
    (c,) = components_of_binary(binary)
    return c


def test_contour_single_pixel_and_square():
    b = np.zeros((5, 5), bool)
    b[2, 3] = True
    assert trace_contour(_single(b)).tolist() == [[3, 2]]
    b = np.zeros((5, 5), bool)
    b[1:4, 1:4] = True
    assert trace_contour(_single(b)).tolist() == [[1, 1], [2, 1], [3, 1], [3, 2], [3, 3], [2, 3], [1, 3], [1, 2]]


def test_contour_ignores_holes():
    b = np.zeros((12, 12), bool)
    b[2:10, 2:10] = True
    b[4:8, 4:8] = False
    ct = trace_contour(_single(b))
    assert len(ct) == 28
    assert all(x in (2, 9) or y in (2, 9) for x, y in ct)


def _shoelace(ct):
    x, y = ct[:, 0].astype(float), ct[:, 1].astype(float)
    return 0.5 * (np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


@settings(max_examples=80, deadline=None)
@given(arrays(bool, (10, 11), elements=st.booleans()))
def test_contour_invariants(b):
    for c in components_of_binary(b):
        ct = trace_contour(c)
        comp = set(map(tuple, c.coords.tolist()))
        assert all(tuple(p) in comp for p in ct.tolist())
        if len(ct) == 1:
            continue
        steps = np.abs(np.diff(np.vstack([ct, ct[:1]]), axis=0))
        assert np.all(steps.max(axis=1) == 1)
        for x, y in ct.tolist():
            on_border = any(
                not (0 <= x + dx < b.shape[1] and 0 <= y + dy < b.shape[0]) or (x + dx, y + dy) not in comp
                for dx, dy in NEIGHBOURS
            )
            assert on_border
        if len(set(map(tuple, ct.tolist()))) >= 3:
            assert _shoelace(ct) >= 0


# ----------------------------------------------------------------------------
# control points


def _disk(r, size=32):
    ys, xs = np.mgrid[0:size, 0:size]
    c = (size - 1) / 2
    return (xs - c) ** 2 + (ys - c) ** 2 <= r * r


def test_circle_sampling_is_uniform():
    ct = trace_contour(_single(_disk(10)))
    cp = sample_contour(ct, 16)
    assert len(cp) == 16
    cum, total = contour_arclength(ct)
    pos = np.sort(cum[cp.contour_index])
    gaps = np.diff(np.append(pos, pos[0] + total))
    assert np.all(np.abs(gaps - total / 16) <= 1.5)


def _first_extremes(ct):
    # enumerate trace order, first occurrence wins
    out = {}
    for key, axis, better in (("min_x", 0, np.less), ("max_x", 0, np.greater), ("min_y", 1, np.less), ("max_y", 1, np.greater)):
        best = None
        for p in ct.tolist():
            if best is None or better(p[axis], best[axis]):
                best = p
        out[key] = best
    return out


def test_square_keeps_one_point_per_side():
    b = np.zeros((20, 20), bool)
    b[3:15, 4:16] = True
    ct = trace_contour(_single(b))
    cp = sample_contour(ct, 8)
    assert len(cp) == 8
    want = _first_extremes(ct)
    for side, row in cp.sides.items():
        assert cp.points[row].tolist() == want[side]
    assert cp.extreme.sum() == len({tuple(v) for v in want.values()})


def test_short_contour_returned_whole():
    b = np.zeros((6, 6), bool)
    b[1:3, 1:3] = True
    ct = trace_contour(_single(b))
    assert len(sample_contour(ct, 16)) == len(ct) == 4


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 14), st.integers(4, 24))
def test_sampling_invariants(r, n):
    ct = trace_contour(_single(_disk(r)))
    cp = sample_contour(ct, n)
    pts = {tuple(p) for p in cp.points.tolist()}
    assert len(pts) == len(cp)
    assert len(cp) == min(n, len({tuple(p) for p in ct.tolist()}))
    for v in _first_extremes(ct).values():
        assert tuple(float(a) for a in v) in pts


def test_default_point_count_scaling():
    assert default_point_count(100) == 16
    assert default_point_count(512) == 16
    assert default_point_count(600) == 19
    assert default_point_count(5000) == 32


# ----------------------------------------------------------------------------
# affine fitting


def test_fit_trivial_cases():
    t = fit_affine([((0, 0), (0, 0)), ((1, 0), (1, 0)), ((0, 1), (0, 1))])
    assert np.allclose(t.matrix, AffineTransform.identity().matrix)
    t = fit_affine([((0, 0), (2, 3)), ((1, 0), (3, 3)), ((0, 1), (2, 4))])
    assert np.allclose(t.linear, np.eye(2)) and np.allclose(t.offset, [2, 3])


def test_fit_matches_normal_equations():
    rng = np.random.default_rng(0)
    a = np.array([[1.2, 0.1], [-0.05, 0.9]])
    src = rng.uniform(0, 100, (6, 2))
    dst = src @ a.T + [4, -2]
    t = fit_affine(src, dst)
    # oracle: solve (X^T X) beta = X^T y directly
    x = np.hstack([src, np.ones((6, 1))])
    beta = np.linalg.solve(x.T @ x, x.T @ dst)
    assert np.allclose(t.matrix, beta.T, atol=1e-9)
    assert residual_rms(t, src, dst) < 1e-9
    assert np.allclose(t.linear, a, atol=1e-9)


def test_fit_errors():
    with pytest.raises(DegenerateFit):
        fit_affine([((0, 0), (0, 0)), ((1, 1), (1, 1))])
    with pytest.raises(DegenerateFit):
        fit_affine([((0, 0), (0, 0)), ((1, 1), (1, 1)), ((2, 2), (5, 5)), ((3, 3), (1, 0))])
    with pytest.raises(ImplausibleTransform):
        fit_affine([((0, 0), (0, 0)), ((1, 0), (1, 0)), ((0, 1), (0, 0.0001))])


def test_ransac_rejects_outliers():
    rng = np.random.default_rng(5)
    t_true = AffineTransform.from_parts([[0.95, 0.08], [-0.06, 1.04]], [7, -3])
    src = rng.uniform(0, 200, (16, 2))
    dst = t_true.apply(src)
    dst[:4] += rng.uniform(20, 40, (4, 2))
    plain = fit_affine(src, dst)
    robust = fit_affine(src, dst, cfg=FitConfig(use_ransac=True))
    assert np.abs(robust.matrix - t_true.matrix).max() < 1e-6
    assert np.abs(plain.matrix - t_true.matrix).max() > 1e-3
    again = fit_affine(src, dst, cfg=FitConfig(use_ransac=True))
    assert np.array_equal(again.matrix, robust.matrix)


def test_affine_algebra():
    a = AffineTransform.from_parts([[1.1, 0.2], [0.0, 0.8]], [3, 4])
    b = AffineTransform.translation(-2, 5)
    p = np.array([[1.0, 2.0], [-3.0, 0.5]])
    assert np.allclose((a @ b).apply(p), a.apply(b.apply(p)))
    assert np.allclose(a.inverse().apply(a.apply(p)), p)
    assert np.array_equal(AffineTransform.from_json(a.to_json()).matrix, a.matrix)


# ----------------------------------------------------------------------------
# warping


def test_warp_identity_and_translation():
    b = np.zeros((10, 12), bool)
    b[2:6, 7:12] = True
    c = _single(b)
    assert np.array_equal(warp_component(c, AffineTransform.identity(), (12, 10)), b)
    shifted = warp_component(c, AffineTransform.translation(5, 0), (12, 10))
    assert shifted.sum() == 0  # moved wholly past the right edge
    want = np.zeros_like(b)
    shifted = warp_component(c, AffineTransform.translation(-5, 0), (12, 10))
    want[2:6, 2:7] = True
    assert np.array_equal(shifted, want)
    partial = warp_component(c, AffineTransform.translation(3, 0), (12, 10))
    assert partial.sum() == 4 * 2


def _forward_count(c, t, size):
    # count target pixel centres inside the forward-mapped half-open pixel squares
    w, h = size
    ys, xs = np.mgrid[0:h, 0:w]
    hit = np.zeros((h, w), bool)
    inv = t.inverse()
    p = inv.apply(np.stack([xs.ravel(), ys.ravel()], 1).astype(float))
    for x, y in c.coords:
        d = p - (x, y)
        inside = (d[:, 0] >= -0.5) & (d[:, 0] < 0.5) & (d[:, 1] >= -0.5) & (d[:, 1] < 0.5)
        hit |= inside.reshape(h, w)
    return int(hit.sum())


def test_scale_two_area():
    b = np.zeros((5, 5), bool)
    b[1:4, 1:4] = True
    c = _single(b)
    t = AffineTransform.from_parts(2 * np.eye(2), [0, 0])
    area = int(warp_component(c, t, (12, 12)).sum())
    assert _forward_count(c, t, (12, 12)) == 36
    assert abs(area - 36) <= 0.15 * 36


def test_warp_roundtrip_iou():
    # generic transforms only: an exact half-pixel tie makes any nearest
    # round trip land one pixel off, which no tie rule avoids
    rng = np.random.default_rng(42)
    ys, xs = np.mgrid[0:64, 0:64]
    checked = 0
    for _ in range(500):
        r = rng.uniform(5.7, 14)
        cx, cy = rng.uniform(29, 34, 2)
        b = (xs - cx) ** 2 + (ys - cy) ** 2 <= r * r
        theta, s, shear = rng.uniform(-0.5, 0.5), rng.uniform(0.85, 1.25), rng.uniform(-0.1, 0.1)
        lin = s * np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]]) @ [[1, shear], [0, 1]]
        t = AffineTransform.about_point(lin, rng.uniform(29, 34, 2), rng.uniform(-6, 6, 2))
        fwd = warp_component(_single(b), t, (64, 64))
        if b.sum() < 100 or fwd.sum() < 100:
            continue
        back = warp_binary(fwd, (0, 0), t.inverse(), (64, 64))
        assert (back & b).sum() / (back | b).sum() >= 0.9
        checked += 1
    assert checked > 300


def test_singular_transform_rejected():
    b = np.ones((3, 3), bool)
    with pytest.raises(ImplausibleTransform):
        warp_component(_single(b), AffineTransform.from_parts([[1, 1], [1, 1]], [0, 0]), (5, 5))
