"""Mask decomposition and per-component affine registration primitives.

Coordinates are (x, y) = (column, row) with integer values at pixel centers.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .errors import DegenerateFit, ImplausibleTransform
from .imaging import LabelMask

_EIGHT = np.ones((3, 3), dtype=bool)


# ----------------------------------------------------------------------------
# components


@dataclass
class Component:
    class_id: int
    instance_id: int
    coords: np.ndarray  # (N, 2) int (x, y), raster order
    bbox: tuple[int, int, int, int]  # x0, y0, x1, y1 inclusive

    @property
    def area(self) -> int:
        return len(self.coords)

    @property
    def centroid(self) -> np.ndarray:
        return self.coords.mean(axis=0)

    def local_mask(self) -> np.ndarray:
        """Boolean mask over the bounding box (origin at ``bbox[:2]``)."""
        x0, y0, x1, y1 = self.bbox
        m = np.zeros((y1 - y0 + 1, x1 - x0 + 1), dtype=bool)
        m[self.coords[:, 1] - y0, self.coords[:, 0] - x0] = True
        return m

    def to_mask(self, size: tuple[int, int]) -> np.ndarray:
        w, h = size
        m = np.zeros((h, w), dtype=bool)
        ok = (self.coords[:, 0] < w) & (self.coords[:, 1] < h)
        m[self.coords[ok, 1], self.coords[ok, 0]] = True
        return m


def components_of_binary(binary: np.ndarray, class_id: int = 1, instance_id: int = 0) -> list[Component]:
    labels, n = ndimage.label(binary, structure=_EIGHT)
    out = []
    for i, sl in enumerate(ndimage.find_objects(labels), start=1):
        if sl is None:
            continue
        ys, xs = np.nonzero(labels[sl] == i)
        ys = ys + sl[0].start
        xs = xs + sl[1].start
        coords = np.stack([xs, ys], axis=1).astype(np.int64)
        bbox = (int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))
        out.append(Component(class_id, instance_id, coords, bbox))
    return out


def connected_components(mask: LabelMask) -> list[Component]:
    """8-connected regions of constant (class, instance) label.

    Ordered by class id, instance id, then first pixel in raster order.
    """
    cls = mask.class_ids.astype(np.int64)
    key = (cls << 32) | mask.instance_ids.astype(np.int64)
    key[cls == 0] = 0
    out = []
    for k in np.unique(key):
        if k == 0:
            continue
        cid, iid = int(k >> 32), int(k & 0xFFFFFFFF)
        out.extend(components_of_binary(key == k, cid, iid))
    out.sort(key=lambda c: (c.class_id, c.instance_id, int(c.coords[0, 1]), int(c.coords[0, 0])))
    return out


# ----------------------------------------------------------------------------
# contours

# clockwise on screen (y down), starting west
_MOORE = ((-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1))
_MOORE_INDEX = {d: i for i, d in enumerate(_MOORE)}


def trace_contour(c: Component) -> np.ndarray:
    """Outer boundary of a component by Moore-neighbour tracing.

    Starts at the first pixel in raster order and walks with positive
    shoelace orientation in (x, y) (clockwise as drawn with y pointing
    down). Holes are ignored. Returns an (L, 2) int array; a single pixel
    gives one point.
    """
    m = np.pad(c.local_mask(), 1)
    x0, y0 = c.bbox[0] - 1, c.bbox[1] - 1
    sx, sy = int(c.coords[0, 0] - x0), int(c.coords[0, 1] - y0)
    start = (sx, sy)

    p = start
    back = 0  # west of the first raster pixel is background
    contour = [start]
    first_move = None
    while True:
        for k in range(1, 9):
            d = (back + k) % 8
            n = (p[0] + _MOORE[d][0], p[1] + _MOORE[d][1])
            if m[n[1], n[0]]:
                break
        else:
            break  # isolated pixel
        prev = _MOORE[(back + k - 1) % 8]
        bpos = (p[0] + prev[0], p[1] + prev[1])
        move = (p, n)
        if first_move is None:
            first_move = move
        elif move == first_move:
            break
        back = _MOORE_INDEX[(bpos[0] - n[0], bpos[1] - n[1])]
        contour.append(n)
        p = n
    if len(contour) > 1 and contour[-1] == start:
        contour.pop()
    out = np.array(contour, dtype=np.int64)
    out[:, 0] += x0
    out[:, 1] += y0
    return out


def contour_arclength(contour: np.ndarray):
    """Cumulative arc position of each point and the closed perimeter."""
    pts = np.asarray(contour, dtype=np.float64)
    if len(pts) < 2:
        return np.zeros(len(pts)), 0.0
    steps = np.linalg.norm(np.diff(pts, axis=0, append=pts[:1]), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(steps[:-1])])
    return cum, float(steps.sum())


# ----------------------------------------------------------------------------
# control points


@dataclass
class ControlPoints:
    points: np.ndarray  # (m, 2) float (x, y), trace order
    extreme: np.ndarray  # (m,) bool
    contour_index: np.ndarray  # (m,) int
    sides: dict = field(default_factory=dict)  # "min_x" etc. -> row in points

    def __len__(self):
        return len(self.points)


def default_point_count(contour_length: int) -> int:
    """16 control points, growing linearly past 512 contour pixels up to 32."""
    if contour_length <= 512:
        return 16
    return min(32, math.ceil(16 * contour_length / 512))


def extreme_indices(contour: np.ndarray) -> dict:
    pts = np.asarray(contour)
    return {
        "min_x": int(np.argmin(pts[:, 0])),
        "max_x": int(np.argmax(pts[:, 0])),
        "min_y": int(np.argmin(pts[:, 1])),
        "max_y": int(np.argmax(pts[:, 1])),
    }


def _allocate(lengths: np.ndarray, total: int) -> np.ndarray:
    # largest-remainder apportionment
    if total <= 0 or lengths.sum() <= 0:
        return np.zeros(len(lengths), dtype=int)
    quota = lengths / lengths.sum() * total
    base = np.floor(quota).astype(int)
    rem = total - base.sum()
    order = np.argsort(-(quota - base), kind="stable")
    base[order[:rem]] += 1
    return base


def sample_contour(contour: np.ndarray, n: Optional[int] = None) -> ControlPoints:
    """Sparse control points: the four extreme points plus ``n - 4`` points
    spread at uniform arc-length spacing between them.

    Extreme ties go to the first point in trace order. Repeated pixel
    coordinates are dropped. Contours with at most ``n`` points are
    returned whole.
    """
    pts = np.asarray(contour, dtype=np.int64)
    if n is None:
        n = default_point_count(len(pts))
    if n < 4:
        raise ValueError("need at least 4 control points")
    ext = extreme_indices(pts)

    if len(pts) <= n:
        chosen = list(range(len(pts)))
    else:
        cum, total = contour_arclength(pts)
        anchors = sorted(set(ext.values()))
        m = len(anchors)
        if m == 1:
            lengths = np.array([total])
        else:
            lengths = np.array(
                [(cum[anchors[(j + 1) % m]] - cum[anchors[j]]) % total for j in range(m)]
            )
        counts = _allocate(lengths, n - m)
        chosen = list(anchors)
        for j, q in enumerate(counts):
            for i in range(1, q + 1):
                s = (cum[anchors[j]] + lengths[j] * i / (q + 1)) % total
                chosen.append(_nearest_arc_index(cum, total, s))
        chosen = _dedupe(pts, chosen)
        _fill_gaps(pts, cum, total, chosen, n)

    chosen = _dedupe(pts, sorted(chosen))
    idx = np.array(chosen, dtype=np.int64)
    ext_set = set(ext.values())
    extreme = np.array([i in ext_set for i in chosen], dtype=bool)
    row_of = {}
    for r, i in enumerate(chosen):
        row_of.setdefault(tuple(pts[i]), r)
    sides = {k: row_of[tuple(pts[v])] for k, v in ext.items()}
    return ControlPoints(pts[idx].astype(np.float64), extreme, idx, sides)


def _nearest_arc_index(cum: np.ndarray, total: float, s: float) -> int:
    d = np.abs(cum - s)
    d = np.minimum(d, total - d)
    return int(np.argmin(d))


def _dedupe(pts: np.ndarray, indices) -> list[int]:
    seen = set()
    out = []
    for i in indices:
        key = (int(pts[i, 0]), int(pts[i, 1]))
        if key not in seen:
            seen.add(key)
            out.append(i)
    return out


def _fill_gaps(pts, cum, total, chosen: list[int], n: int) -> None:
    # top up after deduplication by splitting the widest remaining arc gap
    used = {(int(pts[i, 0]), int(pts[i, 1])) for i in chosen}
    while len(chosen) < n:
        order = sorted(chosen, key=lambda i: cum[i])
        pos = np.array([cum[i] for i in order])
        gaps = (np.roll(pos, -1) - pos) % total
        if len(order) == 1:
            gaps[:] = total
        added = False
        for g in np.argsort(-gaps, kind="stable"):
            lo = order[g]
            hi = order[(g + 1) % len(order)]
            span = range(lo + 1, hi) if hi > lo else itertools.chain(range(lo + 1, len(pts)), range(0, hi))
            cands = [i for i in span if (int(pts[i, 0]), int(pts[i, 1])) not in used]
            if cands:
                mid = pos[g] + gaps[g] / 2
                best = min(cands, key=lambda i: min(abs(cum[i] - mid) % total, total - abs(cum[i] - mid) % total))
                chosen.append(best)
                used.add((int(pts[best, 0]), int(pts[best, 1])))
                added = True
                break
        if not added:
            return


# ----------------------------------------------------------------------------
# affine transforms


@dataclass(frozen=True)
class AffineTransform:
    """2 x 3 matrix [A | t] mapping p -> A p + t."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (2, 3):
            raise ValueError(f"affine matrix must be 2x3, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ImplausibleTransform("non-finite affine matrix")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "AffineTransform":
        return cls(np.eye(2, 3))

    @classmethod
    def translation(cls, dx: float, dy: float) -> "AffineTransform":
        return cls(np.array([[1.0, 0.0, dx], [0.0, 1.0, dy]]))

    @classmethod
    def from_parts(cls, linear, offset) -> "AffineTransform":
        return cls(np.column_stack([np.asarray(linear, dtype=np.float64), np.asarray(offset, dtype=np.float64)]))

    @classmethod
    def about_point(cls, linear, center, shift=(0.0, 0.0)) -> "AffineTransform":
        """p -> A (p - c) + c + shift."""
        a = np.asarray(linear, dtype=np.float64)
        c = np.asarray(center, dtype=np.float64)
        return cls.from_parts(a, c - a @ c + np.asarray(shift, dtype=np.float64))

    @property
    def linear(self) -> np.ndarray:
        return self.matrix[:, :2]

    @property
    def offset(self) -> np.ndarray:
        return self.matrix[:, 2]

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.linear))

    def homogeneous(self) -> np.ndarray:
        return np.vstack([self.matrix, [0.0, 0.0, 1.0]])

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return p @ self.linear.T + self.offset

    def inverse(self) -> "AffineTransform":
        if abs(self.det) < 1e-12:
            raise ImplausibleTransform("affine transform is not invertible")
        inv = np.linalg.inv(self.linear)
        return AffineTransform.from_parts(inv, -inv @ self.offset)

    def __matmul__(self, other: "AffineTransform") -> "AffineTransform":
        # (self @ other)(p) == self(other(p))
        return AffineTransform((self.homogeneous() @ other.homogeneous())[:2])

    def to_json(self) -> list:
        return self.matrix.tolist()

    @classmethod
    def from_json(cls, doc) -> "AffineTransform":
        return cls(np.asarray(doc, dtype=np.float64))


@dataclass
class FitConfig:
    use_ransac: bool = False
    ransac_iters: int = 500
    inlier_px: float = 3.0
    seed: int = 0
    det_floor: float = 1e-3


def _split_pairs(pairs, dst=None):
    if dst is not None:
        return np.asarray(pairs, dtype=np.float64).reshape(-1, 2), np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    arr = np.asarray(pairs, dtype=np.float64).reshape(-1, 2, 2)
    return arr[:, 0], arr[:, 1]


def is_collinear(points: np.ndarray, tol: float = 1e-9) -> bool:
    p = np.asarray(points, dtype=np.float64)
    if len(p) < 3:
        return True
    s = np.linalg.svd(p - p.mean(axis=0), compute_uv=False)
    return s[1] <= tol * max(1.0, s[0])


def _lstsq_affine(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    design = np.column_stack([src, np.ones(len(src))])
    params, *_ = np.linalg.lstsq(design, dst, rcond=None)
    return params.T


def residual_rms(t: AffineTransform, src, dst) -> float:
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    if len(src) == 0:
        return 0.0
    return float(np.sqrt(np.mean(np.sum((t.apply(src) - dst) ** 2, axis=1))))


def fit_affine(pairs, dst=None, cfg: Optional[FitConfig] = None) -> AffineTransform:
    """Least-squares affine map from source to target points.

    Accepts either a sequence of ``((x, y), (x', y'))`` pairs or two N x 2
    arrays. With ``cfg.use_ransac`` the model is refit on the largest
    consensus set found from minimal 3-point samples (all triples are tried
    when there are no more of them than ``ransac_iters``).

    Raises:
        DegenerateFit: fewer than 3 pairs, or collinear sources.
        ImplausibleTransform: |det A| below ``cfg.det_floor``.
    """
    cfg = cfg or FitConfig()
    src, dst = _split_pairs(pairs, dst)
    if len(src) < 3:
        raise DegenerateFit(f"need at least 3 correspondences, got {len(src)}")
    if is_collinear(src):
        raise DegenerateFit("source points are collinear")

    if cfg.use_ransac and len(src) > 3:
        inliers = _ransac_inliers(src, dst, cfg)
        if inliers.sum() >= 3 and not is_collinear(src[inliers]):
            src, dst = src[inliers], dst[inliers]

    t = AffineTransform(_lstsq_affine(src, dst))
    if abs(t.det) < cfg.det_floor:
        raise ImplausibleTransform(f"|det A| = {abs(t.det):.3g} below floor {cfg.det_floor}")
    return t


def _ransac_inliers(src: np.ndarray, dst: np.ndarray, cfg: FitConfig) -> np.ndarray:
    n = len(src)
    if math.comb(n, 3) <= cfg.ransac_iters:
        triples = itertools.combinations(range(n), 3)
    else:
        rng = np.random.default_rng(cfg.seed)
        triples = (tuple(rng.choice(n, 3, replace=False)) for _ in range(cfg.ransac_iters))
    best = None
    best_key = (-1, 0.0)
    for tri in triples:
        idx = list(tri)
        if is_collinear(src[idx], tol=1e-6):
            continue
        m = _lstsq_affine(src[idx], dst[idx])
        err = np.linalg.norm(src @ m[:, :2].T + m[:, 2] - dst, axis=1)
        inl = err <= cfg.inlier_px
        key = (int(inl.sum()), -float(err[inl].sum()))
        if key > best_key:
            best_key, best = key, inl
    if best is None:
        return np.ones(n, dtype=bool)
    # one refinement round on the consensus set
    if best.sum() >= 3 and not is_collinear(src[best]):
        m = _lstsq_affine(src[best], dst[best])
        err = np.linalg.norm(src @ m[:, :2].T + m[:, 2] - dst, axis=1)
        refined = err <= cfg.inlier_px
        if refined.sum() >= best.sum():
            best = refined
    return best


# ----------------------------------------------------------------------------
# warping


def warp_binary(local: np.ndarray, origin, t: AffineTransform, target_size) -> np.ndarray:
    """Inverse-mapped nearest-neighbour warp of a boolean patch.

    ``local`` is a mask whose [0, 0] element sits at pixel ``origin`` = (x, y)
    of the source frame. Target pixel p is set iff the source pixel nearest to
    T^-1(p) is set.
    """
    w, h = target_size
    inv = t.inverse()
    lh, lw = local.shape
    ox, oy = origin
    corners = np.array(
        [[ox - 0.5, oy - 0.5], [ox + lw - 0.5, oy - 0.5], [ox - 0.5, oy + lh - 0.5], [ox + lw - 0.5, oy + lh - 0.5]]
    )
    tc = t.apply(corners)
    x0 = max(int(np.floor(tc[:, 0].min())) - 1, 0)
    x1 = min(int(np.ceil(tc[:, 0].max())) + 2, w)
    y0 = max(int(np.floor(tc[:, 1].min())) - 1, 0)
    y1 = min(int(np.ceil(tc[:, 1].max())) + 2, h)
    out = np.zeros((h, w), dtype=bool)
    if x0 >= x1 or y0 >= y1:
        return out
    ys, xs = np.mgrid[y0:y1, x0:x1]
    a = inv.matrix
    sx = a[0, 0] * xs + a[0, 1] * ys + a[0, 2]
    sy = a[1, 0] * xs + a[1, 1] * ys + a[1, 2]
    ix = np.floor(sx + 0.5).astype(np.int64) - ox
    iy = np.floor(sy + 0.5).astype(np.int64) - oy
    ok = (ix >= 0) & (ix < lw) & (iy >= 0) & (iy < lh)
    hit = np.zeros(ix.shape, dtype=bool)
    hit[ok] = local[iy[ok], ix[ok]]
    out[y0:y1, x0:x1] = hit
    return out


def warp_component(c: Component, t: AffineTransform, target_size: tuple[int, int]) -> np.ndarray:
    """Binary (h, w) mask of the component mapped by ``t`` into a frame of
    ``target_size`` = (w, h); pixels landing outside the frame are dropped."""
    return warp_binary(c.local_mask(), c.bbox[:2], t, target_size)
