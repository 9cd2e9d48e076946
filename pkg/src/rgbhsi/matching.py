"""Point correspondence providers between a source image and a target image.

Every provider implements ``match(source, target, queries, init=None)`` and
returns one slot per query (``None`` = no confident match). ``init`` is an
optional source -> target affine prior; providers that search locally use it
to pre-align the source before searching.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Protocol, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import BadQuery, MissingMatches, ParseError
from .geometry import AffineTransform
from .imaging import HyperCube, RasterImage, sample_bilinear


@dataclass(frozen=True)
class Correspondence:
    source: tuple[float, float]
    target: tuple[float, float]
    confidence: float = 1.0


@dataclass
class MatcherConfig:
    window_radius: int = 15
    search_radius: int = 48
    pyramid_levels: int = 3
    min_confidence: float = 0.5

    def __post_init__(self):
        if self.window_radius <= 0 or self.search_radius <= 0:
            raise ValueError("window and search radii must be positive")
        if self.pyramid_levels < 1:
            raise ValueError("pyramid_levels must be >= 1")


class Matcher(Protocol):
    def match(self, source: np.ndarray, target: np.ndarray, queries, init: Optional[AffineTransform] = None) -> list[Optional[Correspondence]]:
        ...


def as_gray(img) -> np.ndarray:
    """Single-channel float64 view of a raster, cube or array.

    RGB uses Rec. 601 luma; cubes and other multi-channel data use the
    per-pixel channel mean.
    """
    if isinstance(img, RasterImage):
        data = img.data
        if data.shape[2] == 3:
            return data.astype(np.float64) @ np.array([0.299, 0.587, 0.114])
        return data.astype(np.float64).mean(axis=2)
    if isinstance(img, HyperCube):
        return cube_projection(img)
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr.mean(axis=2)
    return arr


def cube_projection(cube: Union[HyperCube, np.ndarray], model=None) -> np.ndarray:
    """Band mean of a cube, or its first principal component when a PCA model is given."""
    data = cube.data if isinstance(cube, HyperCube) else np.asarray(cube)
    if model is None:
        return data.astype(np.float64).mean(axis=2)
    return (data.reshape(-1, data.shape[2]) - model.mean) @ model.components[0]


def _check_queries(shape, queries) -> np.ndarray:
    q = np.asarray(queries, dtype=np.float64).reshape(-1, 2)
    h, w = shape
    bad = (q[:, 0] < 0) | (q[:, 0] > w - 1) | (q[:, 1] < 0) | (q[:, 1] > h - 1) | ~np.isfinite(q).all(axis=1)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise BadQuery(f"query {i} at {tuple(q[i])} outside the {w}x{h} source frame")
    return q


def match_points(matcher, source, target, queries, init: Optional[AffineTransform] = None):
    """Validate inputs and dispatch to a provider."""
    src = as_gray(source)
    tgt = as_gray(target)
    if src.ndim != 2 or tgt.ndim != 2:
        raise BadQuery("matcher inputs must be single-channel rasters")
    q = _check_queries(src.shape, queries)
    out = matcher.match(src, tgt, q, init=init)
    if len(out) != len(q):
        raise RuntimeError(f"provider returned {len(out)} slots for {len(q)} queries")
    return out


# ----------------------------------------------------------------------------
# NCC


def _downsample(img: np.ndarray) -> np.ndarray:
    h, w = img.shape
    h2, w2 = max(h // 2, 1), max(w // 2, 1)
    a = img[: h2 * 2, : w2 * 2]
    if a.shape[0] < 2 or a.shape[1] < 2:
        return img.copy()
    return a.reshape(h2, 2, w2, 2).mean(axis=(1, 3))


def _pyramid(img: np.ndarray, levels: int) -> list[np.ndarray]:
    pyr = [img]
    for _ in range(levels - 1):
        pyr.append(_downsample(pyr[-1]))
    return pyr


def _ncc_search(src: np.ndarray, tgt: np.ndarray, center, guess, r: int, s: int, min_r: int = 2, shrink: bool = True):
    """Best NCC displacement of the source window at ``center`` over target
    windows centred within ``s`` px of ``center + guess``.

    The window radius is clipped so the source window fits the frame. Target
    windows must lie inside the target frame; when the best candidate sits
    on a range edge imposed by the frame and ``shrink`` is set, the radius
    shrinks (down to ``min_r``) and the search repeats so matches near the
    border stay reachable. Returns (displacement, score) or None.
    """
    h, w = src.shape
    cx, cy = center
    r = min(r, cx, cy, w - 1 - cx, h - 1 - cy)
    th, tw = tgt.shape
    gx, gy = cx + guess[0], cy + guess[1]
    while r >= min_r:
        res = _ncc_window(src, tgt, (cx, cy), (gx, gy), r, s)
        if res is None or res[1] is None:
            return None if res is None else res[0]
        best, (x_lo, x_hi, y_lo, y_hi) = res
        (dx, dy), _ = best
        bx, by = cx + dx, cy + dy
        on_frame_edge = (
            (bx == x_lo and x_lo > gx - s)
            or (bx == x_hi and x_hi < gx + s)
            or (by == y_lo and y_lo > gy - s)
            or (by == y_hi and y_hi < gy + s)
        )
        if not (shrink and on_frame_edge) or r == min_r:
            return best
        r -= 1
    return None


def _ncc_window(src, tgt, center, g, r, s):
    # returns None (no score possible), (None-result, None) or (best, candidate range)
    cx, cy = center
    gx, gy = g
    patch = src[cy - r : cy + r + 1, cx - r : cx + r + 1]
    pc = patch - patch.mean()
    pn = np.sqrt((pc * pc).sum())
    if pn <= 1e-9 * max(1.0, np.abs(patch).max()) * patch.size:
        return None
    th, tw = tgt.shape
    x_lo, x_hi = max(gx - s, r), min(gx + s, tw - 1 - r)
    y_lo, y_hi = max(gy - s, r), min(gy + s, th - 1 - r)
    if x_lo > x_hi or y_lo > y_hi:
        return (None, None)
    region = tgt[y_lo - r : y_hi + r + 1, x_lo - r : x_hi + r + 1]
    win = sliding_window_view(region, (2 * r + 1, 2 * r + 1))
    n = float(patch.size)
    sums = win.sum(axis=(2, 3))
    sq = (win * win).sum(axis=(2, 3))
    cross = np.einsum("ijkl,kl->ij", win, pc)
    var = sq - sums * sums / n
    with np.errstate(invalid="ignore", divide="ignore"):
        score = cross / (np.sqrt(np.clip(var, 0.0, None)) * pn)
    score[~np.isfinite(score) | (var <= 1e-12)] = -np.inf
    iy, ix = np.unravel_index(np.argmax(score), score.shape)
    if not np.isfinite(score[iy, ix]):
        return (None, None)
    best = ((x_lo + ix - cx, y_lo + iy - cy), float(score[iy, ix]))
    return best, (x_lo, x_hi, y_lo, y_hi)


class NccMatcher:
    """Coarse-to-fine normalized cross-correlation.

    The full search radius is scanned on the coarsest pyramid level; each
    finer level refines the upsampled displacement within +-2 px.
    Confidence is max(0, NCC) at full resolution.
    """

    refine_radius = 2

    def __init__(self, cfg: Optional[MatcherConfig] = None):
        self.cfg = cfg or MatcherConfig()

    def match(self, source, target, queries, init=None):
        cfg = self.cfg
        src = np.asarray(source, dtype=np.float64)
        tgt = np.asarray(target, dtype=np.float64)
        q = np.asarray(queries, dtype=np.float64).reshape(-1, 2)
        if init is not None:
            th, tw = tgt.shape
            ys, xs = np.mgrid[0:th, 0:tw].astype(np.float64)
            inv = init.inverse().matrix
            src = sample_bilinear(
                src,
                inv[0, 0] * xs + inv[0, 1] * ys + inv[0, 2],
                inv[1, 0] * xs + inv[1, 1] * ys + inv[1, 2],
            )
            q_al = init.apply(q)
        else:
            q_al = q

        levels = cfg.pyramid_levels
        spyr = _pyramid(src, levels)
        tpyr = _pyramid(tgt, levels)
        out: list[Optional[Correspondence]] = []
        for (qx, qy), (ax, ay) in zip(q, q_al):
            cx, cy = int(np.floor(ax + 0.5)), int(np.floor(ay + 0.5))
            h, w = src.shape
            if not (0 <= cx < w and 0 <= cy < h):
                out.append(None)
                continue
            res = self._match_one(spyr, tpyr, (cx, cy))
            if res is None or res[1] < cfg.min_confidence:
                out.append(None)
                continue
            (dx, dy), score = res
            target_pt = (ax + dx, ay + dy)
            out.append(Correspondence((float(qx), float(qy)), (float(target_pt[0]), float(target_pt[1])), min(1.0, max(0.0, score))))
        return out

    def _match_one(self, spyr, tpyr, center):
        cfg = self.cfg
        guess = (0, 0)
        res = None
        for lvl in range(len(spyr) - 1, -1, -1):
            f = 2**lvl
            c = (center[0] // f, center[1] // f)
            h, w = spyr[lvl].shape
            if not (0 <= c[0] < w and 0 <= c[1] < h):
                continue
            r = max(2, int(round(cfg.window_radius / f)))
            s = int(np.ceil(cfg.search_radius / f)) if res is None else self.refine_radius
            min_r = max(2, cfg.window_radius // 3) if lvl == 0 else 2
            # shrinking only at full resolution: tiny coarse windows give spurious peaks
            step = _ncc_search(spyr[lvl], tpyr[lvl], c, guess, r, s, min_r, shrink=lvl == 0)
            if step is None:
                if lvl == 0:
                    return None
                continue
            res = step
            if lvl > 0:
                guess = (2 * step[0][0], 2 * step[0][1])
        return res


# ----------------------------------------------------------------------------
# oracle and file-backed providers


class AffineOracleMatcher:
    """Answers every query with a known affine map, confidence 1."""

    def __init__(self, transform: AffineTransform):
        self.transform = transform

    def match(self, source, target, queries, init=None):
        q = np.asarray(queries, dtype=np.float64).reshape(-1, 2)
        dst = self.transform.apply(q)
        return [Correspondence((float(a), float(b)), (float(c), float(d)), 1.0) for (a, b), (c, d) in zip(q, dst)]


class LabelOracleMatcher:
    """Per-object ground truth: the query's label in ``label_map`` selects its affine."""

    def __init__(self, label_map: np.ndarray, transforms: Mapping[int, AffineTransform]):
        self.label_map = np.asarray(label_map)
        self.transforms = dict(transforms)

    def match(self, source, target, queries, init=None):
        h, w = self.label_map.shape
        out = []
        for x, y in np.asarray(queries, dtype=np.float64).reshape(-1, 2):
            xi, yi = int(np.floor(x + 0.5)), int(np.floor(y + 0.5))
            t = None
            if 0 <= xi < w and 0 <= yi < h:
                t = self.transforms.get(int(self.label_map[yi, xi]))
            if t is None:
                out.append(None)
                continue
            tx, ty = t.apply([x, y])
            out.append(Correspondence((float(x), float(y)), (float(tx), float(ty)), 1.0))
        return out


def write_correspondences(path, sample_id: str, corrs: Sequence[Correspondence], append: bool = False) -> None:
    """JSON lines: ``{"sample_id", "src": [x, y], "dst": [x, y], "confidence"}``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a" if append else "w") as fh:
        for c in corrs:
            rec = {"sample_id": sample_id, "src": list(c.source), "dst": list(c.target), "confidence": c.confidence}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_correspondences(path, sample_id: Optional[str] = None) -> list[Correspondence]:
    path = Path(path)
    if not path.exists():
        raise MissingMatches(f"correspondence file {path} not found")
    out = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            if sample_id is not None and str(rec["sample_id"]) != sample_id:
                continue
            src = tuple(float(v) for v in rec["src"])
            dst = tuple(float(v) for v in rec["dst"])
            conf = float(rec.get("confidence", 1.0))
            if len(src) != 2 or len(dst) != 2 or not np.isfinite(conf):
                raise ValueError("expected 2-D points and finite confidence")
        except (ValueError, KeyError, TypeError) as e:
            raise ParseError(f"{path}:{lineno}: {e}") from e
        out.append(Correspondence(src, dst, conf))
    return out


class FileMatcher:
    """Serves precomputed correspondences, e.g. exported from a learned matcher.

    Each query gets the stored pair whose source point is nearest, if within
    ``snap_radius`` px; the stored pair is returned as-is.
    """

    def __init__(self, path, sample_id: str, snap_radius: float = 2.0, min_confidence: float = 0.0):
        self.records = read_correspondences(path, sample_id)
        self.snap_radius = snap_radius
        self.min_confidence = min_confidence
        self._src = np.array([r.source for r in self.records], dtype=np.float64).reshape(-1, 2)

    def match(self, source, target, queries, init=None):
        q = np.asarray(queries, dtype=np.float64).reshape(-1, 2)
        if len(self.records) == 0:
            return [None] * len(q)
        out = []
        for p in q:
            d = np.linalg.norm(self._src - p, axis=1)
            i = int(np.argmin(d))
            rec = self.records[i]
            if d[i] <= self.snap_radius and rec.confidence >= self.min_confidence:
                out.append(rec)
            else:
                out.append(None)
        return out
