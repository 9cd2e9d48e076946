"""PCA reduction of the spectral axis and false-colour rendering."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .errors import BadRank, DegenerateData, ParseError, ShapeMismatch
from .imaging import HyperCube, RasterImage

PCA_SCHEMA = "rgbhsi.pca/1"
DEFAULT_SAMPLE_CAP = 1_000_000
_CHUNK = 65536


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray  # (C,)
    components: np.ndarray  # (k, C), rows are principal axes
    explained_variance: np.ndarray  # (k,)
    explained_variance_ratio: np.ndarray  # (k,)

    @property
    def k(self) -> int:
        return self.components.shape[0]

    @property
    def source_band_count(self) -> int:
        return self.components.shape[1]

    def to_json(self) -> dict:
        return {
            "schema": PCA_SCHEMA,
            "k": self.k,
            "source_band_count": self.source_band_count,
            "mean": self.mean.tolist(),
            "components": self.components.tolist(),
            "explained_variance": self.explained_variance.tolist(),
            "explained_variance_ratio": self.explained_variance_ratio.tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "PcaModel":
        if doc.get("schema") != PCA_SCHEMA:
            raise ParseError(f"unsupported PCA model schema {doc.get('schema')!r}")
        try:
            model = cls(
                mean=np.asarray(doc["mean"], dtype=np.float64),
                components=np.asarray(doc["components"], dtype=np.float64),
                explained_variance=np.asarray(doc["explained_variance"], dtype=np.float64),
                explained_variance_ratio=np.asarray(doc["explained_variance_ratio"], dtype=np.float64),
            )
        except KeyError as e:
            raise ParseError(f"PCA model missing {e}") from e
        if model.components.shape != (int(doc["k"]), int(doc["source_band_count"])):
            raise ParseError("PCA model component matrix does not match k / band count")
        return model

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "PcaModel":
        return cls.from_json(json.loads(Path(path).read_text()))


def as_pixels(data) -> np.ndarray:
    """Flatten a cube (or its ndarray) to an N x C pixel matrix."""
    if isinstance(data, HyperCube):
        data = data.data
    arr = np.asarray(data)
    if arr.ndim == 3:
        arr = arr.reshape(-1, arr.shape[2])
    if arr.ndim != 2:
        raise ShapeMismatch(f"expected N x C pixels, got shape {arr.shape}")
    return arr


def covariance(pixels: np.ndarray):
    """Sample mean and covariance accumulated over chunks.

    Sums are taken around a shift (the first chunk's mean) to limit
    cancellation on raw 16-bit data. Partial sums are additive, so chunks may
    be reduced in any order.
    """
    n, c = pixels.shape
    shift = pixels[: min(n, _CHUNK)].astype(np.float64).mean(axis=0)
    s1 = np.zeros(c)
    s2 = np.zeros((c, c))
    for start in range(0, n, _CHUNK):
        x = pixels[start : start + _CHUNK].astype(np.float64) - shift
        s1 += x.sum(axis=0)
        s2 += x.T @ x
    mean_shifted = s1 / n
    cov = (s2 - n * np.outer(mean_shifted, mean_shifted)) / (n - 1)
    return mean_shifted + shift, (cov + cov.T) / 2


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    # largest-magnitude entry of every row made positive
    idx = np.argmax(np.abs(vecs), axis=1)
    signs = np.sign(vecs[np.arange(len(vecs)), idx])
    signs[signs == 0] = 1
    return vecs * signs[:, None]


def pca_fit(
    pixels,
    k: int = 3,
    seed: int = 0,
    sample_cap: Optional[int] = DEFAULT_SAMPLE_CAP,
) -> PcaModel:
    """Fit a rank-``k`` PCA model by eigendecomposition of the spectral covariance.

    Args:
        pixels: N x C spectra, or a cube / H x W x C array.
        k: number of components kept.
        seed: seeds the uniform pixel subsample taken when N > ``sample_cap``.
        sample_cap: maximum number of pixels used; ``None`` disables subsampling.
    """
    x = as_pixels(pixels)
    n, c = x.shape
    if k < 1 or k > c:
        raise BadRank(f"k={k} not in [1, {c}]")
    if n <= k:
        raise DegenerateData(f"need more than k={k} pixels, got {n}")
    if sample_cap is not None and n > sample_cap:
        rng = np.random.default_rng(seed)
        x = x[np.sort(rng.choice(n, size=sample_cap, replace=False))]
    mean, cov = covariance(x)
    total = float(np.trace(cov))
    if not np.isfinite(total) or total <= 1e-12 * max(1.0, float(np.abs(mean).max())) ** 2:
        raise DegenerateData("pixels have (numerically) zero variance")
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:k]
    evals = np.clip(evals[order], 0.0, None)
    comps = _fix_signs(evecs[:, order].T)
    return PcaModel(mean, comps, evals, evals / total)


def pca_apply(cube: Union[HyperCube, np.ndarray], model: PcaModel) -> RasterImage:
    """Project each pixel spectrum onto the model axes; spatial size is kept."""
    data = cube.data if isinstance(cube, HyperCube) else np.asarray(cube)
    if data.ndim != 3:
        raise ShapeMismatch(f"expected H x W x C cube, got {data.shape}")
    if data.shape[2] != model.source_band_count:
        raise ShapeMismatch(
            f"cube has {data.shape[2]} bands, model expects {model.source_band_count}"
        )
    h, w, c = data.shape
    flat = data.reshape(-1, c)
    out = np.empty((flat.shape[0], model.k), dtype=np.float64)
    for start in range(0, flat.shape[0], _CHUNK):
        out[start : start + _CHUNK] = (flat[start : start + _CHUNK] - model.mean) @ model.components.T
    return RasterImage(out.reshape(h, w, model.k), "float")


def pca_inverse(projected: np.ndarray, model: PcaModel) -> np.ndarray:
    """Map projections back to spectra (the rank-k reconstruction)."""
    p = np.asarray(projected)
    return p @ model.components + model.mean


def false_color(cube: Union[HyperCube, np.ndarray], band_indices: Sequence[int]) -> RasterImage:
    """Three chosen bands, each min-max stretched to [0, 1].

    A band with zero dynamic range maps to 0.
    """
    data = cube.data if isinstance(cube, HyperCube) else np.asarray(cube)
    if len(band_indices) != 3:
        raise ValueError("false_color needs exactly three band indices")
    nb = data.shape[2]
    for b in band_indices:
        if not 0 <= b < nb:
            raise IndexError(f"band {b} out of range for {nb}-band cube")
    out = np.zeros(data.shape[:2] + (3,), dtype=np.float32)
    for i, b in enumerate(band_indices):
        band = data[:, :, b].astype(np.float64)
        lo, hi = band.min(), band.max()
        if hi > lo:
            out[:, :, i] = (band - lo) / (hi - lo)
    return RasterImage(out, "unit_float")
