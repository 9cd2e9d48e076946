"""Sample containers, resizing, the crop/resize/normalize chain, polygon
rasterization and geometric augmentation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import BadCrop, DegeneratePolygon, ShapeMismatch

CLASS_NAMES = ("film", "basket", "cardboard", "video_tape", "filament", "trash_bag")
CLASS_IDS = {name: i + 1 for i, name in enumerate(CLASS_NAMES)}
CLASS_LABELS = {
    "film": "Film",
    "basket": "Basket",
    "cardboard": "Cardboard",
    "video_tape": "Video tape",
    "filament": "Filament",
    "trash_bag": "Trash bag",
}
NUM_CLASSES = len(CLASS_NAMES)

# "float" marks unbounded real rasters such as PCA projections
VALUE_RANGES = ("u8_0_255", "u16_0_65535", "unit_float", "float")


class Rect(NamedTuple):
    x: int
    y: int
    width: int
    height: int

    def contained_in(self, width: int, height: int) -> bool:
        return (
            self.x >= 0
            and self.y >= 0
            and self.width > 0
            and self.height > 0
            and self.x + self.width <= width
            and self.y + self.height <= height
        )


@dataclass
class RasterImage:
    """H x W x C raster. ``data`` is always 3-D; a 2-D input gains a channel axis."""

    data: np.ndarray
    value_range: str = "u8_0_255"

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim == 2:
            self.data = self.data[:, :, None]
        if self.data.ndim != 3:
            raise ShapeMismatch(f"raster must be 2-D or 3-D, got shape {self.data.shape}")
        if self.value_range not in VALUE_RANGES:
            raise ValueError(f"unknown value range {self.value_range!r}")
        if self.value_range == "unit_float" and self.data.size:
            lo, hi = float(self.data.min()), float(self.data.max())
            if lo < 0.0 or hi > 1.0:
                raise ValueError(f"unit_float raster outside [0, 1]: [{lo}, {hi}]")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def size(self) -> tuple[int, int]:
        return (self.width, self.height)


@dataclass
class HyperCube:
    """H x W x B spectral cube (band-interleaving is a file-format concern only)."""

    data: np.ndarray
    wavelengths_nm: Optional[np.ndarray] = None

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise ShapeMismatch(f"cube must be 3-D, got shape {self.data.shape}")
        if self.wavelengths_nm is not None:
            wl = np.asarray(self.wavelengths_nm, dtype=np.float64)
            if wl.shape != (self.bands,):
                raise ShapeMismatch(f"{wl.size} wavelengths for {self.bands} bands")
            if np.any(np.diff(wl) <= 0):
                raise ValueError("wavelengths must be strictly increasing")
            self.wavelengths_nm = wl

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def bands(self) -> int:
        return self.data.shape[2]

    @property
    def size(self) -> tuple[int, int]:
        return (self.width, self.height)


@dataclass
class LabelMask:
    class_ids: np.ndarray
    instance_ids: Optional[np.ndarray] = None

    def __post_init__(self):
        self.class_ids = np.asarray(self.class_ids, dtype=np.uint8)
        if self.class_ids.ndim != 2:
            raise ShapeMismatch(f"label mask must be 2-D, got {self.class_ids.shape}")
        if self.instance_ids is None:
            self.instance_ids = np.zeros(self.class_ids.shape, dtype=np.int32)
        else:
            self.instance_ids = np.asarray(self.instance_ids, dtype=np.int32)
            if self.instance_ids.shape != self.class_ids.shape:
                raise ShapeMismatch("instance_ids and class_ids differ in shape")
            if np.any((self.instance_ids > 0) & (self.class_ids == 0)):
                raise ValueError("instance id set on a background pixel")

    @property
    def height(self) -> int:
        return self.class_ids.shape[0]

    @property
    def width(self) -> int:
        return self.class_ids.shape[1]

    @property
    def size(self) -> tuple[int, int]:
        return (self.width, self.height)

    @classmethod
    def empty(cls, size: tuple[int, int]) -> "LabelMask":
        w, h = size
        return cls(np.zeros((h, w), dtype=np.uint8))

    def labels(self) -> set[int]:
        return set(int(v) for v in np.unique(self.class_ids))


@dataclass
class Annotation:
    class_name: str
    instance_id: int
    polygon: list[tuple[float, float]]

    def __post_init__(self):
        if self.class_name not in CLASS_IDS:
            raise ValueError(f"unknown class {self.class_name!r}")
        self.polygon = [(float(x), float(y)) for x, y in self.polygon]

    @property
    def class_id(self) -> int:
        return CLASS_IDS[self.class_name]


@dataclass
class AnnotationSet:
    annotations: list[Annotation] = field(default_factory=list)
    image_size: Optional[tuple[int, int]] = None

    def __len__(self):
        return len(self.annotations)

    def __iter__(self):
        return iter(self.annotations)


@dataclass
class PreprocessConfig:
    rgb_crop: Optional[Rect] = None
    cube_crop: Optional[Rect] = None
    target_size: tuple[int, int] = (256, 256)
    rgb_norm_divisor: float = 255.0
    cube_norm_divisor: float = 65535.0

    def __post_init__(self):
        if self.rgb_crop is not None:
            self.rgb_crop = Rect(*self.rgb_crop)
        if self.cube_crop is not None:
            self.cube_crop = Rect(*self.cube_crop)
        self.target_size = tuple(int(v) for v in self.target_size)
        if len(self.target_size) != 2 or min(self.target_size) <= 0:
            raise ValueError(f"target_size must be two positive ints, got {self.target_size}")


# ----------------------------------------------------------------------------
# resampling


def _axis_weights(n_out: int, n_in: int):
    # pixel-center alignment: src = (dst + 0.5) * n_in / n_out - 0.5
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    w1 = src - i0
    return i0, i1, w1


def resize_bilinear(arr: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Separable bilinear resize of an (H, W[, C]) array to ``size`` = (w, h).

    Output dtype is float32 for integer inputs, otherwise the input dtype.
    """
    w, h = size
    src_h, src_w = arr.shape[:2]
    out_dtype = arr.dtype if np.issubdtype(arr.dtype, np.floating) else np.float32
    if (w, h) == (src_w, src_h):
        return arr.astype(out_dtype, copy=True)
    a = arr.astype(out_dtype, copy=False)
    r0, r1, wr = _axis_weights(h, src_h)
    wr = wr.astype(out_dtype).reshape((-1, 1) + (1,) * (a.ndim - 2))
    rows = a[r0] * (1 - wr) + a[r1] * wr
    c0, c1, wc = _axis_weights(w, src_w)
    wc = wc.astype(out_dtype).reshape((1, -1) + (1,) * (a.ndim - 2))
    return rows[:, c0] * (1 - wc) + rows[:, c1] * wc


def resize_nearest(arr: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    w, h = size
    src_h, src_w = arr.shape[:2]
    rows = np.minimum(((np.arange(h) + 0.5) * (src_h / h)).astype(np.intp), src_h - 1)
    cols = np.minimum(((np.arange(w) + 0.5) * (src_w / w)).astype(np.intp), src_w - 1)
    return arr[rows][:, cols]


def resize_mask(mask: LabelMask, size: tuple[int, int]) -> LabelMask:
    return LabelMask(resize_nearest(mask.class_ids, size), resize_nearest(mask.instance_ids, size))


def crop_array(arr: np.ndarray, rect: Optional[Rect]) -> np.ndarray:
    if rect is None:
        return arr
    h, w = arr.shape[:2]
    if not rect.contained_in(w, h):
        raise BadCrop(f"crop {tuple(rect)} outside {w}x{h} frame")
    return arr[rect.y : rect.y + rect.height, rect.x : rect.x + rect.width]


def to_unit_float(data: np.ndarray, divisor: float) -> np.ndarray:
    if np.issubdtype(data.dtype, np.floating):
        return data.astype(np.float32, copy=True)
    return data.astype(np.float32) / np.float32(divisor)


def preprocess(
    rgb: RasterImage,
    cube: HyperCube,
    mask: Optional[LabelMask] = None,
    cfg: Optional[PreprocessConfig] = None,
):
    """Crop each modality to its shared field of view, resize to
    ``cfg.target_size`` and scale to float32 in [0, 1].

    ``mask`` is registered to ``rgb`` and follows the RGB crop. Images are
    resized bilinearly, the mask by nearest neighbour.

    Returns:
        (RasterImage, HyperCube, LabelMask or None)
    """
    cfg = cfg or PreprocessConfig()
    if rgb.data.size == 0 or cube.data.size == 0:
        raise ShapeMismatch("empty input")
    if mask is not None and mask.size != rgb.size:
        raise ShapeMismatch(f"mask {mask.size} does not match RGB image {rgb.size}")

    rgb_c = crop_array(rgb.data, cfg.rgb_crop)
    cube_c = crop_array(cube.data, cfg.cube_crop)

    if rgb.value_range == "unit_float":
        rgb_f = rgb_c.astype(np.float32, copy=True)
    else:
        div = cfg.rgb_norm_divisor if rgb.value_range == "u8_0_255" else 65535.0
        rgb_f = rgb_c.astype(np.float32) / np.float32(div)
    cube_f = to_unit_float(cube_c, cfg.cube_norm_divisor)

    rgb_out = np.clip(resize_bilinear(rgb_f, cfg.target_size), 0.0, 1.0)
    cube_out = np.clip(resize_bilinear(cube_f, cfg.target_size), 0.0, 1.0)

    mask_out = None
    if mask is not None:
        cls = crop_array(mask.class_ids, cfg.rgb_crop)
        inst = crop_array(mask.instance_ids, cfg.rgb_crop)
        mask_out = LabelMask(
            resize_nearest(cls, cfg.target_size), resize_nearest(inst, cfg.target_size)
        )
    return (
        RasterImage(rgb_out, "unit_float"),
        HyperCube(cube_out, cube.wavelengths_nm),
        mask_out,
    )


# ----------------------------------------------------------------------------
# polygon rasterization


def polygon_inside(px: np.ndarray, py: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Even-odd test of points (px, py) against a closed polygon (N x 2)."""
    inside = np.zeros(np.broadcast(px, py).shape, dtype=bool)
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        if y1 == y2:
            continue
        straddle = (y1 > py) != (y2 > py)
        x_cross = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
        inside ^= straddle & (px < x_cross)
    return inside


def rasterize_polygon(poly, size: tuple[int, int]) -> np.ndarray:
    """Boolean (h, w) mask of pixels whose centers fall inside ``poly``."""
    w, h = size
    poly = np.asarray(poly, dtype=np.float64)
    if len(np.unique(poly, axis=0)) < 3:
        raise DegeneratePolygon(f"polygon with {len(np.unique(poly, axis=0))} distinct vertices")
    out = np.zeros((h, w), dtype=bool)
    x0 = max(int(np.floor(poly[:, 0].min() - 0.5)), 0)
    x1 = min(int(np.ceil(poly[:, 0].max() + 0.5)), w)
    y0 = max(int(np.floor(poly[:, 1].min() - 0.5)), 0)
    y1 = min(int(np.ceil(poly[:, 1].max() + 0.5)), h)
    if x0 >= x1 or y0 >= y1:
        return out
    py, px = np.mgrid[y0:y1, x0:x1].astype(np.float64)
    out[y0:y1, x0:x1] = polygon_inside(px + 0.5, py + 0.5, poly)
    return out


def rasterize_annotations(
    ann: AnnotationSet, size: tuple[int, int], source_size: Optional[tuple[int, int]] = None
) -> LabelMask:
    """Paint annotation polygons into a LabelMask of ``size``.

    Polygon vertices are in ``source_size`` pixel coordinates and are scaled
    to ``size``. Later annotations overwrite earlier ones.
    """
    w, h = size
    if w <= 0 or h <= 0:
        raise ValueError(f"bad raster size {size}")
    sw, sh = source_size if source_size is not None else size
    scale = np.array([w / sw, h / sh])
    cls = np.zeros((h, w), dtype=np.uint8)
    inst = np.zeros((h, w), dtype=np.int32)
    for a in ann:
        region = rasterize_polygon(np.asarray(a.polygon, dtype=np.float64) * scale, size)
        cls[region] = a.class_id
        inst[region] = a.instance_id
    return LabelMask(cls, inst)


# ----------------------------------------------------------------------------
# augmentation


@dataclass(frozen=True)
class AugmentSpec:
    rotation_deg: float = 0.0
    hflip: bool = False
    vflip: bool = False

    def __post_init__(self):
        if not -30.0 <= self.rotation_deg <= 30.0:
            raise ValueError(f"rotation {self.rotation_deg} outside [-30, 30] degrees")


def sample_augment_spec(rng: np.random.Generator, max_rotation: float = 30.0) -> AugmentSpec:
    return AugmentSpec(
        rotation_deg=float(rng.uniform(-max_rotation, max_rotation)),
        hflip=bool(rng.random() < 0.5),
        vflip=bool(rng.random() < 0.5),
    )


def augment_coordinates(spec: AugmentSpec, size: tuple[int, int]):
    """Source (x, y) coordinate for every output pixel, as two (h, w) arrays."""
    w, h = size
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    if spec.hflip:
        xs = (w - 1) - xs
    if spec.vflip:
        ys = (h - 1) - ys
    if spec.rotation_deg:
        cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
        t = np.deg2rad(spec.rotation_deg)
        c, s = np.cos(t), np.sin(t)
        dx, dy = xs - cx, ys - cy
        xs, ys = c * dx + s * dy + cx, -s * dx + c * dy + cy
    return xs, ys


def sample_bilinear(data: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Bilinear lookup of an (H, W[, C]) array at real coordinates.

    Points whose nearest pixel lies outside the frame read 0. Inside the frame
    the neighbours are edge-clamped, so images and nearest-neighbour masks
    share exactly the same valid region.
    """
    h, w = data.shape[:2]
    out_dtype = data.dtype if np.issubdtype(data.dtype, np.floating) else np.float32
    valid = (xs >= -0.5) & (xs < w - 0.5) & (ys >= -0.5) & (ys < h - 0.5)
    xc = np.clip(xs, 0, w - 1)
    yc = np.clip(ys, 0, h - 1)
    x0 = np.floor(xc).astype(np.intp)
    y0 = np.floor(yc).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (xc - x0).astype(out_dtype)
    fy = (yc - y0).astype(out_dtype)
    if data.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    d = data.astype(out_dtype, copy=False)
    top = d[y0, x0] * (1 - fx) + d[y0, x1] * fx
    bot = d[y1, x0] * (1 - fx) + d[y1, x1] * fx
    out = top * (1 - fy) + bot * fy
    out[~valid] = 0
    return out


def sample_nearest(data: np.ndarray, xs: np.ndarray, ys: np.ndarray, fill=0) -> np.ndarray:
    h, w = data.shape[:2]
    xi = np.floor(xs + 0.5).astype(np.intp)
    yi = np.floor(ys + 0.5).astype(np.intp)
    valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
    out = np.full(xs.shape + data.shape[2:], fill, dtype=data.dtype)
    out[valid] = data[yi[valid], xi[valid]]
    return out


def augment(
    rgb: RasterImage,
    cube: HyperCube,
    mask: LabelMask,
    spec: Optional[AugmentSpec] = None,
    seed: Optional[int] = None,
):
    """Apply one rotation/flip map to an aligned (rgb, cube, mask) triple.

    With ``spec=None`` a spec is drawn from ``seed`` (rotation uniform in
    +-30 degrees, each flip with probability 0.5).
    """
    if not (rgb.size == cube.size == mask.size):
        raise ShapeMismatch(f"sizes differ: rgb {rgb.size}, cube {cube.size}, mask {mask.size}")
    if spec is None:
        spec = sample_augment_spec(np.random.default_rng(seed))
    if spec == AugmentSpec():
        return (
            RasterImage(rgb.data.copy(), rgb.value_range),
            HyperCube(cube.data.copy(), cube.wavelengths_nm),
            LabelMask(mask.class_ids.copy(), mask.instance_ids.copy()),
        )
    xs, ys = augment_coordinates(spec, rgb.size)

    def _image(data):
        out = sample_bilinear(data, xs, ys)
        if np.issubdtype(data.dtype, np.integer):
            out = np.clip(np.rint(out), np.iinfo(data.dtype).min, np.iinfo(data.dtype).max)
        return out.astype(data.dtype)

    return (
        RasterImage(_image(rgb.data), rgb.value_range),
        HyperCube(_image(cube.data), cube.wavelengths_nm),
        LabelMask(sample_nearest(mask.class_ids, xs, ys), sample_nearest(mask.instance_ids, xs, ys)),
    )
