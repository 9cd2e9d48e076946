"""Synthetic dual-camera rig.

Scenes of labeled objects are rendered twice: an 8-bit RGB view, and a
224-band cube related to it by a global rig mapping (crop + resize) composed
with a small per-object distortion. Every object's RGB -> HSI transform is
known exactly, so label transfer, PCA and metrics can be checked against
ground truth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
from shapely import affinity
from shapely.geometry import LineString, MultiPoint, Point, Polygon, box

from .geometry import AffineTransform, warp_binary
from .imaging import (
    CLASS_IDS,
    CLASS_NAMES,
    Annotation,
    AnnotationSet,
    HyperCube,
    LabelMask,
    RasterImage,
    Rect,
    rasterize_annotations,
    rasterize_polygon,
)

N_BANDS = 224
WAVELENGTHS_NM = np.linspace(900.0, 1700.0, N_BANDS)
# reflectance 1.0 maps to this raw 16-bit count
RAW_SCALE = 50000.0

# instances per class in the real annotated set; used as sampling weights
CLASS_FREQUENCIES = {
    "film": 339,
    "basket": 300,
    "cardboard": 68,
    "video_tape": 287,
    "filament": 111,
    "trash_bag": 954,
}
RIBBON_CLASSES = ("video_tape", "filament")

BELT_COLOR = (48, 48, 54)
CLASS_COLORS = {
    "film": (205, 205, 215),
    "basket": (70, 125, 205),
    "cardboard": (175, 135, 85),
    "video_tape": (160, 115, 75),
    "filament": (230, 205, 60),
    "trash_bag": (95, 150, 95),
}

# (baseline, [(centre nm, width nm, amplitude), ...])
_SPECTRUM_PARAMS = {
    "belt": (0.06, [(1400.0, 300.0, 0.02)]),
    "film": (0.72, [(1210.0, 25.0, -0.22), (1400.0, 40.0, -0.16), (1660.0, 30.0, -0.20)]),
    "basket": (0.34, [(1050.0, 120.0, 0.18), (1390.0, 35.0, -0.10), (1690.0, 25.0, -0.08)]),
    "cardboard": (0.52, [(1200.0, 60.0, -0.10), (1480.0, 90.0, -0.24)]),
    "video_tape": (0.10, [(980.0, 80.0, 0.12), (1540.0, 50.0, -0.04)]),
    "filament": (0.44, [(1150.0, 40.0, 0.18), (1320.0, 45.0, 0.16), (1620.0, 40.0, -0.14)]),
    "trash_bag": (0.16, [(1100.0, 200.0, 0.08), (1730.0, 120.0, -0.06), (1450.0, 30.0, 0.10)]),
}


def class_spectrum(name: str, wavelengths: np.ndarray = WAVELENGTHS_NM) -> np.ndarray:
    base, bumps = _SPECTRUM_PARAMS[name]
    s = np.full(len(wavelengths), base)
    for mu, width, amp in bumps:
        s = s + amp * np.exp(-0.5 * ((wavelengths - mu) / width) ** 2)
    return np.clip(s, 0.01, None)


def spectra_table(wavelengths: np.ndarray = WAVELENGTHS_NM) -> np.ndarray:
    """Row 0 is the belt, row i the spectrum of class id i."""
    return np.stack([class_spectrum("belt", wavelengths)] + [class_spectrum(n, wavelengths) for n in CLASS_NAMES])


def color_table() -> np.ndarray:
    return np.array([BELT_COLOR] + [CLASS_COLORS[n] for n in CLASS_NAMES], dtype=np.float64)


@dataclass
class SceneConfig:
    rgb_size: tuple[int, int] = (320, 316)
    hsi_size: tuple[int, int] = (256, 256)
    rgb_crop: Rect = Rect(16, 14, 288, 288)
    n_objects: tuple[int, int] = (3, 7)
    class_frequencies: dict = field(default_factory=lambda: dict(CLASS_FREQUENCIES))
    # chance that a scene without any ribbon gets one added
    ribbon_prob: float = 0.25
    ribbon_width: dict = field(default_factory=lambda: {"video_tape": (2.0, 4.0), "filament": (1.5, 3.0)})
    jitter_shift: tuple[float, float] = (2.0, 6.0)
    jitter_rot_deg: float = 4.0
    jitter_scale: float = 0.06
    jitter_shear: float = 0.03
    projective: bool = False
    projective_strength: float = 2e-4
    image_noise: float = 3.0
    spectral_noise: float = 0.01
    texture_amplitude: float = 0.25
    spacing: float = 16.0


@dataclass
class SceneObject:
    class_id: int
    instance_id: int
    kind: str  # "polygon", "ellipse" or "ribbon"
    polygon: np.ndarray  # (N, 2) RGB-frame vertices
    jitter: AffineTransform  # HSI frame, about the object centre
    texture: np.ndarray  # (3, 4): kx, ky, phase, weight
    homography: Optional[np.ndarray] = None  # 3x3 RGB -> HSI, projective mode only

    @property
    def class_name(self) -> str:
        return CLASS_NAMES[self.class_id - 1]

    @property
    def is_ribbon(self) -> bool:
        return self.kind == "ribbon"


@dataclass
class SceneSpec:
    seed: int
    cfg: SceneConfig
    rig: AffineTransform
    objects: list[SceneObject]

    def gt_transform(self, obj: SceneObject) -> AffineTransform:
        return obj.jitter @ self.rig

    def annotations(self) -> AnnotationSet:
        return AnnotationSet(
            [Annotation(o.class_name, o.instance_id, [tuple(p) for p in o.polygon]) for o in self.objects],
            image_size=self.cfg.rgb_size,
        )


@dataclass
class RenderedViews:
    rgb: RasterImage
    cube: HyperCube
    gt_mask_rgb: LabelMask
    gt_mask_hsi: LabelMask
    gt_affines: dict  # instance id -> AffineTransform (RGB -> HSI)
    rig: AffineTransform


def crop_resize_affine(src_crop: Rect, dst_crop: Rect) -> AffineTransform:
    """Pixel-centre affine taking ``src_crop`` onto ``dst_crop``.

    Matches nearest/bilinear resizing with half-pixel alignment:
    x_dst = (x_src - x0 + 0.5) * sx - 0.5 + x0'.
    """
    sx = dst_crop.width / src_crop.width
    sy = dst_crop.height / src_crop.height
    tx = (-src_crop.x + 0.5) * sx - 0.5 + dst_crop.x
    ty = (-src_crop.y + 0.5) * sy - 0.5 + dst_crop.y
    return AffineTransform(np.array([[sx, 0.0, tx], [0.0, sy, ty]]))


# ----------------------------------------------------------------------------
# scene generation


def _rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def _shape(rng: np.random.Generator, name: str, cfg: SceneConfig):
    if name in RIBBON_CLASSES:
        lo, hi = cfg.ribbon_width[name]
        width = rng.uniform(lo, hi)
        n_seg = int(rng.integers(3, 6))
        heading = rng.uniform(0, 2 * math.pi)
        pts = [(0.0, 0.0)]
        for _ in range(n_seg):
            heading += rng.uniform(-0.9, 0.9)
            step = rng.uniform(14.0, 26.0)
            x, y = pts[-1]
            pts.append((x + step * math.cos(heading), y + step * math.sin(heading)))
        geom = LineString(pts).buffer(width / 2.0, quad_segs=4, join_style="mitre", cap_style="flat")
        return "ribbon", geom
    if name == "trash_bag":
        a, b = rng.uniform(15.0, 32.0), rng.uniform(12.0, 26.0)
        geom = affinity.scale(Point(0, 0).buffer(1.0, quad_segs=8), a, b)
        return "ellipse", affinity.rotate(geom, rng.uniform(0, 180))
    if name in ("basket", "cardboard"):
        w, h = (rng.uniform(26, 50), rng.uniform(20, 40)) if name == "basket" else (rng.uniform(30, 58), rng.uniform(26, 48))
        geom = box(-w / 2, -h / 2, w / 2, h / 2)
        if name == "cardboard":
            corners = np.array(geom.exterior.coords[:-1]) + rng.uniform(-3, 3, size=(4, 2))
            geom = MultiPoint([tuple(c) for c in corners]).convex_hull
        return "polygon", affinity.rotate(geom, rng.uniform(0, 180))
    # film: convex hull of a noisy ellipse sample
    r = rng.uniform(14.0, 30.0)
    ang = np.sort(rng.uniform(0, 2 * math.pi, int(rng.integers(8, 13))))
    rad = r * rng.uniform(0.7, 1.0, len(ang))
    pts = np.stack([rad * np.cos(ang), rad * np.sin(ang) * rng.uniform(0.6, 1.0)], axis=1)
    return "polygon", MultiPoint([tuple(p) for p in pts]).convex_hull


def _jitter(rng: np.random.Generator, cfg: SceneConfig, center) -> AffineTransform:
    theta = math.radians(rng.uniform(-cfg.jitter_rot_deg, cfg.jitter_rot_deg))
    sx, sy = 1.0 + rng.uniform(-cfg.jitter_scale, cfg.jitter_scale, 2)
    sh = rng.uniform(-cfg.jitter_shear, cfg.jitter_shear)
    lin = _rotation(theta) @ np.array([[sx, sh], [0.0, sy]])
    mag = rng.uniform(*cfg.jitter_shift)
    ang = rng.uniform(0, 2 * math.pi)
    return AffineTransform.about_point(lin, center, (mag * math.cos(ang), mag * math.sin(ang)))


def _texture(rng: np.random.Generator) -> np.ndarray:
    rows = []
    for _ in range(3):
        lam = rng.uniform(6.0, 14.0)
        d = rng.uniform(0, 2 * math.pi)
        k = 2 * math.pi / lam
        rows.append([k * math.cos(d), k * math.sin(d), rng.uniform(0, 2 * math.pi), rng.uniform(0.5, 1.0)])
    t = np.array(rows)
    t[:, 3] /= t[:, 3].sum()
    return t


def texture_value(tex: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Texture in [-1, 1] evaluated at RGB-frame coordinates."""
    out = np.zeros(np.broadcast(xs, ys).shape)
    for kx, ky, ph, wt in tex:
        out += wt * np.sin(kx * xs + ky * ys + ph)
    return out


def _to_homography(obj_jitter: AffineTransform, rig: AffineTransform, rng, cfg, center) -> np.ndarray:
    h = obj_jitter.homogeneous() @ rig.homogeneous()
    persp = np.eye(3)
    persp[2, :2] = rng.uniform(-cfg.projective_strength, cfg.projective_strength, 2)
    # perspective about the object centre in the HSI frame
    c = np.eye(3)
    c[:2, 2] = center
    ci = np.eye(3)
    ci[:2, 2] = -np.asarray(center)
    hp = c @ persp @ ci @ h
    return hp / hp[2, 2]


def generate_scene(seed: int, cfg: Optional[SceneConfig] = None) -> SceneSpec:
    """Deterministic scene for ``seed``: classes drawn with the configured
    frequencies, objects placed without touching in either view."""
    cfg = cfg or SceneConfig()
    rng = np.random.default_rng(seed)
    rig = crop_resize_affine(cfg.rgb_crop, Rect(0, 0, *cfg.hsi_size))
    names = list(cfg.class_frequencies)
    p = np.array([cfg.class_frequencies[n] for n in names], dtype=np.float64)
    p /= p.sum()

    lo, hi = cfg.n_objects
    count = int(rng.integers(lo, hi + 1)) if hi > 0 else 0
    classes = [names[i] for i in rng.choice(len(names), size=count, p=p)] if count else []
    if count and not any(c in RIBBON_CLASSES for c in classes) and rng.random() < cfg.ribbon_prob:
        ribbon_p = np.array([cfg.class_frequencies[c] for c in RIBBON_CLASSES], dtype=np.float64)
        classes.append(RIBBON_CLASSES[int(rng.choice(2, p=ribbon_p / ribbon_p.sum()))])

    crop = cfg.rgb_crop
    hw, hh = cfg.hsi_size
    hsi_frame = box(3, 3, hw - 4, hh - 4)
    placed_rgb: list = []
    placed_hsi: list = []
    objects: list[SceneObject] = []
    for name in classes:
        kind, shape = _shape(rng, name, cfg)
        done = False
        for attempt in range(240):
            if attempt and attempt % 40 == 0:
                shape = affinity.scale(shape, 0.85, 0.85, origin=(0, 0))
            minx, miny, maxx, maxy = shape.bounds
            cx = rng.uniform(crop.x - minx + 4, crop.x + crop.width - maxx - 4)
            cy = rng.uniform(crop.y - miny + 4, crop.y + crop.height - maxy - 4)
            geom = affinity.translate(shape, cx, cy)
            if any(geom.distance(g) < cfg.spacing for g in placed_rgb):
                continue
            center_hsi = rig.apply([geom.centroid.x, geom.centroid.y])
            jit = _jitter(rng, cfg, center_hsi)
            t = jit @ rig
            a = t.matrix
            g_hsi = affinity.affine_transform(geom, [a[0, 0], a[0, 1], a[1, 0], a[1, 1], a[0, 2], a[1, 2]])
            if not hsi_frame.contains(g_hsi) or any(g_hsi.distance(g) < 3.0 for g in placed_hsi):
                continue
            done = True
            break
        if not done:
            continue
        placed_rgb.append(geom)
        placed_hsi.append(g_hsi)
        homography = _to_homography(jit, rig, rng, cfg, center_hsi) if cfg.projective else None
        objects.append(
            SceneObject(
                class_id=CLASS_IDS[name],
                instance_id=len(objects) + 1,
                kind=kind,
                polygon=np.array(geom.exterior.coords[:-1], dtype=np.float64),
                jitter=jit,
                texture=_texture(rng),
                homography=homography,
            )
        )
    return SceneSpec(seed=seed, cfg=cfg, rig=rig, objects=objects)


# ----------------------------------------------------------------------------
# rendering


def _warp_projective(local: np.ndarray, origin, hom: np.ndarray, size) -> np.ndarray:
    w, h = size
    inv = np.linalg.inv(hom)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    den = inv[2, 0] * xs + inv[2, 1] * ys + inv[2, 2]
    sx = (inv[0, 0] * xs + inv[0, 1] * ys + inv[0, 2]) / den
    sy = (inv[1, 0] * xs + inv[1, 1] * ys + inv[1, 2]) / den
    ix = np.floor(sx + 0.5).astype(np.int64) - origin[0]
    iy = np.floor(sy + 0.5).astype(np.int64) - origin[1]
    lh, lw = local.shape
    ok = (ix >= 0) & (ix < lw) & (iy >= 0) & (iy < lh)
    out = np.zeros((h, w), dtype=bool)
    out[ok] = local[iy[ok], ix[ok]]
    return out


def _inverse_points(obj: SceneObject, t: AffineTransform, xs: np.ndarray, ys: np.ndarray):
    if obj.homography is not None:
        inv = np.linalg.inv(obj.homography)
        den = inv[2, 0] * xs + inv[2, 1] * ys + inv[2, 2]
        return (inv[0, 0] * xs + inv[0, 1] * ys + inv[0, 2]) / den, (inv[1, 0] * xs + inv[1, 1] * ys + inv[1, 2]) / den
    a = t.inverse().matrix
    return a[0, 0] * xs + a[0, 1] * ys + a[0, 2], a[1, 0] * xs + a[1, 1] * ys + a[1, 2]


def render_views(scene: SceneSpec) -> RenderedViews:
    """Render both views. A pure function of ``scene`` (noise is seeded from it).

    The HSI mask of each object is the nearest-neighbour warp of its RGB
    raster by the object's ground-truth transform, so the two masks are
    exactly consistent.
    """
    cfg = scene.cfg
    rng = np.random.default_rng([scene.seed, 0x5EED])
    rw, rh = cfg.rgb_size
    hw, hh = cfg.hsi_size

    gt_rgb = rasterize_annotations(scene.annotations(), cfg.rgb_size)
    hsi_cls = np.zeros((hh, hw), dtype=np.uint8)
    hsi_inst = np.zeros((hh, hw), dtype=np.int32)
    rgb_mod = np.ones((rh, rw))
    hsi_mod = np.ones((hh, hw))
    gt_affines = {}

    for obj in scene.objects:
        t = scene.gt_transform(obj)
        gt_affines[obj.instance_id] = t
        sel = gt_rgb.instance_ids == obj.instance_id
        if not sel.any():
            continue
        ys, xs = np.nonzero(sel)
        x0, y0 = int(xs.min()), int(ys.min())
        local = sel[y0 : ys.max() + 1, x0 : xs.max() + 1]
        if obj.homography is not None:
            warped = _warp_projective(local, (x0, y0), obj.homography, cfg.hsi_size)
        else:
            warped = warp_binary(local, (x0, y0), t, cfg.hsi_size)
        hsi_cls[warped] = obj.class_id
        hsi_inst[warped] = obj.instance_id

        if cfg.texture_amplitude:
            rgb_mod[sel] = 1.0 + cfg.texture_amplitude * texture_value(obj.texture, xs.astype(float), ys.astype(float))
            qy, qx = np.nonzero(warped)
            px, py = _inverse_points(obj, t, qx.astype(float), qy.astype(float))
            hsi_mod[warped] = 1.0 + cfg.texture_amplitude * texture_value(obj.texture, px, py)

    colors = color_table()
    rgb = colors[gt_rgb.class_ids] * rgb_mod[..., None]
    if cfg.image_noise:
        rgb = rgb + rng.normal(0.0, cfg.image_noise, rgb.shape)
    rgb_u8 = np.clip(np.rint(rgb), 0, 255).astype(np.uint8)

    spectra = spectra_table().astype(np.float32)
    cube = spectra[hsi_cls] * hsi_mod[..., None].astype(np.float32)
    if cfg.spectral_noise:
        cube += rng.standard_normal(cube.shape, dtype=np.float32) * np.float32(cfg.spectral_noise)
    cube_u16 = np.clip(np.rint(cube * RAW_SCALE), 0, 65535).astype(np.uint16)

    return RenderedViews(
        rgb=RasterImage(rgb_u8, "u8_0_255"),
        cube=HyperCube(cube_u16, WAVELENGTHS_NM.copy()),
        gt_mask_rgb=gt_rgb,
        gt_mask_hsi=LabelMask(hsi_cls, hsi_inst),
        gt_affines=gt_affines,
        rig=scene.rig,
    )


def mixture_cube(
    seed: int,
    size: tuple[int, int] = (64, 64),
    n_endmembers: int = 3,
    noise: float = 0.01,
    wavelengths: np.ndarray = WAVELENGTHS_NM,
) -> tuple[HyperCube, np.ndarray]:
    """Linear mixtures of class spectra with Dirichlet abundances.

    ``noise`` is the Gaussian sigma relative to the mean signal level.
    Returns the float64 cube and the (n_endmembers, bands) endmember matrix.
    """
    rng = np.random.default_rng(seed)
    ends = np.stack([class_spectrum(n, wavelengths) for n in CLASS_NAMES[:n_endmembers]])
    w, h = size
    ab = rng.dirichlet(np.ones(n_endmembers), size=h * w)
    pix = ab @ ends
    pix = pix + rng.normal(0.0, noise * pix.mean(), pix.shape)
    return HyperCube(pix.reshape(h, w, -1), np.asarray(wavelengths)), ends


# ----------------------------------------------------------------------------
# dataset export


def scene_seeds(seed: int, n: int) -> list[int]:
    return [int(s) for s in np.random.default_rng(seed).integers(0, 2**31 - 1, size=n)]


def assign_split(i: int, n: int) -> str:
    # 70 / 15 / 15 by position
    if i < round(0.7 * n):
        return "train"
    if i < round(0.85 * n):
        return "val"
    return "test"


def write_sample(out_dir: Path, sample_id: str, scene: SceneSpec, views: RenderedViews) -> dict:
    """Write one rendered scene; returns the manifest record."""
    from .io import dump_json, write_annotations, write_envi, write_mask, write_png

    out_dir = Path(out_dir)
    write_png(out_dir / "rgb" / f"{sample_id}.png", views.rgb)
    write_envi(out_dir / "cube" / f"{sample_id}.hdr", views.cube)
    write_annotations(out_dir / "annotations" / f"{sample_id}.json", scene.annotations())
    write_mask(out_dir / "gt_rgb" / f"{sample_id}.png", views.gt_mask_rgb)
    write_mask(out_dir / "gt_hsi" / f"{sample_id}.png", views.gt_mask_hsi)
    dump_json(
        {
            "rig": views.rig.to_json(),
            "objects": {
                str(o.instance_id): {
                    "class_name": o.class_name,
                    "kind": o.kind,
                    "transform": views.gt_affines[o.instance_id].to_json(),
                }
                for o in scene.objects
            },
        },
        out_dir / "gt" / f"{sample_id}.transforms.json",
    )
    return {
        "id": sample_id,
        "rgb": f"rgb/{sample_id}.png",
        "cube": f"cube/{sample_id}.hdr",
        "annotation": f"annotations/{sample_id}.json",
        "gt_hsi_mask": f"gt_hsi/{sample_id}.png",
        "gt_rgb_mask": f"gt_rgb/{sample_id}.png",
        "gt_transforms": f"gt/{sample_id}.transforms.json",
        "scene_seed": scene.seed,
    }


def write_dataset(out_dir, n_scenes: int, seed: int, cfg: Optional[SceneConfig] = None) -> Path:
    """Render ``n_scenes`` seeded scenes into a manifest-described dataset tree."""
    from .io import MANIFEST_VERSION, dump_json

    cfg = cfg or SceneConfig()
    out_dir = Path(out_dir)
    records = []
    for i, s in enumerate(scene_seeds(seed, n_scenes)):
        sid = f"scene_{i:04d}"
        scene = generate_scene(s, cfg)
        rec = write_sample(out_dir, sid, scene, render_views(scene))
        rec["split"] = assign_split(i, n_scenes)
        records.append(rec)
    manifest = {
        "version": MANIFEST_VERSION,
        "classes": dict(CLASS_IDS),
        "alignment": {"rgb_crop": list(cfg.rgb_crop), "cube_crop": None},
        "samples": records,
    }
    path = out_dir / "manifest.json"
    dump_json(manifest, path)
    return path
