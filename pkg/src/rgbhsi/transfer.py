"""Per-component label transfer from the RGB frame into the HSI frame.

Pipeline per connected component: outer contour -> sparse control points ->
correspondences in the target image -> least-squares affine -> warp. The
warped components are painted into one target mask.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import DegenerateFit, ImplausibleTransform, TransferFailed
from .geometry import (
    AffineTransform,
    Component,
    FitConfig,
    connected_components,
    fit_affine,
    residual_rms,
    sample_contour,
    trace_contour,
    warp_component,
)
from .imaging import CLASS_IDS, LabelMask, Rect, resize_nearest, crop_array
from .matching import MatcherConfig, NccMatcher, as_gray, match_points

FALLBACKS = ("keep_resized_original", "drop_component")
DEFAULT_PRIORITY = ("video_tape", "filament", "film", "basket", "cardboard", "trash_bag")


@dataclass
class TransferConfig:
    points_per_contour: Optional[int] = None  # None -> 16, up to 32 on long contours
    matcher: str = "ncc"
    matcher_cfg: MatcherConfig = field(default_factory=MatcherConfig)
    min_matches: int = 4
    min_area: int = 9
    fallback: str = "keep_resized_original"
    combine_order: tuple = DEFAULT_PRIORITY
    fit: FitConfig = field(default_factory=FitConfig)

    def __post_init__(self):
        if self.min_matches < 3:
            raise ValueError("min_matches must be >= 3")
        if self.fallback not in FALLBACKS:
            raise ValueError(f"fallback must be one of {FALLBACKS}")
        if isinstance(self.matcher_cfg, dict):
            self.matcher_cfg = MatcherConfig(**self.matcher_cfg)
        if isinstance(self.fit, dict):
            self.fit = FitConfig(**self.fit)
        self.combine_order = tuple(self.combine_order)


@dataclass
class ComponentRecord:
    class_id: int
    instance_id: int
    area: int
    status: str  # "accepted", "fallback" or "dropped"
    reason: Optional[str] = None
    n_queries: int = 0
    n_matches: int = 0
    mean_confidence: Optional[float] = None
    residual_rms: Optional[float] = None
    transform: Optional[list] = None


@dataclass
class TransferReport:
    components: list[ComponentRecord] = field(default_factory=list)

    @property
    def totals(self) -> dict:
        out = {"components": len(self.components), "accepted": 0, "fallback": 0, "dropped": 0}
        for c in self.components:
            out[c.status] += 1
        return out

    def to_json(self) -> dict:
        return {"components": [asdict(c) for c in self.components], "totals": self.totals}


def prealignment(
    source_size: tuple[int, int],
    target_size: tuple[int, int],
    source_crop: Optional[Rect] = None,
    target_crop: Optional[Rect] = None,
) -> AffineTransform:
    """Crop + resize mapping from the source frame to the target frame (pixel
    centres), i.e. the geometry of manual alignment."""
    from .synth import crop_resize_affine

    sc = Rect(*source_crop) if source_crop else Rect(0, 0, *source_size)
    tc = Rect(*target_crop) if target_crop else Rect(0, 0, *target_size)
    return crop_resize_affine(sc, tc)


def manual_alignment(
    mask: LabelMask,
    target_size: tuple[int, int],
    source_crop: Optional[Rect] = None,
    target_crop: Optional[Rect] = None,
) -> LabelMask:
    """Baseline: crop the source mask and nearest-resize it into the target frame."""
    cls = crop_array(mask.class_ids, source_crop)
    inst = crop_array(mask.instance_ids, source_crop)
    tw, th = target_size
    tc = Rect(*target_crop) if target_crop else Rect(0, 0, tw, th)
    out_cls = np.zeros((th, tw), dtype=np.uint8)
    out_inst = np.zeros((th, tw), dtype=np.int32)
    region = (slice(tc.y, tc.y + tc.height), slice(tc.x, tc.x + tc.width))
    out_cls[region] = resize_nearest(cls, (tc.width, tc.height))
    out_inst[region] = resize_nearest(inst, (tc.width, tc.height))
    return LabelMask(out_cls, out_inst)


def make_matcher(cfg: TransferConfig):
    if cfg.matcher == "ncc":
        return NccMatcher(cfg.matcher_cfg)
    raise ValueError(f"matcher {cfg.matcher!r} needs to be constructed by the caller")


def _paint_order(comps: list[Component], priority: tuple) -> list[int]:
    # painted later wins: lowest priority first; within a priority level,
    # larger components first so thin ones end up on top
    rank = {CLASS_IDS[n]: i for i, n in enumerate(priority) if n in CLASS_IDS}
    worst = len(rank)

    def key(i):
        c = comps[i]
        return (-rank.get(c.class_id, worst), -c.area, c.class_id, c.instance_id, int(c.coords[0, 1]), int(c.coords[0, 0]))

    return sorted(range(len(comps)), key=key)


def transfer_mask(
    source_img,
    target_img,
    mask: LabelMask,
    cfg: Optional[TransferConfig] = None,
    matcher=None,
    init: Optional[AffineTransform] = None,
):
    """Transfer ``mask`` (registered to ``source_img``) into the frame of ``target_img``.

    Args:
        source_img: RGB raster (or any raster / array) the mask was drawn on.
        target_img: HSI cube, or a single-channel raster in the target frame.
        mask: label mask in the source frame.
        cfg: transfer parameters.
        matcher: correspondence provider; built from ``cfg.matcher`` when omitted.
        init: source -> target prior (defaults to full-frame crop + resize). Also
            the transform applied by the ``keep_resized_original`` fallback.

    Returns:
        (LabelMask in the target frame, TransferReport)

    Raises:
        TransferFailed: the matcher raised for the whole image. The report
            collected so far is attached.
    """
    cfg = cfg or TransferConfig()
    src = as_gray(source_img)
    tgt = as_gray(target_img)
    if src.shape != mask.class_ids.shape:
        from .errors import ShapeMismatch

        raise ShapeMismatch(f"mask {mask.size} not registered to source image {src.shape[::-1]}")
    th, tw = tgt.shape
    target_size = (tw, th)
    if init is None:
        init = prealignment((src.shape[1], src.shape[0]), target_size)
    if matcher is None:
        matcher = make_matcher(cfg)

    comps = connected_components(mask)
    report = TransferReport()

    # gather control points for every component, then match in one call
    plans = []
    queries = []
    for c in comps:
        if c.area < cfg.min_area:
            # too small for three stable correspondences: match the centroid only
            cen = c.centroid
            nearest = c.coords[np.argmin(np.sum((c.coords - cen) ** 2, axis=1))]
            pts = nearest[None, :].astype(np.float64)
        else:
            pts = sample_contour(trace_contour(c), cfg.points_per_contour).points
        plans.append((len(queries), len(pts)))
        queries.extend(pts.tolist())

    matches = []
    if queries:
        try:
            matches = match_points(matcher, src, tgt, queries, init=init)
        except Exception as e:
            for c in comps:
                report.components.append(ComponentRecord(c.class_id, c.instance_id, c.area, "dropped", "matcher_failed"))
            raise TransferFailed(f"matcher failed: {e}", report) from e

    transforms: list[Optional[AffineTransform]] = []
    for c, (start, count) in zip(comps, plans):
        slots = matches[start : start + count]
        good = [m for m in slots if m is not None and m.confidence >= cfg.matcher_cfg.min_confidence]
        rec = ComponentRecord(c.class_id, c.instance_id, c.area, "accepted", n_queries=count, n_matches=len(good))
        if good:
            rec.mean_confidence = float(np.mean([m.confidence for m in good]))
        t = None
        if c.area < cfg.min_area:
            if good:
                m = good[0]
                shift = np.asarray(m.target) - init.apply(m.source)
                t = AffineTransform.translation(*shift) @ init
                rec.reason = "small_component_translation"
            else:
                rec.reason = "insufficient_matches"
        elif len(good) < cfg.min_matches:
            rec.reason = "insufficient_matches"
        else:
            s = np.array([m.source for m in good])
            d = np.array([m.target for m in good])
            try:
                t = fit_affine(s, d, cfg=cfg.fit)
                rec.residual_rms = residual_rms(t, s, d)
            except DegenerateFit:
                rec.reason = "degenerate_fit"
            except ImplausibleTransform:
                rec.reason = "implausible_transform"

        if t is None:
            if cfg.fallback == "keep_resized_original":
                rec.status = "fallback"
                t = init
            else:
                rec.status = "dropped"
        if t is not None:
            rec.transform = t.to_json()
        transforms.append(t)
        report.components.append(rec)

    out_cls = np.zeros((th, tw), dtype=np.uint8)
    out_inst = np.zeros((th, tw), dtype=np.int32)
    for i in _paint_order(comps, cfg.combine_order):
        t = transforms[i]
        if t is None:
            continue
        try:
            region = warp_component(comps[i], t, target_size)
        except ImplausibleTransform:
            continue
        out_cls[region] = comps[i].class_id
        out_inst[region] = comps[i].instance_id
    return LabelMask(out_cls, out_inst), report
