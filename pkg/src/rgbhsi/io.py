"""File formats: PNG rasters, ENVI cubes, label masks with instance sidecars,
annotation JSON and the dataset manifest."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .errors import ParseError, ShapeMismatch
from .imaging import (
    CLASS_IDS,
    Annotation,
    AnnotationSet,
    HyperCube,
    LabelMask,
    RasterImage,
    Rect,
)

MANIFEST_VERSION = 1


def dump_json(obj, path: Path) -> None:
    """Write JSON with sorted keys and a trailing newline, so reruns are byte-identical."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ----------------------------------------------------------------------------
# PNG


def read_png(path) -> RasterImage:
    with Image.open(path) as im:
        arr = np.array(im)
    if arr.dtype == np.uint16 or arr.dtype == np.int32:
        return RasterImage(arr.astype(np.uint16), "u16_0_65535")
    return RasterImage(arr.astype(np.uint8), "u8_0_255")


def write_png(path, image) -> None:
    data = image.data if isinstance(image, RasterImage) else np.asarray(image)
    if data.ndim == 3 and data.shape[2] == 1:
        data = data[:, :, 0]
    if np.issubdtype(data.dtype, np.floating):
        data = np.clip(np.rint(data * 255.0), 0, 255).astype(np.uint8)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(data).save(path, format="PNG")


# ----------------------------------------------------------------------------
# ENVI

_ENVI_DTYPES = {
    1: np.uint8,
    2: np.int16,
    3: np.int32,
    4: np.float32,
    5: np.float64,
    12: np.uint16,
    13: np.uint32,
}
_ENVI_CODES = {np.dtype(v): k for k, v in _ENVI_DTYPES.items()}


def parse_envi_header(text: str) -> dict:
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ENVI":
        raise ParseError("ENVI header must start with 'ENVI'")
    body = "\n".join(lines[1:])
    header = {}
    for m in re.finditer(r"^\s*([^=\n]+?)\s*=\s*(\{[^}]*\}|[^\n]*)", body, re.M):
        key = m.group(1).strip().lower()
        val = m.group(2).strip()
        if val.startswith("{"):
            val = [v.strip() for v in val[1:-1].split(",") if v.strip()]
        header[key] = val
    for k in ("samples", "lines", "bands", "data type"):
        if k not in header:
            raise ParseError(f"ENVI header missing {k!r}")
    return header


def read_envi(hdr_path, data_path=None) -> HyperCube:
    """Read an ENVI header + raw binary pair (bsq, bil or bip)."""
    hdr_path = Path(hdr_path)
    h = parse_envi_header(hdr_path.read_text())
    if data_path is None:
        data_path = _find_envi_data(hdr_path)
    try:
        samples, lines, bands = int(h["samples"]), int(h["lines"]), int(h["bands"])
        dtype = np.dtype(_ENVI_DTYPES[int(h["data type"])])
    except (KeyError, ValueError) as e:
        raise ParseError(f"bad ENVI header {hdr_path}: {e}") from e
    order = int(h.get("byte order", 0))
    dtype = dtype.newbyteorder(">" if order == 1 else "<")
    offset = int(h.get("header offset", 0))
    raw = np.fromfile(data_path, dtype=dtype, offset=offset)
    if raw.size != samples * lines * bands:
        raise ShapeMismatch(
            f"{data_path}: {raw.size} values, header says {samples}x{lines}x{bands}"
        )
    interleave = str(h.get("interleave", "bsq")).lower()
    if interleave == "bsq":
        cube = raw.reshape(bands, lines, samples).transpose(1, 2, 0)
    elif interleave == "bil":
        cube = raw.reshape(lines, bands, samples).transpose(0, 2, 1)
    elif interleave == "bip":
        cube = raw.reshape(lines, samples, bands)
    else:
        raise ParseError(f"unknown interleave {interleave!r}")
    wl = None
    if "wavelength" in h:
        wl = np.array([float(v) for v in h["wavelength"]])
    return HyperCube(np.ascontiguousarray(cube.astype(dtype.newbyteorder("="))), wl)


def _find_envi_data(hdr_path: Path) -> Path:
    for suffix in (".raw", ".img", ".dat", ".bsq", ""):
        cand = hdr_path.with_suffix(suffix)
        if cand != hdr_path and cand.exists():
            return cand
    raise FileNotFoundError(f"no data file next to {hdr_path}")


def write_envi(hdr_path, cube: HyperCube, data_path=None) -> Path:
    hdr_path = Path(hdr_path)
    data_path = Path(data_path) if data_path else hdr_path.with_suffix(".raw")
    data = np.ascontiguousarray(cube.data)
    code = _ENVI_CODES.get(data.dtype.newbyteorder("="))
    if code is None:
        raise ValueError(f"dtype {data.dtype} not representable in ENVI")
    lines = [
        "ENVI",
        "description = {rgbhsi cube}",
        f"samples = {cube.width}",
        f"lines = {cube.height}",
        f"bands = {cube.bands}",
        "header offset = 0",
        "file type = ENVI Standard",
        f"data type = {code}",
        "interleave = bsq",
        "byte order = 0",
    ]
    if cube.wavelengths_nm is not None:
        lines.append("wavelength units = Nanometers")
        lines.append("wavelength = {" + ", ".join(f"{w:.4f}" for w in cube.wavelengths_nm) + "}")
    hdr_path.parent.mkdir(parents=True, exist_ok=True)
    hdr_path.write_text("\n".join(lines) + "\n")
    data.transpose(2, 0, 1).astype(data.dtype.newbyteorder("<")).tofile(data_path)
    return data_path


# ----------------------------------------------------------------------------
# label masks


def _rle(flat: np.ndarray) -> list[int]:
    idx = np.flatnonzero(flat)
    if idx.size == 0:
        return []
    breaks = np.flatnonzero(np.diff(idx) != 1)
    starts = np.concatenate([[idx[0]], idx[breaks + 1]])
    ends = np.concatenate([idx[breaks], [idx[-1]]])
    out = []
    for s, e in zip(starts, ends):
        out.extend([int(s), int(e - s + 1)])
    return out


def write_mask(png_path, mask: LabelMask) -> Path:
    """Class IDs to an 8-bit PNG; instance IDs to ``<stem>.instances.json`` as
    row-major run-length pairs ``[start, length, ...]``."""
    png_path = Path(png_path)
    write_png(png_path, mask.class_ids)
    flat_inst = mask.instance_ids.ravel()
    flat_cls = mask.class_ids.ravel()
    instances = []
    for iid in np.unique(flat_inst):
        if iid == 0:
            continue
        sel = flat_inst == iid
        classes = np.unique(flat_cls[sel])
        for cid in classes:
            instances.append(
                {"instance_id": int(iid), "class_id": int(cid), "rle": _rle(sel & (flat_cls == cid))}
            )
    sidecar = png_path.with_name(png_path.stem + ".instances.json")
    dump_json({"width": mask.width, "height": mask.height, "instances": instances}, sidecar)
    return sidecar


def read_mask(png_path) -> LabelMask:
    png_path = Path(png_path)
    with Image.open(png_path) as im:
        cls = np.array(im)
    if cls.ndim != 2:
        raise ParseError(f"{png_path}: mask PNG must be single-channel")
    inst = np.zeros(cls.shape, dtype=np.int32)
    sidecar = png_path.with_name(png_path.stem + ".instances.json")
    if sidecar.exists():
        try:
            meta = json.loads(sidecar.read_text())
            flat = inst.ravel()
            for rec in meta["instances"]:
                runs = rec["rle"]
                for s, n in zip(runs[0::2], runs[1::2]):
                    flat[s : s + n] = rec["instance_id"]
        except (KeyError, ValueError, TypeError) as e:
            raise ParseError(f"{sidecar}: {e}") from e
    return LabelMask(cls.astype(np.uint8), inst)


# ----------------------------------------------------------------------------
# annotations


def annotations_to_json(ann: AnnotationSet) -> dict:
    doc = {
        "annotations": [
            {
                "class_name": a.class_name,
                "instance_id": int(a.instance_id),
                "polygon": [[float(x), float(y)] for x, y in a.polygon],
            }
            for a in ann
        ]
    }
    if ann.image_size is not None:
        doc["image"] = {"width": int(ann.image_size[0]), "height": int(ann.image_size[1])}
    return doc


def annotations_from_json(doc: dict) -> AnnotationSet:
    try:
        anns = [
            Annotation(r["class_name"], int(r["instance_id"]), [tuple(p) for p in r["polygon"]])
            for r in doc["annotations"]
        ]
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(f"malformed annotation document: {e}") from e
    size = None
    if "image" in doc:
        size = (int(doc["image"]["width"]), int(doc["image"]["height"]))
    return AnnotationSet(anns, size)


def read_annotations(path) -> AnnotationSet:
    return annotations_from_json(json.loads(Path(path).read_text()))


def write_annotations(path, ann: AnnotationSet) -> None:
    dump_json(annotations_to_json(ann), path)


# ----------------------------------------------------------------------------
# manifest


@dataclass
class SampleRecord:
    id: str
    rgb_path: Path
    cube_path: Path
    annotation_path: Optional[Path] = None
    split: str = "train"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.split not in ("train", "val", "test"):
            raise ValueError(f"sample {self.id}: bad split {self.split!r}")


@dataclass
class DatasetManifest:
    samples: list[SampleRecord]
    classes: dict = field(default_factory=lambda: dict(CLASS_IDS))
    rgb_crop: Optional[Rect] = None
    cube_crop: Optional[Rect] = None
    root: Path = Path(".")

    def __post_init__(self):
        ids = [s.id for s in self.samples]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate sample ids in manifest")

    def split(self, name: str) -> list[SampleRecord]:
        return [s for s in self.samples if s.split == name]

    def get(self, sample_id: str) -> SampleRecord:
        for s in self.samples:
            if s.id == sample_id:
                return s
        raise KeyError(sample_id)


def _rel(p: Optional[Path], root: Path):
    if p is None:
        return None
    try:
        return Path(p).resolve().relative_to(root.resolve()).as_posix()
    except ValueError:
        return str(p)


def manifest_to_json(m: DatasetManifest) -> dict:
    samples = []
    for s in m.samples:
        rec = {
            "id": s.id,
            "rgb": _rel(s.rgb_path, m.root),
            "cube": _rel(s.cube_path, m.root),
            "annotation": _rel(s.annotation_path, m.root),
            "split": s.split,
        }
        for k, v in sorted(s.extra.items()):
            rec[k] = _rel(v, m.root) if isinstance(v, Path) else v
        samples.append(rec)
    return {
        "version": MANIFEST_VERSION,
        "classes": dict(m.classes),
        "alignment": {
            "rgb_crop": list(m.rgb_crop) if m.rgb_crop else None,
            "cube_crop": list(m.cube_crop) if m.cube_crop else None,
        },
        "samples": samples,
    }


_CORE_KEYS = {"id", "rgb", "cube", "annotation", "split"}


def load_manifest(path) -> DatasetManifest:
    """Load a manifest; sample paths resolve relative to the manifest's directory."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: {e}") from e
    if doc.get("version") != MANIFEST_VERSION:
        raise ParseError(f"{path}: unsupported manifest version {doc.get('version')!r}")
    root = path.parent
    samples = []
    try:
        for r in doc["samples"]:
            extra = {k: v for k, v in r.items() if k not in _CORE_KEYS}
            samples.append(
                SampleRecord(
                    id=str(r["id"]),
                    rgb_path=root / r["rgb"],
                    cube_path=root / r["cube"],
                    annotation_path=root / r["annotation"] if r.get("annotation") else None,
                    split=r.get("split", "train"),
                    extra=extra,
                )
            )
    except KeyError as e:
        raise ParseError(f"{path}: sample record missing {e}") from e
    align = doc.get("alignment") or {}
    rc, cc = align.get("rgb_crop"), align.get("cube_crop")
    return DatasetManifest(
        samples=samples,
        classes=doc.get("classes", dict(CLASS_IDS)),
        rgb_crop=Rect(*rc) if rc else None,
        cube_crop=Rect(*cc) if cc else None,
        root=root,
    )


def save_manifest(path, m: DatasetManifest) -> None:
    path = Path(path)
    m.root = path.parent
    dump_json(manifest_to_json(m), path)
