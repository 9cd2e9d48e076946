import json

import numpy as np
import pytest

from rgbhsi.errors import ParseError, ShapeMismatch
from rgbhsi.imaging import Annotation, AnnotationSet, HyperCube, LabelMask, Rect
from rgbhsi.io import (
    load_manifest,
    read_annotations,
    read_envi,
    read_mask,
    read_png,
    write_annotations,
    write_envi,
    write_mask,
    write_png,
)


def test_envi_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    cube = HyperCube(rng.integers(0, 65535, (5, 7, 4), dtype=np.uint16), np.array([900.0, 1000.0, 1100.0, 1200.0]))
    write_envi(tmp_path / "c.hdr", cube)
    back = read_envi(tmp_path / "c.hdr")
    assert np.array_equal(back.data, cube.data)
    assert np.allclose(back.wavelengths_nm, cube.wavelengths_nm)


@pytest.mark.parametrize("interleave", ["bsq", "bil", "bip"])
def test_envi_interleaves_big_endian(tmp_path, interleave):
    h, w, b = 3, 4, 2
    cube = np.arange(h * w * b, dtype=np.int16).reshape(h, w, b)
    order = {"bsq": (2, 0, 1), "bil": (0, 2, 1), "bip": (0, 1, 2)}[interleave]
    cube.transpose(order).astype(">i2").tofile(tmp_path / "x.img")
    (tmp_path / "x.hdr").write_text(
        f"ENVI\nsamples = {w}\nlines = {h}\nbands = {b}\ndata type = 2\n"
        f"interleave = {interleave}\nbyte order = 1\nheader offset = 0\n"
    )
    assert np.array_equal(read_envi(tmp_path / "x.hdr").data, cube)


def test_envi_bad_header(tmp_path):
    (tmp_path / "x.hdr").write_text("NOTENVI\n")
    with pytest.raises(ParseError):
        read_envi(tmp_path / "x.hdr")
    (tmp_path / "y.hdr").write_text("ENVI\nsamples = 2\nlines = 2\nbands = 1\ndata type = 1\n")
    (tmp_path / "y.raw").write_bytes(b"\0\0\0")
    with pytest.raises(ShapeMismatch):
        read_envi(tmp_path / "y.hdr")


def test_mask_roundtrip_keeps_instances(tmp_path):
    cls = np.zeros((6, 8), np.uint8)
    inst = np.zeros((6, 8), np.int32)
    cls[1:3, 1:4], inst[1:3, 1:4] = 2, 7
    cls[4:6, 5:8], inst[4:6, 5:8] = 5, 300
    write_mask(tmp_path / "m.png", LabelMask(cls, inst))
    back = read_mask(tmp_path / "m.png")
    assert np.array_equal(back.class_ids, cls)
    assert np.array_equal(back.instance_ids, inst)


def test_png_roundtrip(tmp_path):
    rgb = np.random.default_rng(1).integers(0, 256, (5, 6, 3), dtype=np.uint8)
    write_png(tmp_path / "a.png", rgb)
    assert np.array_equal(read_png(tmp_path / "a.png").data, rgb)


def test_annotation_roundtrip(tmp_path):
    ann = AnnotationSet([Annotation("filament", 3, [(0.125, 1.0), (5.3333333, 2.0), (3.0, 7.75)])], (10, 12))
    write_annotations(tmp_path / "a.json", ann)
    back = read_annotations(tmp_path / "a.json")
    assert back.image_size == (10, 12)
    assert back.annotations[0].class_name == "filament"
    assert np.array_equal(np.asarray(back.annotations[0].polygon), np.asarray(ann.annotations[0].polygon))


def test_annotation_rejects_unknown_class():
    with pytest.raises(ValueError):
        Annotation("banana", 1, [(0, 0), (1, 0), (0, 1)])


def test_manifest_paths_resolve_relative_to_file(tmp_path):
    d = tmp_path / "ds"
    d.mkdir()
    doc = {
        "version": 1,
        "alignment": {"rgb_crop": [1, 2, 3, 4], "cube_crop": None},
        "samples": [
            {"id": "a", "rgb": "rgb/a.png", "cube": "cube/a.hdr", "split": "test", "scene_seed": 4},
            {"id": "b", "rgb": "rgb/b.png", "cube": "cube/b.hdr"},
        ],
    }
    (d / "m.json").write_text(json.dumps(doc))
    m = load_manifest(d / "m.json")
    assert m.rgb_crop == Rect(1, 2, 3, 4) and m.cube_crop is None
    assert m.get("a").rgb_path == d / "rgb" / "a.png"
    assert m.get("a").extra == {"scene_seed": 4}
    assert [s.id for s in m.split("test")] == ["a"]


def test_manifest_rejects_bad_version_and_duplicates(tmp_path):
    (tmp_path / "m.json").write_text(json.dumps({"version": 9, "samples": []}))
    with pytest.raises(ParseError):
        load_manifest(tmp_path / "m.json")
    rec = {"id": "a", "rgb": "x", "cube": "y"}
    (tmp_path / "d.json").write_text(json.dumps({"version": 1, "samples": [rec, rec]}))
    with pytest.raises(ValueError):
        load_manifest(tmp_path / "d.json")
