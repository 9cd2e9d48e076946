import json

import numpy as np
import pytest
from scipy.ndimage import distance_transform_edt

from rgbhsi.geometry import components_of_binary, warp_component
from rgbhsi.imaging import Rect, rasterize_polygon
from rgbhsi.io import load_manifest, read_envi, read_mask
from rgbhsi.spectral import pca_fit
from rgbhsi.synth import (
    CLASS_FREQUENCIES,
    RAW_SCALE,
    SceneConfig,
    generate_scene,
    render_views,
    spectra_table,
    write_dataset,
)


def test_scene_is_deterministic():
    a, b = generate_scene(42), generate_scene(42)
    assert len(a.objects) == len(b.objects)
    for x, y in zip(a.objects, b.objects):
        assert x.class_id == y.class_id
        assert np.array_equal(x.polygon, y.polygon)
        assert np.array_equal(x.jitter.matrix, y.jitter.matrix)
    va, vb = render_views(a), render_views(b)
    assert np.array_equal(va.rgb.data, vb.rgb.data)
    assert np.array_equal(va.cube.data, vb.cube.data)
    assert np.array_equal(va.gt_mask_hsi.instance_ids, vb.gt_mask_hsi.instance_ids)


def test_empty_scene():
    s = generate_scene(1, SceneConfig(n_objects=(0, 0)))
    assert s.objects == []
    v = render_views(s)
    assert not v.gt_mask_rgb.class_ids.any() and not v.gt_mask_hsi.class_ids.any()


def test_class_proportions_follow_instance_counts():
    counts = dict.fromkeys(CLASS_FREQUENCIES, 0)
    for seed in range(1000):
        for o in generate_scene(seed).objects:
            counts[o.class_name] += 1
    total = sum(counts.values())
    ref = sum(CLASS_FREQUENCIES.values())
    for name, n in CLASS_FREQUENCIES.items():
        ratio = (counts[name] / total) / (n / ref)
        assert 0.8 <= ratio <= 1.2, (name, ratio)
    assert max(counts, key=counts.get) == "trash_bag"
    assert min(counts, key=counts.get) == "cardboard"


@pytest.mark.parametrize("seed", [0, 5, 17])
def test_hsi_mask_is_exact_warp_of_rgb_mask(seed):
    scene = generate_scene(seed)
    v = render_views(scene)
    for o in scene.objects:
        sel = v.gt_mask_rgb.instance_ids == o.instance_id
        hsi = v.gt_mask_hsi.instance_ids == o.instance_id
        warped = np.zeros_like(hsi)
        for c in components_of_binary(sel):
            warped |= warp_component(c, v.gt_affines[o.instance_id], scene.cfg.hsi_size)
        assert np.array_equal(warped, hsi)


def test_ribbons_are_thin():
    widths = []
    for seed in range(150):
        scene = generate_scene(seed)
        for o in scene.objects:
            if o.is_ribbon:
                sel = rasterize_polygon(o.polygon, scene.cfg.rgb_size)
                # twice the deepest inscribed distance approximates stroke width
                widths.append(2 * distance_transform_edt(sel).max() - 1)
    assert len(widths) > 20
    assert max(widths) <= 4.5


def test_identity_rig_gives_identical_masks():
    cfg = SceneConfig(
        rgb_size=(128, 128),
        hsi_size=(128, 128),
        rgb_crop=Rect(0, 0, 128, 128),
        jitter_shift=(0.0, 0.0),
        jitter_rot_deg=0.0,
        jitter_scale=0.0,
        jitter_shear=0.0,
        image_noise=0.0,
        spectral_noise=0.0,
    )
    v = render_views(generate_scene(3, cfg))
    assert np.array_equal(v.gt_mask_rgb.class_ids, v.gt_mask_hsi.class_ids)
    assert np.array_equal(v.gt_mask_rgb.instance_ids, v.gt_mask_hsi.instance_ids)


def test_three_spectra_noise_free_is_rank_three():
    cfg = SceneConfig(
        class_frequencies={"film": 1.0, "cardboard": 1.0},
        ribbon_prob=0.0,
        spectral_noise=0.0,
        texture_amplitude=0.0,
    )
    for seed in range(5):
        v = render_views(generate_scene(seed, cfg))
        if len(np.unique(v.gt_mask_hsi.class_ids)) == 3:
            break
    assert len(np.unique(v.gt_mask_hsi.class_ids)) == 3  # belt + two classes
    m = pca_fit(v.cube.data.astype(np.float64), k=3)
    assert m.explained_variance_ratio.sum() >= 0.999


def test_nearest_spectrum_recovers_hsi_mask():
    table = spectra_table()
    dmin = min(np.linalg.norm(table[i] - table[j]) for i in range(len(table)) for j in range(i + 1, len(table)))
    cfg = SceneConfig()
    assert cfg.spectral_noise * np.sqrt(table.shape[1]) < dmin / 2
    for seed in (2, 9):
        v = render_views(generate_scene(seed, cfg))
        x = v.cube.data.reshape(-1, table.shape[1]).astype(np.float64) / RAW_SCALE
        pred = np.argmin(((x[:, None, :] - table[None]) ** 2).sum(-1), axis=1)
        assert (pred == v.gt_mask_hsi.class_ids.ravel()).mean() >= 0.99


def test_projective_mode_renders():
    scene = generate_scene(4, SceneConfig(projective=True))
    assert all(o.homography is not None for o in scene.objects)
    v = render_views(scene)
    assert v.gt_mask_hsi.class_ids.any()


def test_dataset_export(tmp_path):
    path = write_dataset(tmp_path / "ds", 4, seed=9)
    m = load_manifest(path)
    assert [s.id for s in m.samples] == [f"scene_{i:04d}" for i in range(4)]
    assert m.rgb_crop == SceneConfig().rgb_crop
    s = m.samples[0]
    cube = read_envi(s.cube_path)
    assert cube.data.shape == (256, 256, 224) and cube.data.dtype == np.uint16
    gt = read_mask(m.root / s.extra["gt_hsi_mask"])
    assert gt.class_ids.shape == (256, 256)
    doc = json.loads((m.root / s.extra["gt_transforms"]).read_text())
    assert set(doc) == {"rig", "objects"}
