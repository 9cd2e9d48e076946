import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rgbhsi.errors import BadRank, DegenerateData, ShapeMismatch
from rgbhsi.imaging import HyperCube
from rgbhsi.spectral import PcaModel, false_color, pca_apply, pca_fit, pca_inverse
from rgbhsi.synth import mixture_cube


def _line_pixels(n=2000, noise=0.01, seed=0):
    rng = np.random.default_rng(seed)
    t = rng.normal(0, 1, n)
    return np.stack([t, t], axis=1) + rng.normal(0, noise, (n, 2))


def test_first_component_along_diagonal():
    m = pca_fit(_line_pixels(), k=2)
    assert np.allclose(m.components[0], [np.sqrt(0.5), np.sqrt(0.5)], atol=1e-3)
    assert m.explained_variance_ratio[0] >= 0.99


def test_toy_projection_matches_dot_products():
    x = _line_pixels(200)
    m = pca_fit(x, k=1)
    cube = x[:6].reshape(2, 3, 2)
    got = pca_apply(cube, m).data[..., 0].ravel()
    want = [float(np.dot(p - m.mean, m.components[0])) for p in x[:6]]
    assert np.allclose(got, want, atol=1e-12)


def test_mean_pixel_projects_to_zero():
    m = pca_fit(_line_pixels(), k=2)
    out = pca_apply(m.mean.reshape(1, 1, 2), m).data
    assert np.allclose(out, 0.0)


def test_errors():
    with pytest.raises(DegenerateData):
        pca_fit(np.ones((50, 4)), k=2)
    with pytest.raises(BadRank):
        pca_fit(np.random.default_rng(0).random((50, 3)), k=4)
    with pytest.raises(DegenerateData):
        pca_fit(np.random.default_rng(0).random((2, 3)), k=2)
    m = pca_fit(np.random.default_rng(0).random((50, 3)), k=2)
    with pytest.raises(ShapeMismatch):
        pca_apply(np.zeros((2, 2, 4)), m)


def test_full_rank_reconstructs_and_preserves_inner_products():
    x = np.random.default_rng(3).normal(size=(500, 6)) @ np.random.default_rng(4).normal(size=(6, 6))
    m = pca_fit(x, k=6)
    proj = pca_apply(x.reshape(1, 500, 6), m).data.reshape(500, 6)
    rec = pca_inverse(proj, m)
    centered = x - m.mean
    assert np.linalg.norm(rec - x) / np.linalg.norm(centered) < 1e-4
    assert np.allclose(proj @ proj.T, centered @ centered.T, atol=1e-8)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 8))
def test_model_invariants(seed, c):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(200, c)) * rng.uniform(0.1, 3, c)
    k = int(rng.integers(1, c + 1))
    m = pca_fit(x, k=k)
    assert np.allclose(m.components @ m.components.T, np.eye(k), atol=1e-6)
    evr = m.explained_variance_ratio
    assert np.all(np.diff(evr) <= 1e-12)
    assert np.all((evr >= 0) & (evr <= 1)) and evr.sum() <= 1 + 1e-6
    # EVR against an independent covariance trace
    cov = np.cov(x, rowvar=False)
    ev = np.sort(np.linalg.eigvalsh(cov))[::-1]
    assert abs(evr.sum() - ev[:k].sum() / np.trace(cov)) < 1e-9
    # sign convention
    idx = np.argmax(np.abs(m.components), axis=1)
    assert np.all(m.components[np.arange(k), idx] > 0)


def test_fit_is_deterministic_and_serialises(tmp_path):
    x = _line_pixels(300)
    a, b = pca_fit(x, k=2), pca_fit(x, k=2)
    assert np.array_equal(a.components, b.components)
    a.save(tmp_path / "m.json")
    c = PcaModel.load(tmp_path / "m.json")
    assert np.array_equal(c.components, a.components)
    assert np.array_equal(c.explained_variance_ratio, a.explained_variance_ratio)


def test_mixture_cube_beats_random_projections():
    cube, _ = mixture_cube(11, size=(48, 48))
    x = cube.data.reshape(-1, cube.bands)
    m = pca_fit(x, k=3)
    assert m.explained_variance_ratio.sum() >= 0.99
    centered = x - m.mean
    pca_mse = np.mean((centered - centered @ m.components.T @ m.components) ** 2)
    rng = np.random.default_rng(0)
    for _ in range(20):
        q, _ = np.linalg.qr(rng.normal(size=(cube.bands, 3)))
        assert pca_mse <= np.mean((centered - centered @ q @ q.T) ** 2)


def test_false_color_conventions():
    data = np.zeros((4, 5, 3))
    data[..., 0] = np.arange(20).reshape(4, 5)
    data[..., 1] = 7.0
    fc = false_color(HyperCube(data), (0, 1, 0)).data
    assert fc[..., 0].min() == 0.0 and fc[..., 0].max() == 1.0
    assert np.all(fc[..., 1] == 0.0)
    gray = false_color(HyperCube(data), (0, 0, 0)).data
    assert np.array_equal(gray[..., 0], gray[..., 1]) and np.array_equal(gray[..., 1], gray[..., 2])
    with pytest.raises(IndexError):
        false_color(HyperCube(data), (0, 1, 3))


def test_false_color_separates_materials():
    from rgbhsi.synth import class_spectrum

    a, b = class_spectrum("film"), class_spectrum("cardboard")
    data = np.zeros((10, 10, a.size))
    data[:, :5] = a
    data[:, 5:] = b
    bands = (20, 110, 200)
    fc = false_color(HyperCube(data), bands).data
    left, right = fc[:, :5].reshape(-1, 3).mean(0), fc[:, 5:].reshape(-1, 3).mean(0)
    assert np.linalg.norm(left - right) > 0.5
