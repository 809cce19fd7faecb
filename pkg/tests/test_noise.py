import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nearfield_osm import noise, scene, synth
from nearfield_osm.noise import NoiseSpec


@pytest.fixture(scope="module")
def data():
    sc = scene.preset_scene("rectangle-2d").with_(k=8.0, n_waves=8)
    return sc, synth.cauchy_data(sc, synth.build_quadrature(sc, 6))


@pytest.fixture(scope="module")
def data3d():
    sc = scene.preset_scene("sphere-lshape-3d").with_(k=6.0, n_waves=3)
    return sc, synth.cauchy_data(sc, synth.build_quadrature(sc, 6))


def rel_frob(a, b):
    return np.linalg.norm((a - b).ravel()) / np.linalg.norm(b.ravel())


def test_zero_level_is_identity(data):
    _, d = data
    out = noise.add_noise(d, NoiseSpec(0.0, seed=3))
    assert np.array_equal(out.field, d.field) and np.array_equal(out.deriv, d.deriv)
    assert out.meta["noise"]["delta"] == 0.0


@pytest.mark.parametrize("fixture", ["data", "data3d"])
@pytest.mark.parametrize("delta", [0.02, 0.2, 1.0])
def test_exact_relative_level_per_trace(fixture, delta, request):
    _, d = request.getfixturevalue(fixture)
    out = noise.add_noise(d, NoiseSpec(delta, seed=1))
    assert rel_frob(out.field, d.field) == pytest.approx(delta, abs=1e-12)
    assert rel_frob(out.deriv, d.deriv) == pytest.approx(delta, abs=1e-12)


def test_deterministic_in_seed(data):
    _, d = data
    a = noise.add_noise(d, NoiseSpec(0.2, seed=7))
    b = noise.add_noise(d, NoiseSpec(0.2, seed=7))
    c = noise.add_noise(d, NoiseSpec(0.2, seed=8))
    assert np.array_equal(a.field, b.field) and np.array_equal(a.deriv, b.deriv)
    assert not np.array_equal(a.field, c.field)


def test_traces_get_independent_noise(data):
    _, d = data
    same = d.with_traces(d.field, d.field.copy())
    out = noise.add_noise(same, NoiseSpec(0.2, seed=0))
    assert not np.allclose(out.field - d.field, out.deriv - d.field)


def test_seed_recorded(data):
    _, d = data
    out = noise.add_noise(d, NoiseSpec(0.1, seed=42))
    assert out.meta["noise"] == {"delta": 0.1, "seed": 42, "rng": noise.RNG_ALGORITHM}


def test_unit_square_entries():
    n = noise.unit_square_noise(np.random.default_rng(0), (200, 50))
    assert np.all(np.abs(n.real) <= 1) and np.all(np.abs(n.imag) <= 1)
    assert n.real.min() < -0.99 and n.imag.max() > 0.99


@pytest.mark.parametrize("bad", [-0.1, float("nan")])
def test_negative_level_rejected(bad):
    with pytest.raises(ValueError):
        NoiseSpec(bad)


def test_nonfinite_data_rejected(data):
    _, d = data
    f = d.field.copy()
    f[0, 0] = np.nan
    with pytest.raises(ValueError):
        noise.add_noise(d.with_traces(f, d.deriv), NoiseSpec(0.1))


def test_noise_levels_are_finite_and_scale(data):
    sc, d = data
    surf = sc.surface()
    lo = noise.noise_levels(d, noise.add_noise(d, NoiseSpec(0.05, seed=2)), surf)
    hi = noise.noise_levels(d, noise.add_noise(d, NoiseSpec(0.1, seed=2)), surf)
    assert all(np.isfinite(v) and v > 0 for v in lo)
    np.testing.assert_allclose(hi, 2 * np.asarray(lo), rtol=1e-12)
    assert noise.noise_levels(d, d, surf) == (0.0, 0.0)


def test_noise_levels_3d(data3d):
    sc, d = data3d
    lv = noise.noise_levels(d, noise.add_noise(d, NoiseSpec(0.1, seed=0)), sc.surface())
    assert len(lv) == 2 and all(v > 0 for v in lv)


@settings(max_examples=25, deadline=None)
@given(st.floats(0, 2), st.integers(0, 2**63 - 1))
def test_exact_level_property(delta, seed):
    rng = np.random.default_rng(5)
    f = rng.normal(size=(4, 9)) + 1j * rng.normal(size=(4, 9))
    d = synth.CauchyDataSet("helmholtz", 2, 1.0, f, 2 * f)
    out = noise.add_noise(d, NoiseSpec(delta, seed))
    assert rel_frob(out.field, f) == pytest.approx(delta, abs=1e-12)
    assert rel_frob(out.deriv, 2 * f) == pytest.approx(delta, abs=1e-12)
