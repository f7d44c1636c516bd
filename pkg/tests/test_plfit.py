import math

import numpy as np
import pytest

from ckmap.plfit import PlFitError, PlModel, fit_dataset, fit_pathloss, predict_pl, solve_pivoted
from ckmap.propagation import C, free_space_gain_db, sample_cgm
from ckmap.scene import grid_locations, preset_scene


def _synth(alpha=2.0, beta=40.0, gamma=2.0, n=200, seed=0):
    rng = np.random.default_rng(seed)
    d = rng.uniform(1, 500, n)
    f = rng.choice([2.4e9, 2.42e9, 2.44e9, 5e9], n)
    g = -(beta + 10 * alpha * np.log10(d) + 10 * gamma * np.log10(f / f.min()))
    return d, f, g


def test_noiseless_recovery():
    d, f, g = _synth()
    m = fit_pathloss(d, f, g)
    assert m.alpha == pytest.approx(2.0, abs=1e-6)
    assert m.beta == pytest.approx(40.0, abs=1e-6)
    assert m.gamma == pytest.approx(2.0, abs=1e-6)
    assert m.rms < 1e-9
    np.testing.assert_allclose(predict_pl(m, d, f), g, atol=1e-6)


def test_free_space_exponent():
    rng = np.random.default_rng(1)
    d = rng.uniform(1, 300, 100)
    f = rng.choice([2.4e9, 2.5e9, 28e9], 100)
    m = fit_pathloss(d, f, free_space_gain_db(d, f))
    assert m.alpha == pytest.approx(2.0, abs=1e-6)
    assert m.gamma == pytest.approx(2.0, abs=1e-6)
    assert m.beta == pytest.approx(20 * math.log10(4 * math.pi * 2.4e9 / C), abs=1e-6)


def test_single_distance_error_names_column():
    with pytest.raises(PlFitError, match="distance"):
        fit_pathloss(np.full(10, 5.0), np.linspace(1e9, 2e9, 10), np.zeros(10))


def test_single_frequency_error():
    d = np.linspace(1, 10, 10)
    with pytest.raises(PlFitError, match="frequency"):
        fit_pathloss(d, 2.4e9, -20 * np.log10(d))
    m = fit_pathloss(d, 2.4e9, -20 * np.log10(d), fit_gamma=False)
    assert m.alpha == pytest.approx(2.0, abs=1e-9) and m.gamma == 0.0


def test_blocked_rows_dropped():
    d, f, g = _synth(n=50)
    g2 = g.copy()
    g2[::5] = -np.inf
    m = fit_pathloss(d, f, g2)
    assert m.n_rows == 40
    assert m.alpha == pytest.approx(2.0, abs=1e-6)


def test_decade_and_isotropy():
    m = PlModel(3.1, 35.0, 1.5, 2.4e9)
    assert predict_pl(m, 100.0, 3e9) - predict_pl(m, 10.0, 3e9) == pytest.approx(-31.0, abs=1e-12)
    with pytest.raises(ValueError):
        predict_pl(m, 0.0, 3e9)


def test_least_squares_optimality():
    rng = np.random.default_rng(4)
    d, f, g = _synth(n=300, seed=4)
    g = g + rng.normal(0, 4, g.shape)
    m = fit_pathloss(d, f, g)

    def sse(a, b, c):
        return float(np.sum((g - predict_pl(PlModel(a, b, c, m.f_ref), d, f)) ** 2))

    base = sse(m.alpha, m.beta, m.gamma)
    for i in range(3):
        for s in (-1e-3, 1e-3):
            p = [m.alpha, m.beta, m.gamma]
            p[i] += s
            assert sse(*p) >= base


def test_solver_matches_numpy():
    rng = np.random.default_rng(0)
    for _ in range(20):
        a = rng.normal(size=(3, 3))
        b = rng.normal(size=3)
        np.testing.assert_allclose(solve_pivoted(a, b), np.linalg.solve(a, b), rtol=1e-10, atol=1e-12)


def test_fit_on_sampled_dataset():
    s = preset_scene("d2d")
    pts = grid_locations(s, 10.0, 1.5, outdoor_only=True)
    ds = sample_cgm(s, pts[:20], pts)
    m = fit_dataset(ds)
    assert np.isfinite([m.alpha, m.beta, m.gamma]).all()
    assert m.alpha > 1.0
    assert m.to_dict()["n_rows"] == m.n_rows
    assert PlModel.from_dict(m.to_dict()) == m
