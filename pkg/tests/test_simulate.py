import io
import math

import numpy as np
import pytest

from ssde_lab.exceptions import InvalidArgumentError, SimulationBlowup
from ssde_lab.model import ParamMaps, StateSpaceModel, make_window
from ssde_lab.presets import get_preset
from ssde_lab.simulate import (
    PathPair,
    TimeGrid,
    _euler,
    derive_seed,
    simulate_batch,
    simulate_latent_batch,
    simulate_pair,
    wiener_increments,
    write_path_csv,
)

from conftest import const_model, grid_for


def test_increments_deterministic():
    np.testing.assert_array_equal(wiener_increments(4, 1.0, 7), wiener_increments(4, 1.0, 7))
    assert not np.array_equal(wiener_increments(4, 1.0, 7), wiener_increments(4, 1.0, 8))


def test_increments_mean_within_clt_bound():
    m, dt = 10 ** 5, 0.01
    dw = wiener_increments(m, dt, 11)
    assert abs(dw.mean()) < 4 * math.sqrt(dt / m)
    assert 0.5 < np.var(dw / math.sqrt(dt)) < 2.0


@pytest.mark.parametrize("m,dt", [(0, 1.0), (3, 0.0), (3, -1.0)])
def test_increments_reject(m, dt):
    with pytest.raises(InvalidArgumentError):
        wiener_increments(m, dt, 0)


def test_grid_knots():
    w = make_window(10.0)
    g = TimeGrid.for_window(w, 8)
    assert g.t[0] == w.a_T and g.t.size == 9
    np.testing.assert_allclose(np.diff(g.t), w.span / 8, rtol=1e-12)
    with pytest.raises(InvalidArgumentError):
        TimeGrid.for_window(w, 1)


def test_zero_drift_random_walk():
    model = const_model()
    p = simulate_pair(model, [0.0], grid_for(5.0, 100), seed=4)
    np.testing.assert_array_equal(p.y[1:], p.y[:-1] + p.dw_y)
    assert p.y[0] == model.y0 and p.x[0] == model.x0


def test_ode_limit():
    zero = lambda x, t: np.zeros_like(np.asarray(x, dtype=float))
    model = const_model(s_y=0.0, b_x=zero, s_x=zero)
    g = grid_for(3.0, 64)
    p = simulate_pair(model, [2.0], g, seed=1)
    assert p.y[-1] == pytest.approx(model.y0 + 2.0 * g.span, rel=1e-13)


def test_gbm_mean_oracle():
    model = StateSpaceModel(
        b_y=lambda y, x, t: np.ones_like(y), sigma_y=lambda y, x, t: np.ones_like(y),
        b_x=lambda x, t: -x, sigma_x=lambda x, t: 0.1 * x,
        maps=ParamMaps.affine([1.0], [0.0], offset_x=1.0), x0=1.0)
    g = grid_for(1.0, 2 ** 12)
    batch = simulate_batch(model, [0.0], g, range(1000))
    xb = batch.x[:, -1]
    se = xb.std(ddof=1) / math.sqrt(xb.size)
    assert abs(xb.mean() - math.exp(-g.span)) < 3 * se + 1e-4


def test_deterministic_and_independent_streams():
    model = get_preset("unit-ratio").build()
    g = grid_for(50.0, 1000)
    a = simulate_pair(model, [1.0], g, seed=9)
    b = simulate_pair(model, [1.0], g, seed=9)
    np.testing.assert_array_equal(a.y, b.y)
    np.testing.assert_array_equal(a.x, b.x)
    big = simulate_pair(const_model(), [0.0], grid_for(1000.0, 10 ** 5), seed=2)
    assert abs(np.corrcoef(big.dw_y, big.dw_x)[0, 1]) < 0.02


def test_batch_rows_match_single_paths():
    model = get_preset("gbm-latent").build()
    g = grid_for(5.0, 50)
    batch = simulate_batch(model, [0.7], g, [3, 1, 2])
    for i, s in enumerate([3, 1, 2]):
        np.testing.assert_array_equal(batch.y[i], simulate_pair(model, [0.7], g, s).y)


def test_latent_null_drift_never_calls_drift():
    def boom(x, t):
        raise AssertionError("drift evaluated")

    model = const_model(b_x=boom)
    lat = simulate_latent_batch(model, [1.0], grid_for(2.0, 10), 3, seed=1, null_drift=True)
    assert lat.x.shape == (3, 11)


def test_latent_path_content_independent_of_batch_size():
    model = get_preset("gbm-latent").build()
    g = grid_for(2.0, 20)
    small = simulate_latent_batch(model, [1.0], g, 3, seed=1)
    large = simulate_latent_batch(model, [1.0], g, 300, seed=1)
    np.testing.assert_array_equal(small.x, large.x[:3])


def test_latent_brownian_variance():
    model = const_model(x0=0.0)
    g = grid_for(4.0, 20)
    lat = simulate_latent_batch(model, [1.0], g, 10 ** 4, seed=5)
    assert np.var(lat.x[:, -1]) == pytest.approx(g.span, rel=0.05)


def test_euler_strong_order_half():
    a, sigma = 1.0, 0.5
    model = get_preset("gbm-latent").build(a=a, sigma=sigma)
    fine = 2 ** 12
    g = grid_for(1.0, fine)
    t = g.t
    errs = {256: [], 1024: []}
    for seed in range(100):
        dw = wiener_increments(fine, g.dt, derive_seed(seed, 1))
        w = np.concatenate([[0.0], np.cumsum(dw)])
        exact = model.x0 * np.exp(-(a + sigma ** 2 / 2) * (t - t[0]) + sigma * w)
        for m in errs:
            s = fine // m
            dwc = dw.reshape(m, s).sum(axis=1)
            _, x, _ = _euler(model, 0.0, 1.0, t[::s], None, np.array([model.x0]), None, dwc[None, :])
            errs[m].append(np.max(np.abs(x[0] - exact[::s])))
    ratio = np.mean(errs[256]) / np.mean(errs[1024])
    assert 1.6 <= ratio <= 2.6


def test_blowup_reported():
    model = const_model(b_y=1.0)
    explode = StateSpaceModel(b_y=lambda y, x, t: y * y + 1.0, sigma_y=model.sigma_y,
                              b_x=model.b_x, sigma_x=model.sigma_x, maps=model.maps, y0=1.0)
    with pytest.raises(SimulationBlowup) as info:
        simulate_pair(explode, [1.0], grid_for(10.0, 100), seed=0)
    assert info.value.step >= 1
    batch = simulate_batch(explode, [1.0], grid_for(10.0, 100), [0, 1])
    assert batch.failed.all()


def test_burn_in_starts_from_zero():
    model = get_preset("gbm-latent").build()
    g = grid_for(20.0, 200)
    p = simulate_pair(model, [1.0], g, seed=3, burn_in=True)
    q = simulate_pair(model, [1.0], g, seed=3)
    assert p.x[0] != model.x0 and q.x[0] == model.x0
    np.testing.assert_array_equal(p.dw_y, q.dw_y)


def test_path_csv_format():
    model = get_preset("unit-ratio").build()
    p = simulate_pair(model, [1.0], grid_for(1.0, 4), seed=0)
    buf = io.StringIO()
    write_path_csv(p, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "t,y,x" and len(lines) == 6
    assert float(lines[-1].split(",")[1]) == p.y[-1]
