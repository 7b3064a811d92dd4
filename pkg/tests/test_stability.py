import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssde_lab.exceptions import InvalidArgumentError, NumericDomainError
from ssde_lab.model import ParamMaps, StateSpaceModel
from ssde_lab.presets import get_preset
from ssde_lab.simulate import TimeGrid, simulate_latent_batch
from conftest import grid_for
from ssde_lab.stability import (
    LyapunovSpec,
    adaptive_simpson,
    check_h8,
    empirical_envelope,
    eta_integrable,
    gamma_nondecreasing,
    lv_operator,
    quadratic_spec,
    x_nodes,
)


def _latent(b_x, s_x, phi_x=1.0):
    return StateSpaceModel(
        b_y=lambda y, x, t: np.ones_like(y), sigma_y=lambda y, x, t: np.ones_like(y),
        b_x=b_x, sigma_x=s_x, maps=ParamMaps.affine([1.0], [0.0], offset_x=phi_x))


def _spec(V, V_t, V_x, V_xx, gamma=lambda t: np.ones_like(np.asarray(t, dtype=float)),
          eta=lambda t: np.zeros_like(np.asarray(t, dtype=float)), p=2.0):
    return LyapunovSpec(V, V_t, V_x, V_xx, p, gamma, eta)


def test_generator_of_zero_function():
    spec = _spec(lambda x, t: 0 * x, lambda x, t: 0 * x, lambda x, t: 0 * x, lambda x, t: 0 * x)
    model = get_preset("gbm-latent").build()
    assert np.all(lv_operator(spec, model, [1.0], np.linspace(-3, 3, 7), 2.0) == 0.0)


def test_generator_of_x_is_drift():
    model = _latent(lambda x, t: -x, lambda x, t: 0.5 * x)
    spec = _spec(lambda x, t: x, lambda x, t: 0 * x, lambda x, t: np.ones_like(x), lambda x, t: 0 * x)
    x = np.array([-2.0, 0.5, 3.0])
    np.testing.assert_array_equal(lv_operator(spec, model, [1.0], x, 0.0), -x)


def test_generator_of_square_closed_form():
    a, s = 1.0, 0.5
    model = get_preset("gbm-latent").build(a=a, sigma=s)
    x = np.linspace(-4, 4, 9)
    np.testing.assert_allclose(lv_operator(quadratic_spec(), model, [1.0], x, 3.0),
                               (-2 * a + s * s) * x * x, rtol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-10, 10), st.floats(0, 50))
def test_generator_linear_in_v(c1, c2, x, t):
    model = get_preset("gbm-latent").build()
    s1, s2 = quadratic_spec(0.0), quadratic_spec(0.3)
    comb = _spec(lambda x, t: c1 * s1.V(x, t) + c2 * s2.V(x, t),
                 lambda x, t: c1 * s1.V_t(x, t) + c2 * s2.V_t(x, t),
                 lambda x, t: c1 * s1.V_x(x, t) + c2 * s2.V_x(x, t),
                 lambda x, t: c1 * s1.V_xx(x, t) + c2 * s2.V_xx(x, t))
    lhs = lv_operator(comb, model, [1.0], x, t)
    rhs = c1 * lv_operator(s1, model, [1.0], x, t) + c2 * lv_operator(s2, model, [1.0], x, t)
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-9 * (1 + abs(x)) ** 2 * math.exp(0.3 * t))


def test_nonfinite_derivative_raises():
    spec = _spec(lambda x, t: x * x, lambda x, t: np.full_like(x, np.nan),
                 lambda x, t: 2 * x, lambda x, t: 2 + 0 * x)
    with pytest.raises(NumericDomainError):
        lv_operator(spec, get_preset("gbm-latent").build(), [1.0], np.array([1.0]), 0.0)


def test_check_h8_gbm_latent():
    good = check_h8(quadratic_spec(), get_preset("gbm-latent").build(sigma=0.5), [1.0])
    assert good.ok and good.violations == []
    bad = check_h8(quadratic_spec(), get_preset("gbm-latent").build(sigma=2.0), [1.0])
    assert bad.lower_bound_ok and not bad.generator_ok
    assert len(bad.violations) == x_nodes().size * 201
    assert {v["kind"] for v in bad.violations} == {"generator"}


def test_check_h8_growing_gamma_breaks_lower_bound():
    spec = _spec(lambda x, t: x * x, lambda x, t: 0 * x, lambda x, t: 2 * x, lambda x, t: 2 + 0 * x,
                 gamma=lambda t: 1.0 + np.asarray(t, dtype=float))
    rep = check_h8(spec, get_preset("gbm-latent").build(), [1.0])
    assert not rep.lower_bound_ok
    assert all(v["t"] > 0 for v in rep.violations if v["kind"] == "lower_bound")


def test_notch_excludes_origin():
    xs = x_nodes()
    assert xs.size == 200 and not np.any(xs == 0.0)
    with pytest.raises(InvalidArgumentError):
        check_h8(quadratic_spec(), get_preset("gbm-latent").build(), [1.0],
                 x_range=(0.0, 0.0), n_grid=3)


def test_refinement_keeps_violations():
    model = get_preset("gbm-latent").build(sigma=2.0)
    counts = [len(check_h8(quadratic_spec(), model, [1.0], n_grid=n).violations) > 0
              for n in (11, 51, 201)]
    assert counts == [True, True, True]


def test_gamma_monotone():
    t = np.linspace(0, 100, 101)
    assert gamma_nondecreasing(quadratic_spec(0.8), t)
    assert not gamma_nondecreasing(quadratic_spec(-0.1), t)


def test_adaptive_simpson():
    assert adaptive_simpson(math.sin, 0.0, math.pi) == pytest.approx(2.0, abs=1e-10)
    assert adaptive_simpson(lambda t: 3.0, 0.0, 2.0) == 6.0


def test_eta_integrable_examples():
    zero = eta_integrable(quadratic_spec())
    assert zero.total == 0.0 and zero.converged
    decaying = _spec(None, None, None, None, eta=lambda t: math.exp(-t))
    res = eta_integrable(decaying)
    assert res.total == pytest.approx(1.0, rel=1e-8) and res.converged
    flat = _spec(None, None, None, None, eta=lambda t: 1.0)
    assert not eta_integrable(flat).converged
    harmonic = _spec(None, None, None, None, eta=lambda t: 1.0 / (1.0 + t))
    assert not eta_integrable(harmonic).converged


def test_envelope_examples():
    spec = quadratic_spec()
    t = np.linspace(0, 1, 5)
    rep = empirical_envelope([(t, np.zeros(5)), (t, np.array([0, -3.0, 1, 2, 0]))], spec)
    assert rep.xi_hat == 3.0
    np.testing.assert_array_equal(rep.per_path_xi, [0.0, 3.0])
    with pytest.raises(NumericDomainError):
        empirical_envelope([(t, np.array([0, np.inf, 0, 0, 0]))], spec)
    with pytest.raises(InvalidArgumentError):
        empirical_envelope([], spec)


def test_envelope_exponential_lambda():
    spec = quadratic_spec(0.8)
    t = np.array([0.0, 1.0, 2.0])
    np.testing.assert_allclose(spec.lam(t), np.exp(-0.4 * t), rtol=1e-15)
    x = 2.0 * np.exp(-0.4 * t)
    assert empirical_envelope([(t, x)], spec).xi_hat == pytest.approx(2.0, rel=1e-14)


def test_envelope_quantile_stable_across_horizons():
    model = get_preset("gbm-latent").build(sigma=0.5)
    spec = quadratic_spec(0.8)
    q = []
    for T, seed in ((20.0, 11), (60.0, 12)):
        grid = TimeGrid(0.0, T, int(20 * T))
        batch = simulate_latent_batch(model, [1.0], grid, 200, seed, null_drift=False)
        q.append(empirical_envelope(batch, spec).quantile(0.95))
    assert abs(q[1] - q[0]) / q[0] < 0.25
