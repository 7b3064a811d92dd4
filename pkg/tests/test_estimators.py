import numpy as np
import pytest
from sklearn.base import clone

from ssde_lab.estimators import BayesPosterior, GirsanovMLE, PooledMLE, SuffStatsTransformer
from ssde_lab.exceptions import InvalidArgumentError
from ssde_lab.likelihood import suff_stats_discrete
from ssde_lab.mle import fit_mle
from ssde_lab.presets import get_preset
from ssde_lab.simulate import derive_seed, simulate_pair

from conftest import grid_for


@pytest.fixture
def path():
    return simulate_pair(get_preset("unit-ratio").build(), [1.0], grid_for(50.0, 200), 4)


def test_get_params_and_clone():
    est = GirsanovMLE(mode="mc", n_latent=32)
    params = est.get_params()
    assert params["mode"] == "mc" and params["n_latent"] == 32
    twin = clone(est)
    assert twin.get_params() == params and twin is not est
    est.set_params(seed=9)
    assert est.seed == 9


def test_transformer_rows(path):
    rows = SuffStatsTransformer().fit_transform([path, path])
    s = suff_stats_discrete(path, get_preset("unit-ratio").build())
    np.testing.assert_array_equal(rows, [[s.u_y_given_x, s.v_y_given_x, s.u_x, s.v_x]] * 2)


def test_mle_matches_functional(path):
    est = GirsanovMLE().fit(path)
    model = get_preset("unit-ratio").build()
    ref = fit_mle(suff_stats_discrete(path, model), [1.0], model=model)
    assert est.theta_hat_[0] == pytest.approx(ref.theta_hat[0], abs=1e-12)
    np.testing.assert_allclose(est.sigma_inv_, ref.sigma_inv, rtol=1e-12)
    assert np.isfinite(est.set_params(n_latent=16).score(path))


def test_mle_input_checks(path):
    with pytest.raises(InvalidArgumentError):
        GirsanovMLE().fit([path, path])
    with pytest.raises(InvalidArgumentError):
        GirsanovMLE().fit([1, 2])
    with pytest.raises(InvalidArgumentError):
        GirsanovMLE(mode="nope").fit(path)


def test_mc_mode_close_to_approx(path):
    a = GirsanovMLE().fit(path).theta_hat_[0]
    b = GirsanovMLE(mode="mc", n_latent=64).fit(path).theta_hat_[0]
    assert b == pytest.approx(a, abs=1e-8)


def test_pooled(path):
    panel = get_preset("panel-linear").build_panel(3)
    g = grid_for(40.0, 100)
    paths = [simulate_pair(panel.individual(i), [1.0], g, derive_seed(0, i)) for i in range(3)]
    est = PooledMLE().fit(paths)
    assert est.result_.converged and est.theta_hat_.shape == (1,)
    assert len(est.stats_) == 3


def test_bayes_posterior(path):
    est = BayesPosterior(grid_points=81).fit(path)
    assert est.posterior_ is not None
    assert est.posterior_.mean()[0] == pytest.approx(est.fit_.theta_hat[0], abs=0.02)
    chain = est.sample(300, seed=1)
    assert chain.draws.shape == (300, 1)
