import io
import math

import numpy as np
import pytest
from scipy.stats import norm

from ssde_lab.bayes import (
    Chain,
    LikelihoodContext,
    Prior,
    default_proposal_scale,
    grid_normality_gap,
    grid_posterior,
    log_posterior_unnorm,
    mh_sample,
    posterior_normality_diag,
    set_decay_rate,
    standardize_draws,
    unstandardize,
)
from ssde_lab.exceptions import InsufficientSampleError, InvalidStartError
from ssde_lab.likelihood import approx_loglik, j_rate, suff_stats_discrete
from ssde_lab.mle import FitResult, fit_mle
from ssde_lab.simulate import simulate_pair

from conftest import grid_for


@pytest.fixture
def posterior_setup(unit_ratio):
    p = simulate_pair(unit_ratio, [1.0], grid_for(500.0, 500), seed=21)
    s = suff_stats_discrete(p, unit_ratio)
    prior = Prior.flat_around([1.0], 2.0)
    ctx = LikelihoodContext(unit_ratio, s.window, theta_ref=np.array([1.0]), stats=s)
    target = lambda th: log_posterior_unnorm(th, prior, "approx", ctx)
    fit = fit_mle(s, [1.0], model=unit_ratio)
    return p, s, prior, ctx, target, fit


def test_flat_prior_matches_likelihood(posterior_setup, unit_ratio):
    p, s, prior, ctx, target, _ = posterior_setup
    for th in (0.2, 1.0, 2.5):
        want = approx_loglik([th], [1.0], unit_ratio, s.window, ctx.w_y_increment)
        assert target([th]) == want
    assert target([3.5]) == -math.inf


def test_grid_posterior_is_conjugate_gaussian(posterior_setup):
    _, s, prior, _, target, _ = posterior_setup
    post = grid_posterior(target, prior)
    dens = np.exp(post.log_density())
    mean = s.u_y_given_x / s.v_y_given_x
    want = norm.pdf(post.points[:, 0], mean, 1 / math.sqrt(s.v_y_given_x))
    assert np.max(np.abs(dens - want)) < 1e-8 * want.max()
    assert post.mean()[0] == pytest.approx(mean, abs=1e-10)


def test_grid_posterior_shift_invariant(posterior_setup):
    _, _, prior, _, target, _ = posterior_setup
    a = grid_posterior(target, prior)
    b = grid_posterior(lambda th: target(th) + 1234.5, prior)
    np.testing.assert_allclose(a.log_density(), b.log_density(), atol=1e-9)


def test_grid_normality_gap_small(posterior_setup):
    _, _, prior, _, target, fit = posterior_setup
    assert grid_normality_gap(grid_posterior(target, prior), fit) < 0.02


def test_decay_rate_examples(posterior_setup, unit_ratio):
    _, s, prior, _, target, _ = posterior_setup
    post = grid_posterior(target, prior)
    full = set_decay_rate(lambda th: True, post, s.window, 0.0, prior)
    assert full.empirical_rate == 0.0 and full.target == 0.0
    pts = post.points
    mask = np.abs(pts[:, 0] - 1.0) >= 1.0
    J = j_rate([1.0], pts, unit_ratio.maps, 1.0, 1.0, [1.0], subset=mask).J_A
    assert J == 0.5
    r = set_decay_rate(lambda th: abs(th[0] - 1.0) >= 1.0, post, s.window, J, prior)
    assert abs(r.empirical_rate - (-0.5)) < 0.1
    near = set_decay_rate(lambda th: abs(th[0] - 1.0) < 0.5, post, s.window, 0.0, prior)
    assert near.target == 0.0 and abs(near.empirical_rate) < 1e-3


def test_decay_rate_zero_mass_flag(posterior_setup):
    _, s, prior, _, target, _ = posterior_setup
    draws = np.full((50, 1), 1.0)
    r = set_decay_rate(lambda th: th[0] > 2.0, draws, s.window, 0.5)
    assert r.zero_mass and r.empirical_rate == -math.inf


def test_mh_deterministic_and_starts_finite():
    target = lambda th: -0.5 * float(th @ th)
    a = mh_sample(target, [0.0, 0.0], 500, 1.0, seed=3)
    b = mh_sample(target, [0.0, 0.0], 500, 1.0, seed=3)
    np.testing.assert_array_equal(a.draws, b.draws)
    assert a.acceptance_rate == np.mean(a.accepted)
    with pytest.raises(InvalidStartError):
        mh_sample(lambda th: -math.inf, [0.0], 10, 1.0, seed=0)


def test_mh_tiny_steps_always_accepted():
    chain = mh_sample(lambda th: -0.5 * float(th @ th), [0.3], 200, 1e-12, seed=1)
    assert chain.acceptance_rate > 0.99


def test_mh_symmetric_target_mean():
    chain = mh_sample(lambda th: -0.5 * float(th @ th) / 4.0, [3.0], 40000, 4.0, seed=2)
    d = chain.after_burn_in()[:, 0]
    # the chain is correlated; batch means give an honest standard error
    batches = d[: d.size // 50 * 50].reshape(50, -1).mean(axis=1)
    se = batches.std(ddof=1) / math.sqrt(50)
    assert abs(d.mean()) < 3 * se


def test_mh_two_point_detailed_balance():
    # two unit cells around 0 and 1 carrying mass 1:3
    logp = [math.log(0.25), math.log(0.75)]

    def target(th):
        k = math.floor(th[0] + 0.5)
        return logp[k] if k in (0, 1) else -math.inf

    chain = mh_sample(target, [0.0], 200000, 1.0, seed=4)
    occupancy = np.mean(np.floor(chain.draws[:, 0] + 0.5) == 1)
    assert abs(occupancy - 0.75) < 0.02


def test_chain_csv():
    chain = Chain(np.array([[0.1, 0.2], [0.3, 0.4]]), np.array([-1.0, -2.0]),
                  np.array([True, False]), 0)
    buf = io.StringIO()
    chain.write_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "draw_index,theta_1,theta_2,log_post,accepted"
    assert lines[2].endswith(",0")


def _fit(theta_hat, sigma_inv):
    return FitResult(np.atleast_1d(theta_hat).astype(float), np.atleast_2d(sigma_inv), True, 1, 0.0)


def test_standardisation_round_trip():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(2, 2))
    fit = _fit([0.5, -1.0], a @ a.T + np.eye(2))
    draws = rng.normal(size=(50, 2))
    back = unstandardize(standardize_draws(draws, fit), fit)
    assert np.max(np.abs(back - draws)) < 1e-12


def test_normality_diag_on_exact_gaussian():
    rng = np.random.default_rng(1)
    fit = _fit([2.0], [[400.0]])
    draws = 2.0 + rng.normal(size=(125000, 1)) / 20.0
    chain = Chain(draws, np.zeros(len(draws)), np.ones(len(draws), bool), 0)
    diag = posterior_normality_diag(chain, fit)
    assert diag.ks_distance <= 0.03
    assert diag.sup_density_gap < 0.05


def test_normality_diag_flags_constant_chain():
    fit = _fit([2.0], [[400.0]])
    chain = Chain(np.full((500, 1), 2.0), np.zeros(500), np.zeros(500, bool), 0)
    assert posterior_normality_diag(chain, fit).ks_distance >= 0.5
    with pytest.raises(InsufficientSampleError):
        posterior_normality_diag(Chain(np.zeros((50, 1)), np.zeros(50), np.zeros(50, bool), 0), fit)


def test_default_proposal_scale():
    np.testing.assert_allclose(default_proposal_scale([[4.0, 0.0], [0.0, 1.0]]),
                               2.4 / math.sqrt(2) * np.array([0.5, 1.0]))


def test_grid_posterior_two_dimensional():
    prior = Prior.flat([-3, -3], [3, 3])
    post = grid_posterior(lambda th: -0.5 * float(th @ th), prior, n_points=61)
    assert post.log_prob(np.ones(61 * 61, bool)) == 0.0
    x = post.points[:, 0]
    upper, lower = math.exp(post.log_prob(x > 0)), math.exp(post.log_prob(x >= 0))
    assert upper + lower == pytest.approx(1.0, abs=1e-12)
