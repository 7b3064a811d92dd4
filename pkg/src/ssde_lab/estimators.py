"""scikit-learn style wrappers around the functional API.

Inputs are :class:`~ssde_lab.simulate.PathPair` objects (a single path or a
list of paths) rather than feature matrices, since the statistics need the
time grid and the model coefficients.
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .bayes import (
    LikelihoodContext,
    Prior,
    default_proposal_scale,
    grid_posterior,
    log_posterior_unnorm,
    mh_sample,
)
from .exceptions import InvalidArgumentError
from .likelihood import MarginalLikelihood, suff_stats_discrete
from .mle import ApproxObjective, fit_mle, fit_mle_mc
from .panel import panel_suff_stats, pooled_fit_mle
from .presets import get_preset
from .simulate import PathPair


def _paths(X):
    if isinstance(X, PathPair):
        return [X]
    paths = list(X)
    if not paths or not all(isinstance(p, PathPair) for p in paths):
        raise InvalidArgumentError("expected a PathPair or a non-empty list of PathPair")
    return paths


def _single(X):
    paths = _paths(X)
    if len(paths) != 1:
        raise InvalidArgumentError(f"expected one path, got {len(paths)}")
    return paths[0]


class _PresetMixin:
    def _model(self):
        return get_preset(self.preset).build(**(self.preset_params or {}))

    def _theta_init(self, model):
        if self.theta_init is not None:
            return np.atleast_1d(np.asarray(self.theta_init, dtype=float))
        return np.asarray(get_preset(self.preset).theta0, dtype=float)


class SuffStatsTransformer(_PresetMixin, TransformerMixin, BaseEstimator):
    """Map paths to rows ``[u_yx, v_yx, u_x, v_x]``."""

    def __init__(self, preset="unit-ratio", preset_params=None):
        self.preset = preset
        self.preset_params = preset_params

    def fit(self, X, y=None):
        self.model_ = self._model()
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        rows = []
        for p in _paths(X):
            s = suff_stats_discrete(p, self.model_)
            rows.append([s.u_y_given_x, s.v_y_given_x, s.u_x, s.v_x])
        return np.array(rows)


class GirsanovMLE(_PresetMixin, BaseEstimator):
    """Maximum-likelihood fit of ``theta`` from one observed path.

    ``mode="approx"`` maximises the large-window surrogate; ``mode="mc"`` the
    Monte-Carlo marginal likelihood.
    """

    def __init__(self, preset="unit-ratio", preset_params=None, mode="approx", theta_init=None,
                 theta_ref=None, n_latent=1024, seed=0, tol=1e-8, max_iter=200):
        self.preset = preset
        self.preset_params = preset_params
        self.mode = mode
        self.theta_init = theta_init
        self.theta_ref = theta_ref
        self.n_latent = n_latent
        self.seed = seed
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y=None):
        path = _single(X)
        model = self._model()
        theta_init = self._theta_init(model)
        if self.mode == "approx":
            stats = suff_stats_discrete(path, model)
            ref = theta_init if self.theta_ref is None else self.theta_ref
            self.objective_ = ApproxObjective.from_stats(stats, model, ref)
            self.result_ = fit_mle(self.objective_, theta_init, tol=self.tol,
                                   max_iter=self.max_iter)
        elif self.mode == "mc":
            self.result_ = fit_mle_mc(path, model, theta_init, n_latent=self.n_latent,
                                      seed=self.seed, tol=self.tol, max_iter=self.max_iter)
        else:
            raise InvalidArgumentError(f"unknown mode {self.mode!r}")
        self.model_ = model
        self.theta_hat_ = self.result_.theta_hat
        self.sigma_inv_ = self.result_.sigma_inv
        return self

    def score(self, X, y=None):
        """Monte-Carlo marginal log-likelihood of ``X`` per unit time at ``theta_hat_``."""
        check_is_fitted(self, "theta_hat_")
        path = _single(X)
        ml = MarginalLikelihood(path, self.model_, self.n_latent, self.seed)
        return ml(self.theta_hat_).estimate / ml.window.span


class PooledMLE(_PresetMixin, BaseEstimator):
    """Pooled fit of a shared ``theta`` from a panel of paths (one per individual)."""

    def __init__(self, preset="panel-linear", preset_params=None, theta_init=None,
                 theta_ref=None, tol=1e-8, max_iter=200):
        self.preset = preset
        self.preset_params = preset_params
        self.theta_init = theta_init
        self.theta_ref = theta_ref
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y=None):
        paths = _paths(X)
        preset = get_preset(self.preset)
        panel = preset.build_panel(len(paths), **(self.preset_params or {}))
        theta_init = self._theta_init(panel.base)
        stats = [suff_stats_discrete(p, panel.individual(i)) for i, p in enumerate(paths)]
        panel_suff_stats(paths, panel.base)  # grid consistency
        self.panel_ = panel
        self.stats_ = stats
        self.result_ = pooled_fit_mle(stats, panel, theta_init, theta_ref=self.theta_ref,
                                      tol=self.tol, max_iter=self.max_iter)
        self.theta_hat_ = self.result_.theta_hat
        self.sigma_inv_ = self.result_.sigma_inv
        return self


class BayesPosterior(_PresetMixin, BaseEstimator):
    """Posterior under a flat prior on ``theta_init -/+ prior_halfwidth``.

    ``fit`` computes the grid posterior for ``d <= 2``; :meth:`sample` runs a
    random-walk Metropolis chain started at the MLE.
    """

    def __init__(self, preset="unit-ratio", preset_params=None, mode="approx", theta_init=None,
                 prior_halfwidth=2.0, grid_points=201, n_latent=1024, seed=0):
        self.preset = preset
        self.preset_params = preset_params
        self.mode = mode
        self.theta_init = theta_init
        self.prior_halfwidth = prior_halfwidth
        self.grid_points = grid_points
        self.n_latent = n_latent
        self.seed = seed

    def fit(self, X, y=None):
        path = _single(X)
        model = self._model()
        theta_init = self._theta_init(model)
        stats = suff_stats_discrete(path, model)
        self.prior_ = Prior.flat_around(theta_init, self.prior_halfwidth)
        self.context_ = LikelihoodContext(model, stats.window, theta_ref=theta_init, stats=stats)
        if self.mode == "mc":
            self.context_.marginal = MarginalLikelihood(path, model, self.n_latent, self.seed)
        self.fit_ = fit_mle(stats, theta_init, model=model)
        self.posterior_ = None
        if model.dim <= 2:
            self.posterior_ = grid_posterior(self.log_posterior, self.prior_, self.grid_points)
        return self

    def log_posterior(self, theta):
        return log_posterior_unnorm(theta, self.prior_, self.mode, self.context_)

    def sample(self, n_draws, seed=None, proposal_scale=None):
        check_is_fitted(self, "fit_")
        scale = (default_proposal_scale(self.fit_.sigma_inv) if proposal_scale is None
                 else proposal_scale)
        return mh_sample(self.log_posterior, self.fit_.theta_hat, n_draws, scale,
                         self.seed if seed is None else seed)
