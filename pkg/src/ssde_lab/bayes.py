"""Posterior computation and large-sample diagnostics.

For ``d <= 2`` the posterior is evaluated on a tensor grid over the prior's
support box and normalised by trapezoid quadrature in log space, which keeps
exponentially small set probabilities accurate. Higher dimensions use a
random-walk Metropolis chain.
"""

import csv
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import logsumexp
from scipy.stats import norm

from .exceptions import (
    InsufficientSampleError,
    InvalidArgumentError,
    InvalidStartError,
    PreconditionViolation,
)
from .likelihood import approx_loglik, w_increment_from_stats
from .simulate import _generator
from .validation import check_box, check_count, check_param_vector

GRID_POINTS = 201
BURN_IN = 0.2
MIN_DRAWS = 100
HIST_BINS = 40
HIST_RANGE = (-4.0, 4.0)


@dataclass(frozen=True)
class Prior:
    log_density: Callable
    support_box: tuple

    @property
    def dim(self):
        return np.atleast_1d(self.support_box[0]).size

    def contains(self, theta):
        lo, hi = self.support_box
        return bool(np.all(theta >= lo) and np.all(theta <= hi))

    def __call__(self, theta):
        theta = np.asarray(theta, dtype=float)
        if not self.contains(theta):
            return -math.inf
        return float(self.log_density(theta))

    @classmethod
    def flat(cls, lower, upper):
        lo, hi = check_box((lower, upper), np.atleast_1d(lower).size)
        return cls(lambda th: 0.0, (lo, hi))

    @classmethod
    def flat_around(cls, center, half_width):
        c = np.atleast_1d(np.asarray(center, dtype=float))
        return cls.flat(c - half_width, c + half_width)


@dataclass
class LikelihoodContext:
    """Everything a log-likelihood evaluation needs besides ``theta``.

    ``approx`` mode uses ``stats`` and ``theta_ref`` (the Wiener increment is
    recovered from the statistics at ``theta_ref``); ``mc`` mode uses
    ``marginal``, a :class:`~ssde_lab.likelihood.MarginalLikelihood`.
    """

    model: object
    window: object
    theta_ref: Optional[np.ndarray] = None
    stats: object = None
    marginal: object = None
    w_y_increment: Optional[float] = None

    def __post_init__(self):
        if self.w_y_increment is None and self.stats is not None and self.theta_ref is not None:
            K_Y = self.model.require_bounds().K_Y
            self.w_y_increment = w_increment_from_stats(self.stats, self.theta_ref,
                                                        self.model.maps, K_Y)

    def loglik(self, theta, mode):
        if mode == "approx":
            if self.w_y_increment is None or self.theta_ref is None:
                raise InvalidArgumentError("approx mode needs theta_ref and statistics")
            return approx_loglik(theta, self.theta_ref, self.model, self.window,
                                 self.w_y_increment)
        if mode == "mc":
            if self.marginal is None:
                raise InvalidArgumentError("mc mode needs a marginal likelihood")
            return self.marginal(theta).estimate
        raise InvalidArgumentError(f"unknown likelihood mode {mode!r}")


def log_posterior_unnorm(theta, prior, loglik_mode, context):
    """Log prior plus log-likelihood; ``-inf`` outside the prior support."""
    theta = check_param_vector(theta, context.model.dim)
    lp = prior(theta)
    if lp == -math.inf:
        return -math.inf
    return lp + context.loglik(theta, loglik_mode)


@dataclass
class GridPosterior:
    axes: list
    log_post: np.ndarray
    log_weights: np.ndarray

    @property
    def points(self):
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=-1)

    @property
    def log_norm(self):
        return float(logsumexp(self.log_post + self.log_weights))

    def log_density(self):
        """Normalised log density at the nodes, in node order of :attr:`points`."""
        return (self.log_post - self.log_norm).reshape(-1)

    def log_prob(self, mask):
        """Log posterior probability of the nodes selected by ``mask``."""
        mask = np.asarray(mask, dtype=bool).reshape(self.log_post.shape)
        if not mask.any():
            return -math.inf
        return float(logsumexp((self.log_post + self.log_weights)[mask])) - self.log_norm

    def mean(self):
        w = np.exp(self.log_post + self.log_weights - self.log_norm).reshape(-1)
        return w @ self.points


def _trapezoid_log_weights(axes):
    logs = []
    for ax in axes:
        h = np.diff(ax)
        w = np.zeros(ax.size)
        w[:-1] += h / 2.0
        w[1:] += h / 2.0
        logs.append(np.log(w))
    mesh = np.meshgrid(*logs, indexing="ij")
    return sum(mesh)


def grid_posterior(target, prior, n_points=GRID_POINTS):
    """Posterior on a tensor grid of ``n_points`` per axis over the support box (``d <= 2``)."""
    d = prior.dim
    if d > 2:
        raise PreconditionViolation("grid posterior is limited to d <= 2; use mh_sample")
    n_points = check_count(n_points, "n_points", minimum=2)
    lo, hi = prior.support_box
    axes = [np.linspace(lo[k], hi[k], n_points) for k in range(d)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.reshape(-1) for m in mesh], axis=-1)
    lp = np.array([target(p) for p in pts]).reshape(mesh[0].shape)
    if not np.any(np.isfinite(lp)):
        raise InvalidArgumentError("posterior vanishes on the whole grid")
    return GridPosterior(axes, lp, _trapezoid_log_weights(axes))


@dataclass
class Chain:
    draws: np.ndarray
    log_posts: np.ndarray
    accepted: np.ndarray
    seed: int

    @property
    def acceptance_rate(self):
        return float(np.mean(self.accepted)) if self.accepted.size else 0.0

    def after_burn_in(self, fraction=BURN_IN):
        return self.draws[int(len(self.draws) * fraction):]

    def write_csv(self, fh):
        d = self.draws.shape[1]
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["draw_index"] + [f"theta_{k + 1}" for k in range(d)]
                        + ["log_post", "accepted"])
        for i, (th, lp, acc) in enumerate(zip(self.draws, self.log_posts, self.accepted)):
            writer.writerow([i] + [f"{v:.17g}" for v in th] + [f"{lp:.17g}", int(acc)])


def default_proposal_scale(sigma_inv):
    """``2.4 / sqrt(d)`` times the square roots of the diagonal of ``Sigma_T``."""
    sigma = np.linalg.inv(np.atleast_2d(sigma_inv))
    d = sigma.shape[0]
    return 2.4 / math.sqrt(d) * np.sqrt(np.abs(np.diag(sigma)))


def mh_sample(target, theta_init, n_draws, proposal_scale, seed):
    """Random-walk Metropolis with independent Gaussian proposals per coordinate.

    Raises
    ------
    InvalidStartError
        If ``target(theta_init)`` is ``-inf`` or not finite.
    """
    theta = check_param_vector(theta_init, None, "theta_init")
    n_draws = check_count(n_draws, "n_draws")
    scale = np.broadcast_to(np.asarray(proposal_scale, dtype=float), theta.shape)
    lp = float(target(theta))
    if not np.isfinite(lp):
        raise InvalidStartError(f"target is not finite at the starting point ({lp})")
    rng = _generator(seed)
    draws = np.empty((n_draws, theta.size))
    lps = np.empty(n_draws)
    acc = np.zeros(n_draws, dtype=bool)
    for i in range(n_draws):
        prop = theta + scale * rng.standard_normal(theta.size)
        lp_prop = float(target(prop))
        log_u = math.log(rng.uniform())
        if lp_prop > -math.inf and log_u < lp_prop - lp:
            theta, lp = prop, lp_prop
            acc[i] = True
        draws[i] = theta
        lps[i] = lp
    return Chain(draws, lps, acc, seed)


def _sqrt_psd(mat, inverse=False):
    vals, vecs = np.linalg.eigh(0.5 * (mat + mat.T))
    if np.any(vals <= 0):
        raise PreconditionViolation("observed information is not positive definite")
    root = np.sqrt(vals)
    if inverse:
        root = 1.0 / root
    return (vecs * root) @ vecs.T


def standardize_draws(draws, fit):
    """``Psi = Sigma_T^(-1/2) (theta - theta_hat)`` row by row."""
    root = _sqrt_psd(fit.sigma_inv)
    return (np.atleast_2d(draws) - fit.theta_hat) @ root.T


def unstandardize(psi, fit):
    root_inv = _sqrt_psd(fit.sigma_inv, inverse=True)
    return np.atleast_2d(psi) @ root_inv.T + fit.theta_hat


@dataclass(frozen=True)
class NormalityDiag:
    ks_distance: float
    sup_density_gap: float


def posterior_normality_diag(chain, fit, burn_in=BURN_IN):
    """Distance of standardised posterior draws from the standard normal.

    ``ks_distance`` is the largest per-coordinate Kolmogorov-Smirnov distance.
    ``sup_density_gap`` (``d = 1`` only, otherwise NaN) compares a 40-bin
    normalised histogram on ``[-4, 4]`` with the normal density at bin centres.
    """
    from .harness import ks_test

    if not fit.converged:
        raise PreconditionViolation("fit did not converge")
    draws = chain.after_burn_in(burn_in) if isinstance(chain, Chain) else np.asarray(chain)
    draws = np.atleast_2d(draws)
    if draws.shape[0] == 1 and draws.shape[1] != fit.theta_hat.size:
        draws = draws.T
    if draws.shape[0] < MIN_DRAWS:
        raise InsufficientSampleError(f"need {MIN_DRAWS} draws after burn-in, got {draws.shape[0]}")
    psi = standardize_draws(draws, fit)
    ks = max(ks_test(psi[:, k], norm.cdf).statistic for k in range(psi.shape[1]))
    gap = float("nan")
    if psi.shape[1] == 1:
        counts, edges = np.histogram(psi[:, 0], bins=HIST_BINS, range=HIST_RANGE)
        width = edges[1] - edges[0]
        dens = counts / (psi.shape[0] * width)
        centres = 0.5 * (edges[:-1] + edges[1:])
        gap = float(np.max(np.abs(dens - norm.pdf(centres))))
    return NormalityDiag(float(ks), gap)


def grid_normality_gap(grid, fit, radius=4.0):
    """Sup gap between the grid posterior density of ``Psi`` and the standard normal.

    The density of ``Psi`` at a node is the posterior density of ``theta``
    times ``det(Sigma_T)^(1/2)``; nodes with any ``|Psi_k| > radius`` are ignored.
    """
    psi = standardize_draws(grid.points, fit)
    _, logdet = np.linalg.slogdet(fit.sigma_inv)
    dens = np.exp(grid.log_density() - 0.5 * logdet)
    ref = np.prod(norm.pdf(psi), axis=1)
    keep = np.all(np.abs(psi) <= radius, axis=1)
    if not keep.any():
        raise InsufficientSampleError("no grid node within the standardised window")
    return float(np.max(np.abs(dens[keep] - ref[keep])))


@dataclass(frozen=True)
class DecayRate:
    empirical_rate: float
    target: float
    log_prob: float
    zero_mass: bool = False


def set_decay_rate(A, chain_or_grid, window, j_of_A, prior=None):
    """``log pi(A | data) / (b_T - a_T)`` next to its target ``-J(A)``.

    ``A`` is a predicate on parameter vectors. With a grid posterior the
    probability comes from quadrature; with a chain, from the visit frequency
    after burn-in.
    """
    if isinstance(chain_or_grid, GridPosterior):
        pts = chain_or_grid.points
        mask = np.array([bool(A(p)) for p in pts])
        if prior is not None:
            inside = np.array([prior(p) > -math.inf for p in pts])
            if not (mask & inside).any():
                raise PreconditionViolation("A has zero prior mass on the grid")
        log_p = chain_or_grid.log_prob(mask)
    else:
        draws = chain_or_grid.after_burn_in() if isinstance(chain_or_grid, Chain) else chain_or_grid
        freq = np.mean([bool(A(p)) for p in np.atleast_2d(draws)])
        log_p = math.log(freq) if freq > 0 else -math.inf
    zero = log_p == -math.inf
    return DecayRate(log_p / window.span, 0.0 - float(j_of_A), float(log_p), bool(zero))
