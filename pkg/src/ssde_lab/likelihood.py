"""Girsanov statistics, likelihoods and their large-window approximations.

For a path on ``[a_T, b_T]`` the observation statistics are
``u = int b_Y / sigma_Y^2 dY`` and ``v = int b_Y^2 / sigma_Y^2 dt`` (latent:
``u_X``, ``v_X`` likewise), discretised with left-endpoint sums. Given these,
the conditional log-density against the null-drift law is
``phi_Y u - phi_Y^2 v / 2 + phi_X u_X - phi_X^2 v_X / 2``.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .exceptions import (
    AssumptionViolation,
    DegenerateWeightsError,
    DivisionGuardError,
    InvalidArgumentError,
    NumericDomainError,
)
from .model import ObservationWindow
from .simulate import PathPair, TimeGrid, iter_latent_chunks
from .validation import check_count, check_param_vector, check_positive


@dataclass(frozen=True)
class SuffStats:
    u_y_given_x: float
    v_y_given_x: float
    u_x: float
    v_x: float
    window: ObservationWindow
    m: int

    @property
    def span(self):
        return self.window.span

    def to_dict(self):
        return {"u_yx": self.u_y_given_x, "v_yx": self.v_y_given_x, "u_x": self.u_x,
                "v_x": self.v_x, "m": self.m, "aT": self.window.a_T, "bT": self.window.b_T}


@dataclass(frozen=True)
class ResidualStats:
    i_yx: float
    i_x: float


@dataclass(frozen=True)
class LikBounds:
    lower: float
    upper: float
    widened: bool = False
    reordered: bool = False


@dataclass(frozen=True)
class McEstimate:
    estimate: float
    std_error: float


def _window_of(grid):
    if grid.window is not None:
        return grid.window
    return ObservationWindow(T=grid.span, a_T=grid.start, b_T=grid.stop)


def _guard(sig, what):
    zero = np.flatnonzero(sig == 0)
    if zero.size:
        node = int(zero[0] % sig.shape[-1])
        raise DivisionGuardError(f"{what} vanishes at node {node}", node=node)


def _require_finite(path):
    for name, z in (("y", path.y), ("x", path.x)):
        bad = np.flatnonzero(~np.isfinite(z))
        if bad.size:
            raise NumericDomainError(f"path {name} is not finite at knot {int(bad[0])}")


def girsanov_sums(b, sig, dz, dt):
    """Left-endpoint sums ``(sum b/sig^2 dz, sum b^2/sig^2 dt)`` along the last axis."""
    s2 = sig * sig
    return np.sum(b / s2 * dz, axis=-1), np.sum(b * b / s2 * dt, axis=-1)


def observation_terms(model, y, x, t):
    """``(b_Y, sigma_Y)`` at the left knots, broadcast to ``x[..., :-1]``."""
    shape = np.broadcast_shapes(np.shape(y[..., :-1]), np.shape(x[..., :-1]))
    yk, xk, tk = y[..., :-1], x[..., :-1], t[:-1]
    b = np.broadcast_to(np.asarray(model.b_y(yk, xk, tk), dtype=float), shape)
    s = np.broadcast_to(np.asarray(model.sigma_y(yk, xk, tk), dtype=float), shape)
    return b, s


def latent_terms(model, x, t):
    xk, tk = x[..., :-1], t[:-1]
    shape = np.shape(xk)
    b = np.broadcast_to(np.asarray(model.b_x(xk, tk), dtype=float), shape)
    s = np.broadcast_to(np.asarray(model.sigma_x(xk, tk), dtype=float), shape)
    return b, s


def suff_stats_discrete(path, model):
    """Discretised Girsanov statistics of a path pair.

    ``v = sum_k (b^2/sigma^2)(z_k) dt`` and ``u = sum_k (b/sigma^2)(z_k)(z_{k+1} - z_k)``
    for the observation (conditional on the latent path) and for the latent path.
    """
    _require_finite(path)
    t = path.grid.t
    dt = np.diff(t)
    by, sy = observation_terms(model, path.y, path.x, t)
    _guard(sy, "sigma_Y")
    bx, sx = latent_terms(model, path.x, t)
    _guard(sx, "sigma_X")
    u_y, v_y = girsanov_sums(by, sy, np.diff(path.y), dt)
    u_x, v_x = girsanov_sums(bx, sx, np.diff(path.x), dt)
    return SuffStats(float(u_y), float(v_y), float(u_x), float(v_x),
                     _window_of(path.grid), path.grid.m)


def residual_stats(stats, theta0, maps):
    """Noise parts ``u - phi_0 v`` of both statistics under ``theta0``."""
    theta0 = check_param_vector(theta0, maps.dim, "theta0")
    return ResidualStats(
        i_yx=stats.u_y_given_x - maps.phi_y(theta0) * stats.v_y_given_x,
        i_x=stats.u_x - maps.phi_x(theta0) * stats.v_x,
    )


def girsanov_exponent(phi_y, phi_x, u_y, v_y, u_x, v_x):
    return (phi_y * u_y - 0.5 * (phi_y * v_y * phi_y)
            + phi_x * u_x - 0.5 * (phi_x * v_x * phi_x))


def cond_loglik(theta, stats, maps):
    """Conditional log-likelihood given the latent path (the Girsanov exponent)."""
    theta = check_param_vector(theta, maps.dim)
    return float(girsanov_exponent(maps.phi_y(theta), maps.phi_x(theta), stats.u_y_given_x,
                                   stats.v_y_given_x, stats.u_x, stats.v_x))


class MarginalLikelihood:
    """Monte-Carlo marginal likelihood over latent paths from the null-drift law.

    The per-draw statistics do not depend on ``theta``, so they are computed
    once here and every call reuses the same draws (common random numbers).

    Parameters
    ----------
    path : PathPair
        Supplies the observed ``y`` and its grid; the latent part is ignored.
    model : StateSpaceModel
    n_latent : int
        Number of latent draws, at least 2.
    seed : int
    """

    def __init__(self, path, model, n_latent, seed, chunk=256):
        self.model = model
        self.n_latent = check_count(n_latent, "n_latent", minimum=2)
        self.seed = seed
        grid = path.grid
        self.window = _window_of(grid)
        t = grid.t
        dt = np.diff(t)
        y = np.asarray(path.y, dtype=float)
        dy = np.diff(y)
        theta_any = np.zeros(model.dim)
        parts = []
        for batch in iter_latent_chunks(model, theta_any, grid, self.n_latent, seed,
                                        null_drift=True, chunk=chunk):
            x = batch.x
            by, sy = observation_terms(model, y[None, :], x, t)
            _guard(sy, "sigma_Y")
            bx, sx = latent_terms(model, x, t)
            _guard(sx, "sigma_X")
            u_y, v_y = girsanov_sums(by, sy, dy, dt)
            u_x, v_x = girsanov_sums(bx, sx, np.diff(x, axis=-1), dt)
            parts.append(np.stack([u_y, v_y, u_x, v_x]))
        self.stats = np.concatenate(parts, axis=1)

    def log_weights(self, theta):
        theta = check_param_vector(theta, self.model.dim)
        u_y, v_y, u_x, v_x = self.stats
        return girsanov_exponent(self.model.maps.phi_y(theta), self.model.maps.phi_x(theta),
                                 u_y, v_y, u_x, v_x)

    def __call__(self, theta):
        return log_mean_exp(self.log_weights(theta))


def log_mean_exp(logw):
    """Stabilised ``log(mean(exp(logw)))`` with its delta-method standard error."""
    logw = np.asarray(logw, dtype=float)
    n = logw.size
    top = np.max(logw)
    if not np.isfinite(top):
        raise DegenerateWeightsError("all importance weights are zero or non-finite")
    w = np.exp(logw - top)
    mean = np.mean(w)
    # grouped so that equal weights give back ``top`` exactly
    est = top + (math.log(np.sum(w)) - math.log(n))
    se = float(np.std(w, ddof=1) / (math.sqrt(n) * mean))
    return McEstimate(float(est), se)


def marginal_loglik_mc(theta, y_path, model, grid=None, n_latent=1024, seed=0):
    """Monte-Carlo estimate of the marginal log-likelihood of an observation path."""
    if not isinstance(y_path, PathPair):
        if grid is None:
            raise InvalidArgumentError("a bare observation array needs its TimeGrid")
        y_path = PathPair(grid, np.asarray(y_path, float), np.zeros(grid.m + 1))
    return MarginalLikelihood(y_path, model, n_latent, seed)(theta)


def approx_loglik(theta, theta0, model, window, w_y_increment):
    """Large-window approximation of the modeled log-likelihood.

    ``w_y_increment`` stands for ``W_Y(b_T) - W_Y(a_T)``. At ``theta = theta0``
    this is the approximation of the true log-likelihood.
    """
    rb = model.require_bounds()
    theta = check_param_vector(theta, model.dim)
    theta0 = check_param_vector(theta0, model.dim, "theta0")
    maps = model.maps
    py, px = maps.phi_y(theta), maps.phi_x(theta)
    py0, px0 = maps.phi_y(theta0), maps.phi_x(theta0)
    span = window.span
    return float(span * rb.K_Y * py * py0 + py * math.sqrt(rb.K_Y) * w_y_increment
                 - span * rb.K_Y * py * py / 2.0 + span * rb.K_X * px * px0)


def w_increment_from_stats(stats, theta0, maps, K_Y):
    """Data-driven stand-in for ``W_Y(b_T) - W_Y(a_T)``: ``(u - phi_0 v) / sqrt(K_Y)``."""
    return residual_stats(stats, theta0, maps).i_yx / math.sqrt(K_Y)


def likelihood_log_bounds(theta, theta0, model, window, xi, residuals, lambda_sq_integral):
    """Log of the lower/upper envelope integrands of the modeled likelihood.

    The envelope constants are ``K ((b_T - a_T) -/+ alpha xi^2 int lambda^2)``.
    A negative lower constant (loose envelope) is clamped at zero, since the
    statistic ``v`` it bounds is non-negative, and ``widened`` is set.
    """
    rb = model.require_bounds()
    check_positive(float(xi), "xi", strict=False)
    check_positive(float(lambda_sq_integral), "lambda_sq_integral", strict=False)
    theta = check_param_vector(theta, model.dim)
    theta0 = check_param_vector(theta0, model.dim, "theta0")
    maps = model.maps
    span = window.span
    spread = xi * xi * lambda_sq_integral
    k_y1 = rb.K_Y * (span - rb.alpha_y1 * spread)
    k_y2 = rb.K_Y * (span + rb.alpha_y2 * spread)
    k_x1 = rb.K_X * (span - rb.alpha_x1 * spread)
    k_x2 = rb.K_X * (span + rb.alpha_x2 * spread)
    widened = k_y1 < 0 or k_x1 < 0
    if widened:
        warnings.warn("envelope too loose: lower ratio constant clamped at zero", RuntimeWarning)
        k_y1, k_x1 = max(k_y1, 0.0), max(k_x1, 0.0)
    py, px = maps.phi_y(theta), maps.phi_x(theta)
    py0, px0 = maps.phi_y(theta0), maps.phi_x(theta0)
    noise = py * residuals.i_yx + px * residuals.i_x
    lower = (py * py0 * k_y1 - py * py / 2.0 * k_y2
             + px * px0 * k_x1 - px * px / 2.0 * k_x2 + noise)
    upper = (py * py0 * k_y2 - py * py / 2.0 * k_y1
             + px * px0 * k_x2 - px * px / 2.0 * k_x1 + noise)
    reordered = lower > upper
    if reordered:
        lower, upper = upper, lower
    return LikBounds(float(lower), float(upper), bool(widened), bool(reordered))


def kl_rate_h(theta, theta0, maps, K_Y, K_X):
    """Kullback-Leibler divergence rate between the modeled and true path laws.

    Raises
    ------
    AssumptionViolation
        If ``|psi_X(theta)| > |psi_X(theta0)|``, where non-negativity is lost.
    """
    theta = check_param_vector(theta, maps.dim)
    theta0 = check_param_vector(theta0, maps.dim, "theta0")
    py, px = maps.phi_y(theta), maps.phi_x(theta)
    py0, px0 = maps.phi_y(theta0), maps.phi_x(theta0)
    if abs(px) > abs(px0):
        raise AssumptionViolation(
            f"|psi_X(theta)| <= |psi_X(theta0)| violated: {abs(px)} > {abs(px0)}")
    dy, dx = py - py0, px - px0
    # product order matches the quadratic-form version so r = 1 agrees to the bit
    return 0.5 * (dy * K_Y * dy + dx * K_X * dx + (px0 * K_X * px0 - px * K_X * px))


@dataclass(frozen=True)
class JRate:
    J_theta: float
    h_Theta: float
    J_A: float = float("nan")


def j_rate(theta, theta_grid, maps, K_Y, K_X, theta0, subset=None):
    """Excess divergence rate ``J(theta) = h(theta) - inf h`` with the infimum over a grid.

    ``subset`` is an optional boolean mask (or predicate) selecting grid points
    of a set ``A``; ``J_A`` is then the minimum of ``J`` over those points.
    """
    pts = [check_param_vector(p, maps.dim) for p in np.reshape(theta_grid, (-1, maps.dim))]
    if not pts:
        raise InvalidArgumentError("theta_grid must be non-empty")
    hs = np.array([kl_rate_h(p, theta0, maps, K_Y, K_X) for p in pts])
    h_inf = float(np.min(hs))
    j_theta = kl_rate_h(theta, theta0, maps, K_Y, K_X) - h_inf
    j_a = float("nan")
    if subset is not None:
        mask = (np.array([bool(subset(p)) for p in pts]) if callable(subset)
                else np.asarray(subset, dtype=bool).reshape(-1))
        if mask.any():
            j_a = float(np.min(hs[mask]) - h_inf)
        else:
            j_a = float("inf")
    return JRate(float(j_theta), h_inf, j_a)
