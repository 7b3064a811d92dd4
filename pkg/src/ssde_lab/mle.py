"""Maximum-likelihood estimation.

The default route maximises the closed-form large-window surrogate ``g`` of the
per-unit-time log-likelihood ratio. ``g`` depends on the data only through
``w_bar``, the Wiener increment over the window divided by the window length,
which is recoverable from the sufficient statistics. The alternative route
maximises the Monte-Carlo marginal likelihood with common random numbers.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import InvalidArgumentError, PreconditionViolation
from .likelihood import MarginalLikelihood, SuffStats, residual_stats
from .model import fd_gradient, fd_jacobian
from .validation import check_box, check_param_vector

TOL = 1e-8
MAX_ITER = 200
ARMIJO_C = 1e-4
SHRINK = 0.5
MAX_HALVINGS = 60
BOX_HALF_WIDTH = 50.0


def _map_terms(theta, theta_ref, maps):
    theta = check_param_vector(theta, maps.dim)
    theta_ref = check_param_vector(theta_ref, maps.dim, "theta_ref")
    return (maps.phi_y(theta), maps.phi_x(theta), maps.phi_y(theta_ref), maps.phi_x(theta_ref),
            theta)


def g_objective(theta, theta_ref, maps, K_Y, K_X, w_bar):
    py, px, py0, px0, _ = _map_terms(theta, theta_ref, maps)
    g_y = -0.5 * K_Y * (py - py0) ** 2 + math.sqrt(K_Y) * (py - py0) * w_bar
    g_x = -0.5 * K_X * (px - px0) ** 2 + 0.5 * K_X * (px * px - px0 * px0)
    return float(g_y + g_x)


def g_gradient(theta, theta_ref, maps, K_Y, K_X, w_bar):
    py, px, py0, px0, theta = _map_terms(theta, theta_ref, maps)
    dy, dx = maps.grad_y(theta), maps.grad_x(theta)
    return (-K_Y * (py - py0) * dy - K_X * (px - px0) * dx + K_X * px * dx
            + math.sqrt(K_Y) * dy * w_bar)


def g_hessian(theta, theta_ref, maps, K_Y, K_X, w_bar):
    py, px, py0, px0, theta = _map_terms(theta, theta_ref, maps)
    dy, dx = maps.grad_y(theta), maps.grad_x(theta)
    hy, hx = maps.hess_y(theta), maps.hess_x(theta)
    out = (-K_Y * (np.outer(dy, dy) + (py - py0) * hy)
           - K_X * (np.outer(dx, dx) + (px - px0) * hx)
           + K_X * (np.outer(dx, dx) + px * hx)
           + math.sqrt(K_Y) * hy * w_bar)
    return 0.5 * (out + out.T)


@dataclass(frozen=True)
class FisherInfo:
    matrix: np.ndarray
    min_eigenvalue: float

    @property
    def positive_definite(self):
        return self.min_eigenvalue > 0


def fisher_info(theta, maps, K_Y):
    """``K_Y grad psi_Y grad psi_Y'``, reported with its smallest eigenvalue.

    The matrix has rank one, so for ``d > 1`` it is singular and
    ``positive_definite`` is False; callers decide what to do about it.
    """
    theta = check_param_vector(theta, maps.dim)
    g = maps.grad_y(theta)
    mat = np.outer(g * K_Y, g)
    return FisherInfo(mat, float(np.linalg.eigvalsh(mat)[0]))


class ApproxObjective:
    """The surrogate ``g`` for fixed data, with its exact derivatives.

    ``span * n`` converts ``g`` back to the log-likelihood scale, which fixes
    the observed information ``-span * n * g''``.
    """

    mode = "approx"

    def __init__(self, maps, K_Y, K_X, w_bar, theta_ref, span, n=1):
        self.maps = maps
        self.K_Y = float(K_Y)
        self.K_X = float(K_X)
        self.w_bar = float(w_bar)
        self.theta_ref = check_param_vector(theta_ref, maps.dim, "theta_ref")
        self.span = float(span)
        self.n = int(n)
        self.dim = maps.dim

    @classmethod
    def from_stats(cls, stats, model, theta_ref):
        """Data-driven ``w_bar = (u - phi_Y(theta_ref) v) / (sqrt(K_Y) span)``."""
        rb = model.require_bounds()
        i_yx = residual_stats(stats, theta_ref, model.maps).i_yx
        w_bar = i_yx / (math.sqrt(rb.K_Y) * stats.span)
        return cls(model.maps, rb.K_Y, rb.K_X, w_bar, theta_ref, stats.span)

    def _args(self):
        return self.theta_ref, self.maps, self.K_Y, self.K_X, self.w_bar

    def value(self, theta):
        return g_objective(theta, *self._args())

    def gradient(self, theta):
        return g_gradient(theta, *self._args())

    def hessian(self, theta):
        return g_hessian(theta, *self._args())

    def information(self, theta):
        return -self.hessian(theta) * (self.span * self.n)


class McObjective:
    """Monte-Carlo marginal log-likelihood per unit time, with difference derivatives.

    The latent draws are fixed at construction, so the objective is a smooth
    deterministic function of ``theta``.
    """

    mode = "mc"

    def __init__(self, marginal, span):
        self.marginal = marginal
        self.span = float(span)
        self.n = 1
        self.dim = marginal.model.dim

    def loglik(self, theta):
        return self.marginal(theta).estimate

    def value(self, theta):
        return self.loglik(theta) / self.span

    def gradient(self, theta):
        return fd_gradient(self.value, theta)

    def hessian(self, theta):
        h = fd_jacobian(self.gradient, theta)
        return 0.5 * (h + h.T)

    def information(self, theta):
        return -self.hessian(theta) * self.span


@dataclass
class FitResult:
    theta_hat: np.ndarray
    sigma_inv: np.ndarray
    converged: bool
    iterations: int
    objective_at_opt: float
    clt_stat: np.ndarray = None
    span: float = float("nan")
    n: int = 1
    grad_norm: float = float("nan")
    ascent_fallback_iters: list = field(default_factory=list)
    sigma_inv_fallback: bool = False
    mode: str = "approx"

    def to_dict(self):
        return {
            "theta_hat": self.theta_hat.tolist(),
            "sigma_inv": self.sigma_inv.tolist(),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "objective": float(self.objective_at_opt),
            "clt_stat": None if self.clt_stat is None else self.clt_stat.tolist(),
        }


def _projected_grad(theta, grad, lo, hi):
    g = grad.copy()
    g[(theta <= lo) & (g < 0)] = 0.0
    g[(theta >= hi) & (g > 0)] = 0.0
    return g


def _neg_definite(h):
    try:
        np.linalg.cholesky(-h)
        return True
    except np.linalg.LinAlgError:
        return False


def _information(obj, theta):
    info = obj.information(theta)
    info = 0.5 * (info + info.T)
    ok = np.all(np.isfinite(info))
    if ok:
        try:
            ok = np.linalg.cond(info) < 1e12
        except np.linalg.LinAlgError:
            ok = False
    if not ok:
        return np.eye(obj.dim), True
    return info, False


def fit_mle(data, theta_init, model=None, theta_ref=None, theta0=None, box=None,
            tol=TOL, max_iter=MAX_ITER, line_search=True):
    """Newton ascent with backtracking and box projection.

    Parameters
    ----------
    data : SuffStats or objective
        Statistics (the surrogate objective is then built with ``model``) or any
        object with ``value``, ``gradient``, ``hessian``, ``information``,
        ``span`` and ``n``.
    theta_init : array_like
    model : StateSpaceModel, optional
        Required when ``data`` is a SuffStats record.
    theta_ref : array_like, optional
        Reference point at which ``w_bar`` is recovered; defaults to ``theta_init``.
    theta0 : array_like, optional
        When given, ``clt_stat`` is filled in.
    box : (lower, upper), optional
        Defaults to ``theta_init -/+ 50``.

    Returns
    -------
    FitResult
        ``converged`` is False when ``max_iter`` runs out or the line search
        stalls; the last iterate is returned either way. Iterations at which the
        Hessian was not negative definite took a gradient step instead and are
        listed in ``ascent_fallback_iters``.
    """
    theta = check_param_vector(theta_init, None, "theta_init")
    if isinstance(data, SuffStats):
        if model is None:
            raise InvalidArgumentError("fitting from statistics needs the model")
        ref = theta if theta_ref is None else theta_ref
        obj = ApproxObjective.from_stats(data, model, ref)
    else:
        obj = data
    theta = check_param_vector(theta, obj.dim, "theta_init")
    if box is None:
        lo, hi = theta - BOX_HALF_WIDTH, theta + BOX_HALF_WIDTH
    else:
        lo, hi = check_box(box, obj.dim)
        if np.any(theta < lo) or np.any(theta > hi):
            raise PreconditionViolation("theta_init lies outside the parameter box")

    f = obj.value(theta)
    converged = False
    fallback = []
    it = 0
    while True:
        grad = obj.gradient(theta)
        pg = _projected_grad(theta, grad, lo, hi)
        if np.max(np.abs(pg)) <= tol:
            converged = True
            break
        if it >= max_iter:
            break
        hess = obj.hessian(theta)
        if _neg_definite(hess):
            step = -np.linalg.solve(hess, grad)
        else:
            fallback.append(it)
            step = grad
        it += 1
        t = 1.0
        accepted = False
        for _ in range(MAX_HALVINGS):
            cand = np.clip(theta + t * step, lo, hi)
            f_cand = obj.value(cand)
            if not line_search or f_cand >= f + ARMIJO_C * float(grad @ (cand - theta)):
                accepted = True
                break
            t *= SHRINK
        if not accepted or np.array_equal(cand, theta):
            break
        theta, f = cand, f_cand

    sigma_inv, sigma_fallback = _information(obj, theta)
    fit = FitResult(
        theta_hat=theta, sigma_inv=sigma_inv, converged=converged, iterations=it,
        objective_at_opt=float(f), span=obj.span, n=obj.n,
        grad_norm=float(np.max(np.abs(pg))), ascent_fallback_iters=fallback,
        sigma_inv_fallback=sigma_fallback, mode=obj.mode,
    )
    if theta0 is not None and converged:
        fit.clt_stat = clt_standardize(fit, theta0)
    return fit


def fit_mle_mc(path, model, theta_init, n_latent=1024, seed=0, **opts):
    """Fit by maximising the Monte-Carlo marginal likelihood (common random numbers)."""
    marginal = MarginalLikelihood(path, model, n_latent, seed)
    return fit_mle(McObjective(marginal, marginal.window.span), theta_init, **opts)


def clt_standardize(fit, theta0, window=None, maps=None, K_Y=None):
    """``sqrt(n (b_T - a_T)) (theta_hat - theta0)``; ``n = 1`` for a single series.

    ``maps`` and ``K_Y`` are accepted for symmetry with the limiting covariance
    ``I(theta0)^{-1}`` but are not needed for the scaling itself.
    """
    if not fit.converged:
        raise PreconditionViolation("cannot standardise a fit that did not converge")
    theta0 = check_param_vector(theta0, fit.theta_hat.size, "theta0")
    span = fit.span if window is None else window.span
    return math.sqrt(fit.n * span) * (fit.theta_hat - theta0)
