"""Panels of state space SDEs sharing one parameter vector.

Individual ``i`` follows the base model with its own drift multipliers
``psi_{Y_i}(theta)``, ``psi_{X_i}(theta)``; these converge to user-supplied limit
maps as ``i`` grows. The second half of the module handles vector-valued drifts
(linear random effects), where the scalar statistics become vectors and
matrices.
"""

import dataclasses
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .exceptions import AssumptionViolation, InvalidArgumentError
from .likelihood import (
    MarginalLikelihood,
    _guard,
    _require_finite,
    _window_of,
    approx_loglik,
    kl_rate_h,
    suff_stats_discrete,
    w_increment_from_stats,
)
from .model import ParamMaps, fd_jacobian
from .simulate import derive_seed
from .validation import check_count, check_param_vector

PD_EIG_TOL = 1e-10
RIDGE = 1e-8


@dataclass(frozen=True)
class PanelModel:
    n: int
    base: object
    per_individual_maps: tuple
    limit_maps: ParamMaps
    K_bar_Y: float
    K_bar_X: float

    def __post_init__(self):
        check_count(self.n, "n")
        if len(self.per_individual_maps) != self.n:
            raise InvalidArgumentError(
                f"need {self.n} individual maps, got {len(self.per_individual_maps)}")
        dims = {m.dim for m in self.per_individual_maps} | {self.limit_maps.dim}
        if len(dims) != 1:
            raise InvalidArgumentError("all maps must share the parameter dimension")

    @classmethod
    def homogeneous(cls, base, n):
        """Every individual uses the base maps, which are also the limit maps."""
        rb = base.require_bounds()
        return cls(n, base, (base.maps,) * n, base.maps, rb.K_Y, rb.K_X)

    @property
    def dim(self):
        return self.limit_maps.dim

    def individual(self, i):
        """The base model with individual ``i``'s maps."""
        return dataclasses.replace(self.base, maps=self.per_individual_maps[i],
                                   name=f"{self.base.name}[{i}]")

    def map_deviation(self, theta_grid):
        """``max_i`` distance of individual map values from the limit maps over a grid."""
        worst = 0.0
        for th in np.reshape(theta_grid, (-1, self.dim)):
            py, px = self.limit_maps.phi_y(th), self.limit_maps.phi_x(th)
            for maps in self.per_individual_maps:
                worst = max(worst, abs(maps.phi_y(th) - py), abs(maps.phi_x(th) - px))
        return worst


def panel_suff_stats(paths, base):
    """Per-individual statistics; every path must live on the same grid."""
    if not paths:
        raise InvalidArgumentError("empty panel")
    grid = paths[0].grid
    for i, p in enumerate(paths):
        if p.grid != grid:
            raise InvalidArgumentError(f"path {i} is on a different grid")
    return [suff_stats_discrete(p, base) for p in paths]


def pooled_loglik(theta, stats_list, panel, mode="approx", theta_ref=None, paths=None,
                  n_latent=1024, seed=0):
    """Sum over individuals of the per-individual log-likelihood.

    In ``approx`` mode the Wiener increment of individual ``i`` is recovered
    from its statistics at ``theta_ref``; ``mc`` mode needs the observed
    ``paths`` and marginalises each individual's latent path by Monte Carlo.
    """
    if len(stats_list) != panel.n:
        raise InvalidArgumentError(f"expected {panel.n} statistics records, got {len(stats_list)}")
    theta = check_param_vector(theta, panel.dim)
    total = 0.0
    if mode == "approx":
        if theta_ref is None:
            raise InvalidArgumentError("approx mode needs theta_ref")
        for i, st in enumerate(stats_list):
            model = panel.individual(i)
            w = w_increment_from_stats(st, theta_ref, model.maps, model.require_bounds().K_Y)
            total += approx_loglik(theta, theta_ref, model, st.window, w)
    elif mode == "mc":
        if paths is None or len(paths) != panel.n:
            raise InvalidArgumentError("mc mode needs one observed path per individual")
        for i, p in enumerate(paths):
            ml = MarginalLikelihood(p, panel.individual(i), n_latent, derive_seed(seed, i))
            total += ml(theta).estimate
    else:
        raise InvalidArgumentError(f"unknown mode {mode!r}")
    return total


def pooled_w_bar(stats_list, panel, theta_ref):
    """Average over individuals of ``(u_i - phi_{Y_i}(theta_ref) v_i) / (sqrt(K_Y) span)``."""
    K_Y = panel.base.require_bounds().K_Y
    vals = [w_increment_from_stats(st, theta_ref, m, K_Y) / st.span
            for st, m in zip(stats_list, panel.per_individual_maps)]
    return float(np.mean(vals))


def pooled_fit_mle(stats_list, panel, theta_init, theta_ref=None, **opts):
    """Maximise the pooled approximate objective built on the limit maps.

    The observed information is scaled by ``n (b_T - a_T)`` and the CLT
    statistic (when ``theta0`` is passed through ``opts``) by its square root.
    """
    from .mle import ApproxObjective, fit_mle

    if len(stats_list) != panel.n:
        raise InvalidArgumentError(f"expected {panel.n} statistics records, got {len(stats_list)}")
    theta_init = check_param_vector(theta_init, panel.dim, "theta_init")
    ref = theta_init if theta_ref is None else check_param_vector(theta_ref, panel.dim, "theta_ref")
    span = stats_list[0].span
    obj = ApproxObjective(panel.limit_maps, panel.K_bar_Y, panel.K_bar_X,
                          pooled_w_bar(stats_list, panel, ref), ref, span, n=panel.n)
    return fit_mle(obj, theta_init, **opts)


def bar_h(theta, theta0, limit_maps, K_bar_Y, K_bar_X):
    """Divergence rate of the pooled panel; same form as the single-series rate."""
    return kl_rate_h(theta, theta0, limit_maps, K_bar_Y, K_bar_X)


# ---------------------------------------------------------------------------
# vector-valued drifts


@dataclass(frozen=True)
class VectorSuffStats:
    u_y: np.ndarray
    v_y: np.ndarray
    u_x: np.ndarray
    v_x: np.ndarray
    window: object = None
    m: int = 0

    @property
    def min_eig_y(self):
        return float(np.linalg.eigvalsh(self.v_y)[0])

    @property
    def min_eig_x(self):
        return float(np.linalg.eigvalsh(self.v_x)[0])

    @property
    def positive_definite(self):
        """Whether both ``v`` matrices clear the minimum-eigenvalue threshold."""
        return self.min_eig_y > PD_EIG_TOL and self.min_eig_x > PD_EIG_TOL

    def to_dict(self):
        return {"u_y": self.u_y.tolist(), "v_y": self.v_y.tolist(),
                "u_x": self.u_x.tolist(), "v_x": self.v_x.tolist(),
                "min_eig_y": self.min_eig_y, "min_eig_x": self.min_eig_x}


def _vector_drift(val, shape):
    arr = np.asarray(val, dtype=float)
    if arr.ndim == len(shape):
        arr = arr[..., None]
    arr = np.broadcast_to(arr, shape + arr.shape[-1:])
    # coordinate-major rows so that every per-coordinate sum runs over a contiguous row
    return np.ascontiguousarray(np.moveaxis(arr, -1, 0))


def _vector_sums(b, sig, dz, dt):
    s2 = sig * sig
    u = np.sum(b / s2 * dz, axis=-1)
    v = np.sum(b[:, None, :] * b[None, :, :] / s2 * dt, axis=-1)
    return u, v


def suff_stats_multidim(path, model):
    """Vector statistics ``u_j = sum (b_j / sigma^2) dz`` and ``v_jl = sum (b_j b_l / sigma^2) dt``.

    ``model.b_y`` / ``model.b_x`` may return a trailing axis of length ``r``;
    scalar drifts are treated as ``r = 1``.
    """
    _require_finite(path)
    t = path.grid.t
    dt = np.diff(t)
    m = path.grid.m
    yk, xk, tk = path.y[:-1], path.x[:-1], t[:-1]
    sy = np.broadcast_to(np.asarray(model.sigma_y(yk, xk, tk), float), (m,))
    _guard(sy, "sigma_Y")
    sx = np.broadcast_to(np.asarray(model.sigma_x(xk, tk), float), (m,))
    _guard(sx, "sigma_X")
    by = _vector_drift(model.b_y(yk, xk, tk), (m,))
    bx = _vector_drift(model.b_x(xk, tk), (m,))
    u_y, v_y = _vector_sums(by, sy, np.diff(path.y), dt)
    u_x, v_x = _vector_sums(bx, sx, np.diff(path.x), dt)
    return VectorSuffStats(u_y, v_y, u_x, v_x, _window_of(path.grid), m)


@dataclass(frozen=True)
class VectorMaps:
    """Vector drift multipliers ``theta -> R^{r_Y}`` and ``theta -> R^{r_X}``.

    Jacobians (rows index output coordinates) fall back to central differences.
    """

    psi_y: Callable
    psi_x: Callable
    dim: int
    jac_psi_y: Optional[Callable] = None
    jac_psi_x: Optional[Callable] = None

    def phi_y(self, theta):
        return np.atleast_1d(np.asarray(self.psi_y(theta), dtype=float))

    def phi_x(self, theta):
        return np.atleast_1d(np.asarray(self.psi_x(theta), dtype=float))

    def jac_y(self, theta):
        if self.jac_psi_y is not None:
            return np.atleast_2d(np.asarray(self.jac_psi_y(theta), dtype=float))
        return np.atleast_2d(fd_jacobian(self.phi_y, theta))

    def jac_x(self, theta):
        if self.jac_psi_x is not None:
            return np.atleast_2d(np.asarray(self.jac_psi_x(theta), dtype=float))
        return np.atleast_2d(fd_jacobian(self.phi_x, theta))

    @classmethod
    def from_scalar(cls, maps):
        return cls(lambda th: np.array([maps.phi_y(th)]), lambda th: np.array([maps.phi_x(th)]),
                   maps.dim, lambda th: maps.grad_y(th)[None, :],
                   lambda th: maps.grad_x(th)[None, :])


def loglik_multidim(theta, vstats, maps):
    """``phi_Y' u_Y - phi_Y' v_Y phi_Y / 2 + phi_X' u_X - phi_X' v_X phi_X / 2``."""
    theta = check_param_vector(theta, maps.dim)
    py, px = maps.phi_y(theta), maps.phi_x(theta)
    if py.shape != vstats.u_y.shape or px.shape != vstats.u_x.shape:
        raise InvalidArgumentError(
            f"map dimensions {py.shape}, {px.shape} do not match statistics "
            f"{vstats.u_y.shape}, {vstats.u_x.shape}")
    return float(py @ vstats.u_y - 0.5 * (py @ vstats.v_y @ py)
                 + px @ vstats.u_x - 0.5 * (px @ vstats.v_x @ px))


def _require_pd(mat, name):
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    if mat.shape[0] != mat.shape[1] or not np.allclose(mat, mat.T, rtol=1e-10, atol=0):
        raise AssumptionViolation(f"{name} must be a symmetric matrix")
    try:
        np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        raise AssumptionViolation(f"{name} must be positive definite") from None
    return mat


def pooled_fisher_multidim(theta, limit_maps, K_bar_Y):
    """``I_jk = (d_j psi_Y)' K_bar_Y (d_k psi_Y)`` for vector limit maps."""
    theta = check_param_vector(theta, limit_maps.dim)
    K = _require_pd(K_bar_Y, "K_bar_Y")
    J = limit_maps.jac_y(theta)
    return J.T @ K @ J


def bar_h_multidim(theta, theta0, limit_maps, K_bar_Y, K_bar_X):
    """Quadratic-form divergence rate for vector maps.

    Reduces to the scalar rate at ``r = 1``: the last term carries the same
    factor one half as the others.
    """
    K_Y = _require_pd(K_bar_Y, "K_bar_Y")
    K_X = _require_pd(K_bar_X, "K_bar_X")
    dy = limit_maps.phi_y(theta) - limit_maps.phi_y(theta0)
    px, px0 = limit_maps.phi_x(theta), limit_maps.phi_x(theta0)
    dx = px - px0
    last = px0 @ K_X @ px0 - px @ K_X @ px
    if last < 0:
        raise AssumptionViolation("psi_X(theta)' K_X psi_X(theta) <= psi_X(theta0)' K_X psi_X(theta0) violated")
    return 0.5 * (dy @ K_Y @ dy + dx @ K_X @ dx + last)


def ridge_inverse(mat):
    """Inverse with a ``1e-8`` ridge, for near-singular ``v`` matrices."""
    mat = np.asarray(mat, dtype=float)
    return np.linalg.inv(mat + RIDGE * np.eye(mat.shape[0]))
