"""Lyapunov checks for almost-sure stability of the latent process.

A Lyapunov triple ``(V, gamma, eta)`` certifies stability when
``gamma(t) |x|^p <= V(x, t)`` and ``LV(x, t) <= eta(t)`` for ``x != 0``, with
``gamma`` non-decreasing to infinity and ``eta`` integrable. Paths then obey
``|x(t)| <= xi * lambda(t)`` with ``lambda = gamma^(-1/p)`` and a finite random
``xi``. Everything here is checked on finite grids, so a pass is evidence and a
failure is a counterexample.
"""

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .exceptions import InvalidArgumentError, NumericDomainError
from .validation import check_count, check_param_vector, check_positive

X_RANGE = (-10.0, 10.0)
N_GRID = 201
NOTCH = 1e-6
REL_TOL = 1e-12
ETA_T_MAX = 1e4
ETA_TAIL_FRACTION = 0.01


@dataclass(frozen=True)
class LyapunovSpec:
    V: Callable
    V_t: Callable
    V_x: Callable
    V_xx: Callable
    p: float
    gamma: Callable
    eta: Callable

    def __post_init__(self):
        check_positive(float(self.p), "p")

    def lam(self, t):
        """Envelope ``lambda(t) = gamma(t)^(-1/p)``."""
        with np.errstate(over="ignore", divide="ignore"):
            return np.asarray(self.gamma(t), dtype=float) ** (-1.0 / self.p)


def quadratic_spec(rate=0.0):
    """``V = exp(rate t) x^2`` with ``gamma = exp(rate t)``, ``p = 2`` and ``eta = 0``.

    ``rate = 0`` is the plain ``V = x^2``; a positive rate buys the exponential
    envelope ``lambda(t) = exp(-rate t / 2)``.
    """
    r = float(rate)
    return LyapunovSpec(
        V=lambda x, t: np.exp(r * t) * x * x,
        V_t=lambda x, t: r * np.exp(r * t) * x * x,
        V_x=lambda x, t: 2.0 * np.exp(r * t) * x,
        V_xx=lambda x, t: 2.0 * np.exp(r * t) * np.ones_like(x),
        p=2.0,
        gamma=lambda t: np.exp(r * np.asarray(t, dtype=float)),
        eta=lambda t: np.zeros_like(np.asarray(t, dtype=float)),
    )


def lv_operator(spec, model, theta, x, t):
    """Generator ``V_t + V_x phi_X b_X + sigma_X^2 V_xx / 2`` of the parameterised latent SDE."""
    theta = check_param_vector(theta, model.dim)
    phi_x = model.maps.phi_x(theta)
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    x, t = np.broadcast_arrays(x, t)
    vt, vx, vxx = (np.asarray(f(x, t), dtype=float) for f in (spec.V_t, spec.V_x, spec.V_xx))
    if not (np.all(np.isfinite(vt)) and np.all(np.isfinite(vx)) and np.all(np.isfinite(vxx))):
        raise NumericDomainError("Lyapunov partial derivatives are not finite")
    s = np.asarray(model.sigma_x(x, t), dtype=float)
    out = vt + vx * (phi_x * np.asarray(model.b_x(x, t), dtype=float)) + 0.5 * s * s * vxx
    return out if out.ndim else float(out)


@dataclass
class H8Report:
    lower_bound_ok: bool
    generator_ok: bool
    violations: list

    @property
    def ok(self):
        return self.lower_bound_ok and self.generator_ok

    def to_dict(self):
        return {"lower_bound_ok": self.lower_bound_ok, "generator_ok": self.generator_ok,
                "violations": self.violations}


def x_nodes(x_range=X_RANGE, n_grid=N_GRID, notch=NOTCH):
    """Uniform nodes over ``x_range`` without the ones inside ``(-notch, notch)``."""
    x = np.linspace(x_range[0], x_range[1], n_grid)
    return x[np.abs(x) >= notch]


def check_h8(spec, model, theta, x_range=X_RANGE, t_range=(0.0, 100.0), n_grid=N_GRID,
             notch=NOTCH, rtol=REL_TOL):
    """Test both Lyapunov inequalities at every node of an ``x`` by ``t`` grid.

    Comparisons allow a relative slack of ``rtol`` so that exact equality
    (``V = gamma |x|^p``) survives rounding.
    """
    n_grid = check_count(n_grid, "n_grid", minimum=1)
    xs = x_nodes(x_range, n_grid, notch)
    ts = np.linspace(t_range[0], t_range[1], n_grid)
    if xs.size == 0:
        raise InvalidArgumentError("x grid is empty once the neighbourhood of 0 is removed")
    X, Tm = np.meshgrid(xs, ts, indexing="ij")
    V = np.asarray(spec.V(X, Tm), dtype=float)
    floor = np.asarray(spec.gamma(Tm), dtype=float) * np.abs(X) ** spec.p
    low_bad = floor > V + rtol * np.abs(V)
    lv = lv_operator(spec, model, theta, X, Tm)
    eta = np.broadcast_to(np.asarray(spec.eta(Tm), dtype=float), lv.shape)
    scale = np.maximum(np.abs(lv), np.abs(eta))
    gen_bad = lv > eta + rtol * scale
    violations = []
    for kind, mask in (("lower_bound", low_bad), ("generator", gen_bad)):
        for i, j in zip(*np.nonzero(mask)):
            violations.append({"x": float(X[i, j]), "t": float(Tm[i, j]), "kind": kind})
    return H8Report(not low_bad.any(), not gen_bad.any(), violations)


def gamma_nondecreasing(spec, t_grid):
    g = np.asarray(spec.gamma(np.asarray(t_grid, dtype=float)), dtype=float)
    return bool(np.all(np.diff(g) >= 0))


def adaptive_simpson(f, a, b, tol=1e-10, max_depth=50):
    """Adaptive Simpson quadrature with Richardson correction."""

    def simpson(fa, fm, fb, a, b):
        return (b - a) / 6.0 * (fa + 4.0 * fm + fb)

    def rec(a, b, fa, fm, fb, whole, tol, depth):
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        left = simpson(fa, flm, fm, a, m)
        right = simpson(fm, frm, fb, m, b)
        diff = left + right - whole
        if depth <= 0 or abs(diff) <= 15.0 * tol:
            return left + right + diff / 15.0
        return (rec(a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + rec(m, b, fm, frm, fb, right, tol / 2.0, depth - 1))

    fa, fb, fm = f(a), f(b), f(0.5 * (a + b))
    return rec(a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, max_depth)


@dataclass(frozen=True)
class EtaIntegral:
    total: float
    tail: float
    converged: bool


def eta_integrable(spec, t_max=ETA_T_MAX):
    """Integral of ``eta`` on ``[0, t_max]`` and the share of its tail ``[t_max/2, t_max]``.

    Counted as convergent when the tail holds under 1% of the total (a zero
    integral counts as convergent).
    """
    f = lambda t: float(spec.eta(t))
    # split at powers of two so narrow early features are not stepped over
    edges = [0.0] + [t_max / 2.0 ** k for k in range(20, 0, -1)] + [t_max]
    parts = [adaptive_simpson(f, lo, hi) for lo, hi in zip(edges[:-1], edges[1:])]
    total = float(sum(parts))
    tail = float(parts[-1])
    ok = math.isfinite(total) and (tail == 0.0 or abs(tail) < ETA_TAIL_FRACTION * abs(total))
    return EtaIntegral(total, tail, bool(ok))


@dataclass
class EnvelopeReport:
    xi_hat: float
    per_path_xi: np.ndarray
    lam: Callable

    def quantile(self, q):
        return float(np.quantile(self.per_path_xi, q))


def empirical_envelope(latent_paths, spec):
    """Per-path ``xi = max_k |x(t_k)| / lambda(t_k)`` and their maximum.

    ``latent_paths`` is any iterable of ``(t, x)`` pairs (a LatentBatch works).
    """
    xis = []
    for t, x in latent_paths:
        lam = spec.lam(np.asarray(t, dtype=float))
        if not np.all(lam > 0) or not np.all(np.isfinite(lam)):
            raise NumericDomainError("lambda underflowed to zero or overflowed on the path knots")
        xis.append(float(np.max(np.abs(np.asarray(x, dtype=float)) / lam)))
    xis = np.asarray(xis)
    if xis.size == 0:
        raise InvalidArgumentError("no paths supplied")
    if not np.all(np.isfinite(xis)):
        raise NumericDomainError("non-finite envelope ratio (blown-up path?)")
    return EnvelopeReport(float(np.max(xis)), xis, spec.lam)
