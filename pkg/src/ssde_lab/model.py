"""State space SDE model definitions.

The observed process follows ``dY = phi_Y b_Y(Y, X, t) dt + sigma_Y(Y, X, t) dW_Y``
and the latent process ``dX = phi_X b_X(X, t) dt + sigma_X(X, t) dW_X``, where the
drift multipliers are known functions of the parameter vector:
``phi_Y = psi_Y(theta)`` and ``phi_X = psi_X(theta)``.

Coefficient functions must accept numpy arrays (broadcasting elementwise) for
the state arguments and a scalar or array time argument.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .exceptions import InvalidArgumentError, NumericDomainError, PreconditionViolation
from .validation import check_count, check_param_vector, check_positive

FD_REL_STEP = 1e-5


def _fd_step(theta):
    return FD_REL_STEP * np.maximum(1.0, np.abs(theta))


def fd_gradient(fn, theta):
    """Central-difference gradient of a scalar function."""
    theta = np.asarray(theta, dtype=float)
    h = _fd_step(theta)
    out = np.empty(theta.size)
    for k in range(theta.size):
        e = np.zeros(theta.size)
        e[k] = h[k]
        out[k] = (fn(theta + e) - fn(theta - e)) / (2.0 * h[k])
    return out


def fd_jacobian(fn, theta):
    """Central-difference Jacobian of a vector function; rows index outputs."""
    theta = np.asarray(theta, dtype=float)
    h = _fd_step(theta)
    cols = []
    for k in range(theta.size):
        e = np.zeros(theta.size)
        e[k] = h[k]
        cols.append((np.asarray(fn(theta + e), float) - np.asarray(fn(theta - e), float))
                    / (2.0 * h[k]))
    return np.stack(cols, axis=-1)


@dataclass(frozen=True)
class MapValues:
    phi_y: float
    phi_x: float
    grad_y: np.ndarray
    grad_x: np.ndarray
    hess_y: np.ndarray
    hess_x: np.ndarray


@dataclass(frozen=True)
class ParamMaps:
    """Known maps from the parameter vector to the two drift multipliers.

    Derivatives not supplied are produced by central differences with step
    ``1e-5 * max(1, |theta_k|)``; Hessians are then differences of the gradient.
    """

    psi_y: Callable
    psi_x: Callable
    dim: int
    grad_psi_y: Optional[Callable] = None
    grad_psi_x: Optional[Callable] = None
    hess_psi_y: Optional[Callable] = None
    hess_psi_x: Optional[Callable] = None
    derivative_mode: str = "closed-form"

    def __post_init__(self):
        check_count(self.dim, "dim")
        if self.derivative_mode not in ("closed-form", "finite-difference"):
            raise InvalidArgumentError(f"unknown derivative_mode {self.derivative_mode!r}")

    def _closed(self, attr):
        if self.derivative_mode == "finite-difference":
            return None
        return getattr(self, attr)

    def phi_y(self, theta):
        return _finite_map(self.psi_y, theta, "psi_y")

    def phi_x(self, theta):
        return _finite_map(self.psi_x, theta, "psi_x")

    def grad_y(self, theta):
        fn = self._closed("grad_psi_y")
        g = fd_gradient(self.phi_y, theta) if fn is None else fn(theta)
        return _finite_array(g, (self.dim,), "grad_psi_y")

    def grad_x(self, theta):
        fn = self._closed("grad_psi_x")
        g = fd_gradient(self.phi_x, theta) if fn is None else fn(theta)
        return _finite_array(g, (self.dim,), "grad_psi_x")

    def hess_y(self, theta):
        fn = self._closed("hess_psi_y")
        h = fd_jacobian(self.grad_y, theta) if fn is None else fn(theta)
        return _symmetrize(_finite_array(h, (self.dim, self.dim), "hess_psi_y"))

    def hess_x(self, theta):
        fn = self._closed("hess_psi_x")
        h = fd_jacobian(self.grad_x, theta) if fn is None else fn(theta)
        return _symmetrize(_finite_array(h, (self.dim, self.dim), "hess_psi_x"))

    def evaluate(self, theta):
        theta = check_param_vector(theta, self.dim)
        return MapValues(
            phi_y=self.phi_y(theta), phi_x=self.phi_x(theta),
            grad_y=self.grad_y(theta), grad_x=self.grad_x(theta),
            hess_y=self.hess_y(theta), hess_x=self.hess_x(theta),
        )

    @classmethod
    def affine(cls, coef_y, coef_x, offset_y=0.0, offset_x=0.0):
        """Maps ``psi(theta) = offset + coef . theta`` with exact derivatives."""
        cy = np.atleast_1d(np.asarray(coef_y, dtype=float))
        cx = np.atleast_1d(np.asarray(coef_x, dtype=float))
        if cy.shape != cx.shape:
            raise InvalidArgumentError("affine coefficient vectors must share a length")
        d = cy.size
        zero = np.zeros((d, d))
        return cls(
            psi_y=lambda th: float(offset_y + cy @ np.asarray(th, float)),
            psi_x=lambda th: float(offset_x + cx @ np.asarray(th, float)),
            dim=d,
            grad_psi_y=lambda th: cy.copy(),
            grad_psi_x=lambda th: cx.copy(),
            hess_psi_y=lambda th: zero.copy(),
            hess_psi_x=lambda th: zero.copy(),
        )


def _finite_map(fn, theta, name):
    val = fn(np.asarray(theta, dtype=float))
    val = float(np.asarray(val, dtype=float).reshape(()))
    if not np.isfinite(val):
        raise NumericDomainError(f"{name} returned a non-finite value at theta={theta}")
    return val


def _finite_array(val, shape, name):
    arr = np.asarray(val, dtype=float).reshape(shape)
    if not np.all(np.isfinite(arr)):
        raise NumericDomainError(f"{name} returned non-finite entries")
    return arr


def _symmetrize(mat):
    return 0.5 * (mat + mat.T)


def eval_maps(maps, theta):
    """Evaluate both maps with their gradients and Hessians at ``theta``."""
    return maps.evaluate(theta)


@dataclass(frozen=True)
class RatioBounds:
    """Limiting constants of the drift-to-noise ratio bounds.

    ``K_Y (1 - alpha_y1 x^2) <= b_Y^2 / sigma_Y^2 <= K_Y (1 + alpha_y2 x^2)`` and
    the analogous latent-side inequality with ``K_X``.
    """

    K_Y: float
    K_X: float
    alpha_y1: float = 0.0
    alpha_y2: float = 0.0
    alpha_x1: float = 0.0
    alpha_x2: float = 0.0

    def __post_init__(self):
        check_positive(self.K_Y, "K_Y")
        check_positive(self.K_X, "K_X")
        for name in ("alpha_y1", "alpha_y2", "alpha_x1", "alpha_x2"):
            check_positive(getattr(self, name), name, strict=False)


@dataclass(frozen=True)
class StateSpaceModel:
    b_y: Callable
    sigma_y: Callable
    b_x: Callable
    sigma_x: Callable
    maps: ParamMaps
    ratio_bounds: Optional[RatioBounds] = None
    y0: float = 0.0
    x0: float = 1.0
    name: str = "custom"

    @property
    def dim(self):
        return self.maps.dim

    def require_bounds(self):
        if self.ratio_bounds is None:
            raise PreconditionViolation(f"model {self.name!r} carries no ratio_bounds")
        return self.ratio_bounds


@dataclass(frozen=True)
class ObservationWindow:
    T: float
    a_T: float
    b_T: float

    @property
    def span(self):
        return self.b_T - self.a_T


def make_window(T):
    """Observation window ``[ln(1 + T), ln(1 + T) + T]``."""
    if not isinstance(T, (int, float, np.floating, np.integer)) or not np.isfinite(T) or T <= 0:
        raise InvalidArgumentError(f"T must be a positive real, got {T!r}")
    T = float(T)
    a_T = float(np.log1p(T))
    b_T = a_T + T
    # rounding in the sum may leave the span an ulp short of T
    while b_T - a_T < T:
        b_T = float(np.nextafter(b_T, np.inf))
    return ObservationWindow(T=T, a_T=a_T, b_T=b_T)


@dataclass
class GrowthReport:
    n_samples: int
    growth_y: dict
    growth_x: dict
    ratio_y_ok: bool
    ratio_x_ok: bool
    violations: list = field(default_factory=list)

    @property
    def ok(self):
        return self.ratio_y_ok and self.ratio_x_ok


def ratio_bound_violations(model, y, x, t, rtol=1e-9):
    """Boolean masks ``(lower_y, upper_y, lower_x, upper_x)`` of violated ratio bounds.

    Latent nodes where ``sigma_X`` vanishes are never flagged; the ratio is
    undefined there.
    """
    rb = model.require_bounds()
    y, x, t = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (y, x, t)))
    ry = _ratio(model.b_y(y, x, t), model.sigma_y(y, x, t), y.shape)
    x2 = x * x
    lo_y = ry < rb.K_Y * (1.0 - rb.alpha_y1 * x2) - rtol * np.abs(rb.K_Y)
    hi_y = ry > rb.K_Y * (1.0 + rb.alpha_y2 * x2) * (1.0 + rtol)
    sx = np.broadcast_to(np.asarray(model.sigma_x(x, t), dtype=float), x.shape)
    defined = sx != 0
    with np.errstate(divide="ignore", invalid="ignore"):
        rx = _ratio(model.b_x(x, t), sx, x.shape)
    lo_x = defined & (rx < rb.K_X * (1.0 - rb.alpha_x1 * x2) - rtol * rb.K_X)
    hi_x = defined & (rx > rb.K_X * (1.0 + rb.alpha_x2 * x2) * (1.0 + rtol))
    return lo_y, hi_y, lo_x, hi_x


def _ratio(b, s, shape):
    b = np.broadcast_to(np.asarray(b, dtype=float), shape)
    s = np.broadcast_to(np.asarray(s, dtype=float), shape)
    return (b * b) / (s * s)


def check_growth_bounds(model, sample_box, n_samples, seed):
    """Sample ``(y, x, t)`` uniformly in ``sample_box`` and test the growth and ratio bounds.

    Parameters
    ----------
    model : StateSpaceModel
        Must carry ``ratio_bounds``.
    sample_box : dict
        ``{"y": (lo, hi), "x": (lo, hi), "t": (lo, hi)}``.
    n_samples : int
    seed : int

    Returns
    -------
    GrowthReport
        Growth witnesses are the maxima of ``b^2 / (1 + z^2)`` and
        ``sigma^2 / (1 + z^2)`` over the sample; every violating point of the
        ratio bounds is listed.
    """
    model.require_bounds()
    n_samples = check_count(n_samples, "n_samples")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    pts = {}
    for key in ("y", "x", "t"):
        lo, hi = sample_box[key]
        pts[key] = rng.uniform(lo, hi, size=n_samples)
    y, x, t = pts["y"], pts["x"], pts["t"]
    shape = y.shape
    by = np.broadcast_to(np.asarray(model.b_y(y, x, t), float), shape)
    sy = np.broadcast_to(np.asarray(model.sigma_y(y, x, t), float), shape)
    bx = np.broadcast_to(np.asarray(model.b_x(x, t), float), shape)
    sx = np.broadcast_to(np.asarray(model.sigma_x(x, t), float), shape)
    growth_y = {"b_sq": float(np.max(by ** 2 / (1 + y ** 2))),
                "sigma_sq": float(np.max(sy ** 2 / (1 + y ** 2)))}
    growth_x = {"b_sq": float(np.max(bx ** 2 / (1 + x ** 2))),
                "sigma_sq": float(np.max(sx ** 2 / (1 + x ** 2)))}
    masks = ratio_bound_violations(model, y, x, t)
    kinds = ("y_lower", "y_upper", "x_lower", "x_upper")
    violations = []
    for kind, mask in zip(kinds, masks):
        for i in np.flatnonzero(mask):
            violations.append({"kind": kind, "y": float(y[i]), "x": float(x[i]), "t": float(t[i])})
    return GrowthReport(
        n_samples=n_samples, growth_y=growth_y, growth_x=growth_x,
        ratio_y_ok=not (masks[0].any() or masks[1].any()),
        ratio_x_ok=not (masks[2].any() or masks[3].any()),
        violations=violations,
    )
