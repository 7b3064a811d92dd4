"""Euler-Maruyama simulation of observation/latent path pairs.

Randomness comes from the counter-based Philox generator. Every stream is keyed
by a seed derived from ``(master seed, stream id, index...)`` so that a path's
content depends only on its own key, never on batch size or ordering.
"""

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .exceptions import InvalidArgumentError, SimulationBlowup
from .model import ObservationWindow
from .validation import check_count, check_param_vector, check_positive

RNG_ID = "numpy-Philox4x64-10"
BLOWUP_LIMIT = 1e12

STREAM_Y = 0
STREAM_X = 1
STREAM_BURN_Y = 2
STREAM_BURN_X = 3
STREAM_LATENT = 4


def derive_seed(seed, *key):
    """Deterministic child seed for ``seed`` and an integer key path."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    words = ss.generate_state(2, dtype=np.uint64)
    return (int(words[0]) << 64) | int(words[1])


def _generator(seed):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))


def wiener_increments(m, dt, seed):
    """``m`` iid N(0, dt) increments keyed by ``seed``."""
    m = check_count(m, "m")
    dt = check_positive(float(dt), "dt")
    return _generator(seed).standard_normal(m) * math.sqrt(dt)


@dataclass(frozen=True)
class TimeGrid:
    start: float
    stop: float
    m: int
    window: Optional[ObservationWindow] = None

    def __post_init__(self):
        check_count(self.m, "m", minimum=2)
        if not (np.isfinite(self.start) and np.isfinite(self.stop) and self.stop > self.start):
            raise InvalidArgumentError(f"grid needs start < stop, got [{self.start}, {self.stop}]")

    @classmethod
    def for_window(cls, window, m):
        return cls(window.a_T, window.b_T, m, window)

    @property
    def dt(self):
        return (self.stop - self.start) / self.m

    @property
    def t(self):
        return self.start + np.arange(self.m + 1) * self.dt

    @property
    def span(self):
        return self.stop - self.start


@dataclass(frozen=True)
class PathPair:
    grid: TimeGrid
    y: np.ndarray
    x: np.ndarray
    dw_y: Optional[np.ndarray] = None
    dw_x: Optional[np.ndarray] = None
    seed: Optional[int] = None

    @property
    def w_y_increment(self):
        """``W_Y(b_T) - W_Y(a_T)`` when increments were stored."""
        if self.dw_y is None:
            raise InvalidArgumentError("path was simulated without stored increments")
        return float(np.sum(self.dw_y))


@dataclass(frozen=True)
class PathBatch:
    grid: TimeGrid
    y: np.ndarray
    x: np.ndarray
    dw_y: np.ndarray
    dw_x: np.ndarray
    seeds: tuple
    fail_step: np.ndarray

    @property
    def failed(self):
        return self.fail_step >= 0

    def __len__(self):
        return self.y.shape[0]

    def pair(self, i):
        if self.fail_step[i] >= 0:
            raise SimulationBlowup(f"simulation blew up at step {self.fail_step[i]}",
                                   step=int(self.fail_step[i]))
        return PathPair(self.grid, self.y[i], self.x[i], self.dw_y[i], self.dw_x[i], self.seeds[i])


@dataclass(frozen=True)
class LatentBatch:
    grid: TimeGrid
    x: np.ndarray
    seeds: tuple
    failed: np.ndarray
    null_drift: bool

    def __len__(self):
        return self.x.shape[0]

    def __iter__(self):
        t = self.grid.t
        for row in self.x:
            yield t, row


def _as_rows(val, n):
    return np.broadcast_to(np.asarray(val, dtype=float), (n,))


def _euler(model, phi_y, phi_x, t, y_init, x_init, dw_y, dw_x, null_drift=False):
    """Vectorised Euler-Maruyama over rows; returns ``(y, x, fail_step)``.

    ``fail_step[i]`` is -1 for healthy rows, else the first step index whose
    state left the blow-up envelope; failed rows are NaN from there on.
    """
    n, m = dw_x.shape
    dt = np.diff(t)
    y = np.empty((n, m + 1))
    x = np.empty((n, m + 1))
    y[:, 0] = np.nan if y_init is None else y_init
    x[:, 0] = x_init
    fail_step = np.full(n, -1)
    track_y = dw_y is not None
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(m):
            tk = t[k]
            xk = x[:, k]
            x_next = xk + _as_rows(model.sigma_x(xk, tk), n) * dw_x[:, k]
            if not null_drift and phi_x != 0.0:
                x_next = x_next + phi_x * _as_rows(model.b_x(xk, tk), n) * dt[k]
            if track_y:
                yk = y[:, k]
                y[:, k + 1] = (yk + phi_y * _as_rows(model.b_y(yk, xk, tk), n) * dt[k]
                               + _as_rows(model.sigma_y(yk, xk, tk), n) * dw_y[:, k])
                bad = ~(np.abs(y[:, k + 1]) <= BLOWUP_LIMIT)
            else:
                bad = np.zeros(n, dtype=bool)
            x[:, k + 1] = x_next
            bad |= ~(np.abs(x_next) <= BLOWUP_LIMIT)
            if bad.any():
                new = bad & (fail_step < 0)
                fail_step[new] = k + 1
                y[bad, k + 1] = np.nan
                x[bad, k + 1] = np.nan
    return y, x, fail_step


def _burn_in_state(model, phi_y, phi_x, grid, seeds, latent_only, null_drift):
    n_b = max(1, math.ceil(grid.start / grid.dt))
    t_b = np.linspace(0.0, grid.start, n_b + 1)
    db = grid.start / n_b
    dw_x = np.stack([wiener_increments(n_b, db, derive_seed(s, STREAM_BURN_X)) for s in seeds])
    dw_y = None
    if not latent_only:
        dw_y = np.stack([wiener_increments(n_b, db, derive_seed(s, STREAM_BURN_Y)) for s in seeds])
    n = len(seeds)
    y, x, fail = _euler(model, phi_y, phi_x, t_b, np.full(n, model.y0), np.full(n, model.x0),
                        dw_y, dw_x, null_drift)
    return y[:, -1], x[:, -1], fail


def simulate_batch(model, theta, grid, seeds, burn_in=False):
    """Simulate one path pair per seed; blown-up rows are flagged, not raised."""
    theta = check_param_vector(theta, model.dim)
    phi_y = model.maps.phi_y(theta)
    phi_x = model.maps.phi_x(theta)
    seeds = tuple(int(s) for s in seeds)
    if not seeds:
        raise InvalidArgumentError("need at least one seed")
    dt = grid.dt
    dw_y = np.stack([wiener_increments(grid.m, dt, derive_seed(s, STREAM_Y)) for s in seeds])
    dw_x = np.stack([wiener_increments(grid.m, dt, derive_seed(s, STREAM_X)) for s in seeds])
    n = len(seeds)
    y_init = np.full(n, float(model.y0))
    x_init = np.full(n, float(model.x0))
    if burn_in and grid.start > 0:
        y_init, x_init, burn_fail = _burn_in_state(model, phi_y, phi_x, grid, seeds, False, False)
    else:
        burn_fail = np.full(n, -1)
    y, x, fail = _euler(model, phi_y, phi_x, grid.t, y_init, x_init, dw_y, dw_x)
    # a burn-in failure is reported as step 0 of the observation window
    fail = np.where(burn_fail >= 0, 0, fail)
    return PathBatch(grid, y, x, dw_y, dw_x, seeds, fail)


def simulate_pair(model, theta, grid, seed, burn_in=False):
    """Simulate a single observation/latent path pair.

    With ``burn_in`` the recursion starts at time 0 from ``(y0, x0)`` and the
    knots before ``grid.start`` are discarded.

    Raises
    ------
    SimulationBlowup
        If the state leaves ``|z| <= 1e12`` or becomes non-finite.
    """
    return simulate_batch(model, theta, grid, [seed], burn_in=burn_in).pair(0)


def iter_latent_chunks(model, theta, grid, n_paths, seed, null_drift=True, chunk=256,
                       burn_in=False):
    """Yield :class:`LatentBatch` chunks of a latent-only batch, in path order."""
    n_paths = check_count(n_paths, "n_paths")
    theta = check_param_vector(theta, model.dim)
    phi_x = 0.0 if null_drift else model.maps.phi_x(theta)
    dt = grid.dt
    for lo in range(0, n_paths, chunk):
        idx = range(lo, min(lo + chunk, n_paths))
        seeds = tuple(derive_seed(seed, STREAM_LATENT, i) for i in idx)
        dw_x = np.stack([wiener_increments(grid.m, dt, derive_seed(s, STREAM_X)) for s in seeds])
        x_init = np.full(len(seeds), float(model.x0))
        burn_fail = np.full(len(seeds), -1)
        if burn_in and grid.start > 0:
            _, x_init, burn_fail = _burn_in_state(model, 0.0, phi_x, grid, seeds, True, null_drift)
        _, x, fail = _euler(model, 0.0, phi_x, grid.t, None, x_init, None, dw_x, null_drift)
        yield LatentBatch(grid, x, seeds, (fail >= 0) | (burn_fail >= 0), null_drift)


def simulate_latent_batch(model, theta, grid, n_paths, seed, null_drift=True, burn_in=False):
    """Independent latent paths; ``null_drift`` samples the dominating law ``dX = sigma_X dW``."""
    chunks = list(iter_latent_chunks(model, theta, grid, n_paths, seed, null_drift,
                                     burn_in=burn_in))
    return LatentBatch(
        grid,
        np.concatenate([c.x for c in chunks]),
        tuple(s for c in chunks for s in c.seeds),
        np.concatenate([c.failed for c in chunks]),
        null_drift,
    )


def write_path_csv(path, fh):
    """Write ``t,y,x`` rows with 17 significant digits."""
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["t", "y", "x"])
    for t, y, x in zip(path.grid.t, path.y, path.x):
        writer.writerow([f"{t:.17g}", f"{y:.17g}", f"{x:.17g}"])
