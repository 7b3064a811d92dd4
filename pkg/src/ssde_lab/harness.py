"""Config-driven Monte-Carlo experiments.

Each experiment sweeps cells ``(T, n)`` and replicates simulate -> fit inside
every cell. Replication seeds depend only on ``(master seed, cell, replication)``
so that results do not depend on the worker count or on execution order.
"""

import csv
import dataclasses
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import norm

from . import __version__
from .bayes import (
    LikelihoodContext,
    Prior,
    grid_normality_gap,
    grid_posterior,
    log_posterior_unnorm,
    set_decay_rate,
)
from .exceptions import ConfigError, InsufficientSampleError, SSDEError
from .likelihood import j_rate, suff_stats_discrete
from .mle import ApproxObjective, fisher_info, fit_mle, fit_mle_mc
from .model import make_window
from .panel import pooled_fit_mle
from .presets import get_preset
from .simulate import RNG_ID, TimeGrid, derive_seed, simulate_batch

KS_TERMS = 100
MIN_KS_SAMPLES = 8
DEGRADED_FRACTION = 0.05
WALD_Z = float(norm.ppf(0.975))
BATCH = 100


@dataclass
class ExperimentConfig:
    preset: str
    theta0: list
    T_list: list
    n_list: list = field(default_factory=lambda: [1])
    m: int = 1000
    n_replications: int = 100
    n_latent: int = 256
    estimator: str = "approx"
    seed: int = 0
    output_dir: str = "out"
    preset_params: dict = field(default_factory=dict)
    threads: Optional[int] = None
    burn_in: bool = False
    null_mode: bool = False
    decay_radii: list = field(default_factory=lambda: [0.0, 1.0])
    prior_box_halfwidth: float = 2.0
    grid_points: int = 201

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        missing = [k for k in ("preset", "theta0", "T_list") if k not in data]
        if missing:
            raise ConfigError(f"missing config keys: {', '.join(missing)}")
        cfg = cls(**data)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(data)

    def to_dict(self):
        return dataclasses.asdict(self)

    def validate(self):
        get_preset(self.preset)
        try:
            self.theta0 = [float(v) for v in np.atleast_1d(self.theta0)]
            self.T_list = [float(v) for v in np.atleast_1d(self.T_list)]
        except (TypeError, ValueError):
            raise ConfigError("theta0 and T_list must be numbers") from None
        if not self.T_list or any(not (t > 0 and math.isfinite(t)) for t in self.T_list):
            raise ConfigError("T_list must hold positive reals")
        if not self.n_list or any(not _is_int(n) or n < 1 for n in self.n_list):
            raise ConfigError("n_list must hold integers >= 1")
        for name in ("m", "n_replications", "n_latent", "grid_points"):
            val = getattr(self, name)
            if not _is_int(val) or val < 1:
                raise ConfigError(f"{name} must be an integer >= 1")
        if self.m < 2:
            raise ConfigError("m must be at least 2")
        if not _is_int(self.seed) or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        if self.estimator not in ("approx", "mc"):
            raise ConfigError(f"estimator must be 'approx' or 'mc', got {self.estimator!r}")
        if self.threads is not None and (not _is_int(self.threads) or self.threads < 1):
            raise ConfigError("threads must be an integer >= 1")
        if not isinstance(self.preset_params, dict):
            raise ConfigError("preset_params must be an object")
        if not self.prior_box_halfwidth > 0:
            raise ConfigError("prior_box_halfwidth must be positive")


def _is_int(v):
    return isinstance(v, (int, np.integer)) and not isinstance(v, bool)


# ---------------------------------------------------------------------------
# Kolmogorov-Smirnov


@dataclass(frozen=True)
class KSResult:
    statistic: float
    p_value: float


def kolmogorov_sf(lam, terms=KS_TERMS):
    """``P(K > lam) = 2 sum_{j>=1} (-1)^(j-1) exp(-2 j^2 lam^2)``, clamped to ``[0, 1]``."""
    if lam < 0.2:
        return 1.0
    j = np.arange(1, terms + 1)
    s = 2.0 * np.sum((-1.0) ** (j - 1) * np.exp(-2.0 * j * j * lam * lam))
    return float(min(1.0, max(0.0, s)))


def ks_test(samples, cdf):
    """One-sample Kolmogorov-Smirnov test with the asymptotic p-value.

    Raises
    ------
    InsufficientSampleError
        With fewer than 8 samples.
    """
    x = np.sort(np.asarray(samples, dtype=float).reshape(-1))
    n = x.size
    if n < MIN_KS_SAMPLES:
        raise InsufficientSampleError(f"KS test needs at least {MIN_KS_SAMPLES} samples, got {n}")
    f = np.asarray(cdf(x), dtype=float)
    i = np.arange(1, n + 1)
    d = float(max(np.max(i / n - f), np.max(f - (i - 1) / n)))
    return KSResult(d, kolmogorov_sf(math.sqrt(n) * d))


# ---------------------------------------------------------------------------
# replications


@dataclass
class Replication:
    theta_hat: np.ndarray
    converged: bool
    clt: np.ndarray
    sigma_inv: Optional[np.ndarray] = None
    error: Optional[str] = None

    @property
    def failed(self):
        return self.error is not None


@dataclass
class Cell:
    T: float
    n: int
    reps: list
    summary: dict

    @property
    def name(self):
        return f"T{_fmt(self.T)}_n{self.n}"


def _fmt(v):
    return f"{v:g}"


@dataclass
class ExperimentReport:
    kind: str
    cells: list
    config: ExperimentConfig
    version: str = __version__
    runtime_seconds: float = 0.0

    def to_dict(self):
        return {
            "kind": self.kind,
            "version": self.version,
            "rng": RNG_ID,
            "config": self.config.to_dict(),
            "cells": [dict(T=c.T, n=c.n, **c.summary) for c in self.cells],
        }

    def cell(self, T, n=1):
        for c in self.cells:
            if c.T == T and c.n == n:
                return c
        raise KeyError((T, n))

    def write(self, out_dir):
        """``report.json``, ``cells/T<T>_n<n>.csv`` and ``runtime.json`` under ``out_dir``.

        The runtime lives in its own file so that ``report.json`` is a pure
        function of the configuration.
        """
        os.makedirs(os.path.join(out_dir, "cells"), exist_ok=True)
        with open(os.path.join(out_dir, "report.json"), "w") as fh:
            json.dump(_jsonable(self.to_dict()), fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(os.path.join(out_dir, "runtime.json"), "w") as fh:
            json.dump({"runtime_seconds": self.runtime_seconds}, fh)
            fh.write("\n")
        for c in self.cells:
            if not c.reps:
                continue
            d = self.config_dim
            with open(os.path.join(out_dir, "cells", f"{c.name}.csv"), "w") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(["rep"] + [f"theta_hat_{k + 1}" for k in range(d)] + ["converged"]
                                + [f"clt_{k + 1}" for k in range(d)])
                for i, r in enumerate(c.reps):
                    writer.writerow([i] + [f"{v:.17g}" for v in r.theta_hat]
                                    + [int(r.converged)] + [f"{v:.17g}" for v in r.clt])

    @property
    def config_dim(self):
        return len(self.config.theta0)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _failed_rep(d, msg):
    nan = np.full(d, np.nan)
    return Replication(nan, False, nan.copy(), None, msg)


def _fit_single(path, model, theta0, cfg, seed):
    if cfg.estimator == "mc":
        return fit_mle_mc(path, model, theta0, n_latent=cfg.n_latent,
                          seed=derive_seed(seed, 99), theta0=theta0)
    stats = suff_stats_discrete(path, model)
    return fit_mle(stats, theta0, model=model, theta_ref=theta0, theta0=theta0)


def _to_rep(fit, d):
    clt = fit.clt_stat if fit.clt_stat is not None else np.full(d, np.nan)
    return Replication(fit.theta_hat, fit.converged, clt, fit.sigma_inv)


def _map_chunks(fn, n_items, threads):
    chunks = [range(lo, min(lo + BATCH, n_items)) for lo in range(0, n_items, BATCH)]
    workers = threads or os.cpu_count() or 1
    if workers == 1 or len(chunks) == 1:
        results = [fn(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(fn, chunks))
    return [r for part in results for r in part]


def _replicate_single(cfg, preset, cell_idx, T):
    model = preset.build(**cfg.preset_params)
    theta0 = np.asarray(cfg.theta0)
    d = theta0.size
    grid = TimeGrid.for_window(make_window(T), cfg.m)

    def run(idx):
        seeds = [derive_seed(cfg.seed, cell_idx, r) for r in idx]
        batch = simulate_batch(model, theta0, grid, seeds, burn_in=cfg.burn_in)
        out = []
        for j, r in enumerate(idx):
            try:
                out.append(_to_rep(_fit_single(batch.pair(j), model, theta0, cfg, seeds[j]), d))
            except (SSDEError, np.linalg.LinAlgError) as exc:
                out.append(_failed_rep(d, f"{type(exc).__name__}: {exc}"))
        return out

    return _map_chunks(run, cfg.n_replications, cfg.threads)


def _replicate_panel(cfg, preset, cell_idx, T, n):
    if cfg.estimator != "approx":
        raise ConfigError("panel cells (n > 1) support only the approx estimator")
    panel = preset.build_panel(n, **cfg.preset_params)
    theta0 = np.asarray(cfg.theta0)
    d = theta0.size
    grid = TimeGrid.for_window(make_window(T), cfg.m)

    def run(idx):
        stats = [[None] * n for _ in idx]
        failed = [None] * len(idx)
        for i in range(n):
            model = panel.individual(i)
            seeds = [derive_seed(cfg.seed, cell_idx, r, i) for r in idx]
            batch = simulate_batch(model, theta0, grid, seeds, burn_in=cfg.burn_in)
            for j in range(len(idx)):
                if failed[j] is not None:
                    continue
                try:
                    stats[j][i] = suff_stats_discrete(batch.pair(j), model)
                except SSDEError as exc:
                    failed[j] = f"individual {i}: {type(exc).__name__}: {exc}"
        out = []
        for j in range(len(idx)):
            if failed[j] is not None:
                out.append(_failed_rep(d, failed[j]))
                continue
            try:
                fit = pooled_fit_mle(stats[j], panel, theta0, theta_ref=theta0, theta0=theta0)
                out.append(_to_rep(fit, d))
            except (SSDEError, np.linalg.LinAlgError) as exc:
                out.append(_failed_rep(d, f"{type(exc).__name__}: {exc}"))
        return out

    return _map_chunks(run, cfg.n_replications, cfg.threads)


def _limit_information(cfg, preset, n):
    theta0 = np.asarray(cfg.theta0)
    if n == 1:
        model = preset.build(**cfg.preset_params)
        return fisher_info(theta0, model.maps, model.require_bounds().K_Y)
    panel = preset.build_panel(n, **cfg.preset_params)
    return fisher_info(theta0, panel.limit_maps, panel.K_bar_Y)


def _null_reps(cfg, cell_idx, T, n, info):
    """Replications drawn straight from the limiting normal law (harness self-check)."""
    theta0 = np.asarray(cfg.theta0)
    cov = np.linalg.inv(info.matrix)
    chol = np.linalg.cholesky(cov)
    scale = n * make_window(T).span
    reps = []
    for r in range(cfg.n_replications):
        z = np.random.Generator(np.random.Philox(derive_seed(cfg.seed, cell_idx, r)))
        clt = chol @ z.standard_normal(theta0.size)
        reps.append(Replication(theta0 + clt / math.sqrt(scale), True, clt, info.matrix * scale))
    return reps


def _summarize(reps, theta0, info):
    ok = [r for r in reps if not r.failed]
    n_failed = len(reps) - len(ok)
    summary = {
        "n_replications": len(reps),
        "n_failed": n_failed,
        "n_converged": sum(1 for r in ok if r.converged),
        "degraded": n_failed > DEGRADED_FRACTION * len(reps),
    }
    d = theta0.size
    nan = [float("nan")] * d
    if not ok:
        summary.update(bias=nan, rmse=nan, ks_stat=nan, ks_pvalue=nan, coverage_95=nan)
        return summary
    th = np.array([r.theta_hat for r in ok])
    err = th - theta0
    summary["bias"] = err.mean(axis=0).tolist()
    summary["rmse"] = np.sqrt((err ** 2).mean(axis=0)).tolist()
    conv = [r for r in ok if r.converged]
    ks_stat, ks_p = list(nan), list(nan)
    if info.positive_definite and len(conv) >= MIN_KS_SAMPLES:
        sd = np.sqrt(np.diag(np.linalg.inv(info.matrix)))
        clt = np.array([r.clt for r in conv])
        for k in range(d):
            res = ks_test(clt[:, k] / sd[k], norm.cdf)
            ks_stat[k], ks_p[k] = res.statistic, res.p_value
    summary["ks_stat"], summary["ks_pvalue"] = ks_stat, ks_p
    cover = []
    for k in range(d):
        hits = []
        for r in conv:
            cov = np.linalg.inv(r.sigma_inv)
            half = WALD_Z * math.sqrt(max(cov[k, k], 0.0))
            hits.append(abs(r.theta_hat[k] - theta0[k]) <= half)
        cover.append(float(np.mean(hits)) if hits else float("nan"))
    summary["coverage_95"] = cover
    return summary


def _run_fits(cfg, kind):
    start = time.perf_counter()
    preset = get_preset(cfg.preset)
    theta0 = np.asarray(cfg.theta0)
    cells = []
    idx = 0
    for T in cfg.T_list:
        for n in cfg.n_list:
            info = _limit_information(cfg, preset, n)
            if cfg.null_mode:
                reps = _null_reps(cfg, idx, T, n, info)
            elif n == 1:
                reps = _replicate_single(cfg, preset, idx, T)
            else:
                reps = _replicate_panel(cfg, preset, idx, T, n)
            cells.append(Cell(T, n, reps, _summarize(reps, theta0, info)))
            idx += 1
    return ExperimentReport(kind, cells, cfg, runtime_seconds=time.perf_counter() - start)


def run_consistency(config):
    """Bias and RMSE of the estimator per ``(T, n)`` cell."""
    return _run_fits(config, "consistency")


def run_normality(config):
    """KS test of the CLT-standardised estimates and Wald coverage per cell."""
    return _run_fits(config, "normality")


def _ball_complement(theta0, radius):
    return lambda th: float(np.linalg.norm(np.asarray(th) - theta0)) >= radius


def run_posterior(config):
    """Grid-posterior normality gap and set decay rates per ``T`` (``n = 1`` only)."""
    from .likelihood import MarginalLikelihood

    cfg = config
    start = time.perf_counter()
    preset = get_preset(cfg.preset)
    model = preset.build(**cfg.preset_params)
    rb = model.require_bounds()
    theta0 = np.asarray(cfg.theta0)
    d = theta0.size
    if d > 2:
        raise ConfigError("run_posterior works on a grid and needs d <= 2")
    prior = Prior.flat_around(theta0, cfg.prior_box_halfwidth)
    cells = []
    for idx, T in enumerate(cfg.T_list):
        window = make_window(T)
        grid = TimeGrid.for_window(window, cfg.m)
        seeds = [derive_seed(cfg.seed, idx, r) for r in range(cfg.n_replications)]
        batch = simulate_batch(model, theta0, grid, seeds, burn_in=cfg.burn_in)
        reps, gaps = [], []
        rates = {r: [] for r in cfg.decay_radii}
        targets = {}
        n_failed = 0
        for j, seed in enumerate(seeds):
            try:
                path = batch.pair(j)
                stats = suff_stats_discrete(path, model)
                fit = fit_mle(stats, theta0, model=model, theta_ref=theta0, theta0=theta0)
                ctx = LikelihoodContext(model, window, theta_ref=theta0, stats=stats)
                if cfg.estimator == "mc":
                    ctx.marginal = MarginalLikelihood(path, model, cfg.n_latent,
                                                      derive_seed(seed, 99))
                post = grid_posterior(
                    lambda th: log_posterior_unnorm(th, prior, cfg.estimator, ctx), prior,
                    cfg.grid_points)
                gaps.append(grid_normality_gap(post, fit))
                pts = post.points
                for radius in cfg.decay_radii:
                    A = _ball_complement(theta0, radius)
                    if radius not in targets:
                        mask = np.array([A(p) for p in pts])
                        targets[radius] = j_rate(theta0, pts, model.maps, rb.K_Y, rb.K_X,
                                                 theta0, subset=mask).J_A
                    rates[radius].append(
                        set_decay_rate(A, post, window, targets[radius], prior).empirical_rate)
                reps.append(_to_rep(fit, d))
            except (SSDEError, np.linalg.LinAlgError) as exc:
                n_failed += 1
                reps.append(_failed_rep(d, f"{type(exc).__name__}: {exc}"))
        summary = {
            "n_replications": cfg.n_replications,
            "n_failed": n_failed,
            "degraded": n_failed > DEGRADED_FRACTION * cfg.n_replications,
            "sup_density_gap_mean": float(np.mean(gaps)) if gaps else float("nan"),
            "sup_density_gap_max": float(np.max(gaps)) if gaps else float("nan"),
            "decay": [{"radius": r,
                       "empirical_rate": float(np.mean(rates[r])) if rates[r] else float("nan"),
                       "target": 0.0 - targets.get(r, float("nan"))}
                      for r in cfg.decay_radii],
        }
        cells.append(Cell(T, 1, reps, summary))
    return ExperimentReport("posterior", cells, cfg, runtime_seconds=time.perf_counter() - start)
