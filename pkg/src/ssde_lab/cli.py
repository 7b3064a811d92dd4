"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 numeric failure. Machine-readable
output goes to files under ``--out``; standard output carries short summaries.
"""

import argparse
import csv
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .bayes import (
    default_proposal_scale,
    grid_normality_gap,
    posterior_normality_diag,
    set_decay_rate,
)
from .estimators import BayesPosterior
from .exceptions import ConfigError, InvalidArgumentError, NumericDomainError, SSDEError
from .harness import ExperimentConfig, _jsonable, run_consistency, run_normality, run_posterior
from .likelihood import j_rate, suff_stats_discrete
from .mle import fit_mle, fit_mle_mc
from .model import ObservationWindow, make_window
from .panel import panel_suff_stats, pooled_fit_mle
from .presets import get_preset, list_presets
from .simulate import RNG_ID, PathPair, TimeGrid, derive_seed, simulate_pair, write_path_csv
from .stability import check_h8, eta_integrable, quadratic_spec

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment configuration")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--mode", choices=("approx", "mc"),
                        help="likelihood route (overrides the config estimator)")
    common.add_argument("--threads", type=int, help="worker pool cap")
    common.add_argument("--preset", help="preset name when no config is given")

    parser = _Parser(prog="ssde-lab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__} ({RNG_ID})")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("simulate", parents=[common], help="simulate one path pair (path.csv)")
    p = sub.add_parser("stats", parents=[common], help="sufficient statistics (stats.json)")
    p.add_argument("--path", help="input path CSV (t,y,x); simulated when omitted")
    p = sub.add_parser("fit-mle", parents=[common], help="maximum-likelihood fit (fit.json)")
    p.add_argument("--path", help="input path CSV (t,y,x); simulated when omitted")
    p = sub.add_parser("fit-bayes", parents=[common],
                       help="posterior chain and diagnostics (chain.csv, posterior.json)")
    p.add_argument("--path", help="input path CSV (t,y,x); simulated when omitted")
    p.add_argument("--draws", type=int, default=5000)
    sub.add_parser("panel-fit", parents=[common], help="pooled panel fit (panel.json)")
    p = sub.add_parser("stability-check", parents=[common],
                       help="Lyapunov grid check for V = exp(rate t) x^2 (stability.json)")
    p.add_argument("--rate", type=float, default=0.0)
    p.add_argument("--t-max", type=float, default=100.0)
    p.add_argument("--n-grid", type=int, default=201)
    p = sub.add_parser("verify", parents=[common], help="Monte-Carlo experiments (report.json)")
    p.add_argument("experiment", choices=("consistency", "normality", "posterior"))
    p = sub.add_parser("presets", help="preset registry")
    p.add_argument("action", choices=("list",))
    return parser


def _config(args):
    if args.config:
        cfg = ExperimentConfig.load(args.config)
    else:
        name = args.preset or "unit-ratio"
        preset = get_preset(name)
        cfg = ExperimentConfig(preset=name, theta0=list(preset.theta0), T_list=[100.0])
        cfg.validate()
    if args.preset and args.config and args.preset != cfg.preset:
        raise ConfigError("--preset conflicts with the config's preset")
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("seed must be non-negative")
        cfg.seed = args.seed
    if args.mode is not None:
        cfg.estimator = args.mode
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("threads must be >= 1")
        cfg.threads = args.threads
    cfg.output_dir = args.out
    return cfg


def _write_json(out_dir, name, obj):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, name), "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_path_csv(filename):
    """Read a ``t,y,x`` CSV on a uniform grid back into a :class:`PathPair`."""
    try:
        with open(filename, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read path {filename}: {exc}") from None
    if not rows or rows[0] != ["t", "y", "x"]:
        raise ConfigError(f"{filename}: expected header t,y,x")
    try:
        data = np.array(rows[1:], dtype=float)
    except ValueError:
        raise ConfigError(f"{filename}: non-numeric entries") from None
    if data.ndim != 2 or data.shape[0] < 3:
        raise ConfigError(f"{filename}: need at least three knots")
    t = data[:, 0]
    m = t.size - 1
    grid = TimeGrid(float(t[0]), float(t[-1]), m,
                    ObservationWindow(T=float(t[-1] - t[0]), a_T=float(t[0]), b_T=float(t[-1])))
    if not np.allclose(t, grid.t, rtol=1e-9, atol=1e-12):
        raise ConfigError(f"{filename}: knots are not uniformly spaced")
    return PathPair(grid, data[:, 1], data[:, 2])


def _observed(args, cfg, model):
    if getattr(args, "path", None):
        return read_path_csv(args.path)
    grid = TimeGrid.for_window(make_window(cfg.T_list[0]), cfg.m)
    return simulate_pair(model, cfg.theta0, grid, cfg.seed, burn_in=cfg.burn_in)


def cmd_simulate(args, cfg):
    model = get_preset(cfg.preset).build(**cfg.preset_params)
    path = _observed(args, cfg, model)
    os.makedirs(cfg.output_dir, exist_ok=True)
    with open(os.path.join(cfg.output_dir, "path.csv"), "w") as fh:
        write_path_csv(path, fh)
    print(f"simulated {path.grid.m} steps on [{path.grid.start:.6g}, {path.grid.stop:.6g}]")


def cmd_stats(args, cfg):
    model = get_preset(cfg.preset).build(**cfg.preset_params)
    stats = suff_stats_discrete(_observed(args, cfg, model), model)
    _write_json(cfg.output_dir, "stats.json", stats.to_dict())
    print(f"u_yx={stats.u_y_given_x:.6g} v_yx={stats.v_y_given_x:.6g}")


def _fit(path, model, cfg):
    theta = np.asarray(cfg.theta0)
    if cfg.estimator == "mc":
        return fit_mle_mc(path, model, theta, n_latent=cfg.n_latent, seed=derive_seed(cfg.seed, 99))
    return fit_mle(suff_stats_discrete(path, model), theta, model=model)


def cmd_fit_mle(args, cfg):
    model = get_preset(cfg.preset).build(**cfg.preset_params)
    fit = _fit(_observed(args, cfg, model), model, cfg)
    _write_json(cfg.output_dir, "fit.json", fit.to_dict())
    print(f"theta_hat={fit.theta_hat.tolist()} converged={fit.converged}")
    if not fit.converged:
        raise NumericDomainError("optimiser did not converge")


def cmd_fit_bayes(args, cfg):
    model = get_preset(cfg.preset).build(**cfg.preset_params)
    path = _observed(args, cfg, model)
    est = BayesPosterior(preset=cfg.preset, preset_params=cfg.preset_params, mode=cfg.estimator,
                         theta_init=cfg.theta0, prior_halfwidth=cfg.prior_box_halfwidth,
                         grid_points=cfg.grid_points, n_latent=cfg.n_latent,
                         seed=derive_seed(cfg.seed, 99)).fit(path)
    chain = est.sample(args.draws, seed=derive_seed(cfg.seed, 98),
                       proposal_scale=default_proposal_scale(est.fit_.sigma_inv))
    os.makedirs(cfg.output_dir, exist_ok=True)
    with open(os.path.join(cfg.output_dir, "chain.csv"), "w") as fh:
        chain.write_csv(fh)
    out = {"fit": est.fit_.to_dict(), "acceptance_rate": chain.acceptance_rate,
           "n_draws": args.draws}
    try:
        diag = posterior_normality_diag(chain, est.fit_)
        out["ks_distance"], out["sup_density_gap"] = diag.ks_distance, diag.sup_density_gap
    except SSDEError as exc:
        out["diagnostic_error"] = str(exc)
    if est.posterior_ is not None:
        rb = model.require_bounds()
        theta0 = np.asarray(cfg.theta0)
        pts = est.posterior_.points
        out["grid_sup_density_gap"] = grid_normality_gap(est.posterior_, est.fit_)
        decay = []
        for r in cfg.decay_radii:
            A = lambda th, r=r: float(np.linalg.norm(th - theta0)) >= r
            mask = np.array([A(p) for p in pts])
            J = j_rate(theta0, pts, model.maps, rb.K_Y, rb.K_X, theta0, subset=mask).J_A
            dr = set_decay_rate(A, est.posterior_, path.grid.window, J, est.prior_)
            decay.append({"radius": r, "empirical_rate": dr.empirical_rate, "target": dr.target})
        out["decay"] = decay
    _write_json(cfg.output_dir, "posterior.json", out)
    print(f"acceptance_rate={chain.acceptance_rate:.3f}")


def cmd_panel_fit(args, cfg):
    n = cfg.n_list[0]
    preset = get_preset(cfg.preset)
    panel = preset.build_panel(n, **cfg.preset_params)
    grid = TimeGrid.for_window(make_window(cfg.T_list[0]), cfg.m)
    paths = [simulate_pair(panel.individual(i), cfg.theta0, grid, derive_seed(cfg.seed, i),
                           burn_in=cfg.burn_in) for i in range(n)]
    panel_suff_stats(paths, panel.base)
    stats = [suff_stats_discrete(p, panel.individual(i)) for i, p in enumerate(paths)]
    fit = pooled_fit_mle(stats, panel, cfg.theta0)
    _write_json(cfg.output_dir, "panel.json",
                {"n": n, "individuals": [s.to_dict() for s in stats], "pooled": fit.to_dict()})
    print(f"n={n} theta_hat={fit.theta_hat.tolist()}")


def cmd_stability(args, cfg):
    model = get_preset(cfg.preset).build(**cfg.preset_params)
    spec = quadratic_spec(args.rate)
    rep = check_h8(spec, model, cfg.theta0, t_range=(0.0, args.t_max), n_grid=args.n_grid)
    eta = eta_integrable(spec)
    out = rep.to_dict()
    out["eta_integral"] = {"total": eta.total, "tail": eta.tail, "converged": eta.converged}
    _write_json(cfg.output_dir, "stability.json", out)
    print(f"lower_bound_ok={rep.lower_bound_ok} generator_ok={rep.generator_ok} "
          f"violations={len(rep.violations)}")


def cmd_verify(args, cfg):
    run = {"consistency": run_consistency, "normality": run_normality,
           "posterior": run_posterior}[args.experiment]
    report = run(cfg)
    report.write(cfg.output_dir)
    for c in report.cells:
        keys = ("rmse", "ks_pvalue", "coverage_95", "sup_density_gap_max")
        parts = [f"{k}={c.summary[k]}" for k in keys if k in c.summary]
        print(f"T={c.T:g} n={c.n} " + " ".join(parts))


def cmd_presets(args):
    for p in list_presets():
        flag = " [demo_only]" if p.demo_only else ""
        print(f"{p.name}{flag}: {p.description}")


COMMANDS = {
    "simulate": cmd_simulate, "stats": cmd_stats, "fit-mle": cmd_fit_mle,
    "fit-bayes": cmd_fit_bayes, "panel-fit": cmd_panel_fit,
    "stability-check": cmd_stability, "verify": cmd_verify,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_CONFIG
    try:
        if args.command == "presets":
            cmd_presets(args)
            return EXIT_OK
        cfg = _config(args)
        COMMANDS[args.command](args, cfg)
    except (ConfigError, InvalidArgumentError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SSDEError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
