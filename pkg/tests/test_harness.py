import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import kolmogorov
from scipy.stats import norm

from ssde_lab import harness
from ssde_lab.exceptions import ConfigError, InsufficientSampleError, NumericDomainError
from ssde_lab.harness import (
    ExperimentConfig,
    kolmogorov_sf,
    ks_test,
    run_consistency,
    run_normality,
    run_posterior,
)


def _cfg(**kw):
    base = dict(preset="unit-ratio", theta0=[1.0], T_list=[50.0], m=100, n_replications=20, seed=1)
    base.update(kw)
    return ExperimentConfig.from_dict(base)


# KS -----------------------------------------------------------------------


def test_ks_quantile_construction():
    n = 50
    x = norm.ppf((np.arange(1, n + 1) - 0.5) / n)
    assert ks_test(x, norm.cdf).statistic == pytest.approx(0.5 / n, abs=1e-15)


def test_ks_point_mass():
    assert ks_test(np.zeros(20), norm.cdf).statistic >= 0.5


def test_ks_uniform_null():
    u = np.random.default_rng(0).uniform(size=10_000)
    assert ks_test(u, lambda x: np.clip(x, 0, 1)).p_value > 0.001


def test_ks_too_few():
    with pytest.raises(InsufficientSampleError):
        ks_test(np.zeros(7), norm.cdf)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.2, 3.0))
def test_kolmogorov_series_matches_reference(lam):
    assert kolmogorov_sf(lam) == pytest.approx(float(kolmogorov(lam)), abs=1e-12)


def test_kolmogorov_small_lambda():
    assert kolmogorov_sf(0.0) == 1.0 and kolmogorov_sf(0.1) == 1.0


@settings(max_examples=30, deadline=None)
@given(st.integers(8, 200), st.integers(0, 2**32 - 1))
def test_ks_statistic_in_unit_interval(n, seed):
    x = np.random.default_rng(seed).normal(size=n)
    res = ks_test(x, norm.cdf)
    assert 1.0 / (2 * n) - 1e-15 <= res.statistic <= 1.0
    assert 0.0 <= res.p_value <= 1.0


# config ---------------------------------------------------------------------


@pytest.mark.parametrize("bad", [
    {"preset": "nope"},
    {"T_list": [-1.0]},
    {"T_list": []},
    {"n_list": [0]},
    {"m": 1},
    {"n_replications": 0},
    {"estimator": "exact"},
    {"seed": -3},
    {"threads": 0},
    {"bogus_key": 1},
])
def test_config_errors(bad):
    with pytest.raises(ConfigError):
        _cfg(**bad)


def test_config_missing_and_unreadable(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"preset": "unit-ratio"})
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "absent.json")
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "bad.json")


def test_config_round_trip(tmp_path):
    cfg = _cfg(T_list=[10, 20], n_list=[1, 3])
    (tmp_path / "c.json").write_text(json.dumps(cfg.to_dict()))
    assert ExperimentConfig.load(tmp_path / "c.json") == cfg


# experiments ---------------------------------------------------------------


def test_single_replication_report():
    rep = run_consistency(_cfg(n_replications=1))
    c = rep.cells[0]
    assert c.summary["n_replications"] == 1 and c.summary["n_failed"] == 0
    assert c.summary["bias"][0] == pytest.approx(c.reps[0].theta_hat[0] - 1.0, abs=1e-15)
    assert math.isnan(c.summary["ks_stat"][0])


def test_report_shape_matches_config():
    rep = run_consistency(_cfg(T_list=[20.0, 40.0], n_list=[1, 2], n_replications=10))
    assert [(c.T, c.n) for c in rep.cells] == [(20.0, 1), (20.0, 2), (40.0, 1), (40.0, 2)]
    for c in rep.cells:
        assert len(c.reps) == 10
        assert {"bias", "rmse", "ks_stat", "ks_pvalue", "coverage_95", "n_failed"} <= set(c.summary)


def test_determinism_and_thread_independence(tmp_path):
    a = run_consistency(_cfg(n_replications=250, threads=1))
    b = run_consistency(_cfg(n_replications=250, threads=4))
    a.write(tmp_path / "a")
    b.write(tmp_path / "b")
    ra = json.loads((tmp_path / "a" / "report.json").read_text())
    rb = json.loads((tmp_path / "b" / "report.json").read_text())
    ra["config"].pop("threads"), rb["config"].pop("threads")
    assert ra == rb
    assert ((tmp_path / "a" / "cells" / "T50_n1.csv").read_bytes()
            == (tmp_path / "b" / "cells" / "T50_n1.csv").read_bytes())


def test_seed_changes_report():
    a = run_consistency(_cfg(seed=1)).cells[0].summary["bias"]
    b = run_consistency(_cfg(seed=2)).cells[0].summary["bias"]
    assert a != b


def test_cell_csv_header(tmp_path):
    rep = run_normality(_cfg())
    rep.write(tmp_path)
    with open(tmp_path / "cells" / "T50_n1.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["rep", "theta_hat_1", "converged", "clt_1"]
    assert len(rows) == 21
    assert json.loads((tmp_path / "runtime.json").read_text())["runtime_seconds"] >= 0


def test_failures_are_recorded_and_degrade(monkeypatch):
    real = harness._fit_single

    def flaky(path, model, theta0, cfg, seed):
        if seed % 5 == 0:
            raise NumericDomainError("synthetic blow-up")
        return real(path, model, theta0, cfg, seed)

    monkeypatch.setattr(harness, "_fit_single", flaky)
    cfg = _cfg(n_replications=100)
    rep = run_consistency(cfg)
    s = rep.cells[0].summary
    expected = sum(1 for r in range(100) if harness.derive_seed(cfg.seed, 0, r) % 5 == 0)
    assert s["n_failed"] == expected > 5
    assert s["degraded"]
    assert s["n_replications"] == 100
    assert all(r.error for r in rep.cells[0].reps if r.failed)


def test_null_mode_pvalues():
    ps = []
    for seed in range(20):
        rep = run_normality(_cfg(null_mode=True, n_replications=200, seed=seed))
        ps.append(rep.cells[0].summary["ks_pvalue"][0])
    assert min(ps) > 0.001
    # roughly uniform: not all crowded at one end
    assert 0.2 < np.mean(ps) < 0.8


def test_rmse_shrinks_with_horizon():
    rep = run_consistency(_cfg(T_list=[100.0, 400.0], n_replications=300, m=200, seed=7))
    r100 = rep.cell(100.0).summary["rmse"][0]
    r400 = rep.cell(400.0).summary["rmse"][0]
    assert 1.6 <= r100 / r400 <= 2.6


def test_panel_cells_reject_mc():
    with pytest.raises(ConfigError):
        run_consistency(_cfg(preset="panel-linear", n_list=[2], estimator="mc"))


def test_posterior_full_set_rate_zero():
    rep = run_posterior(_cfg(T_list=[100.0], n_replications=3, grid_points=101,
                             decay_radii=[0.0, 1.0]))
    decay = rep.cells[0].summary["decay"]
    assert decay[0]["radius"] == 0.0
    assert decay[0]["empirical_rate"] == 0.0 and decay[0]["target"] == 0.0
    assert decay[1]["empirical_rate"] < 0
    assert rep.cells[0].summary["sup_density_gap_max"] < 0.05
