import numpy as np
import pytest

from ssde_lab.model import ParamMaps, RatioBounds, StateSpaceModel, make_window
from ssde_lab.presets import get_preset
from ssde_lab.simulate import TimeGrid


def ones(y, x, t):
    return np.ones_like(np.asarray(y, dtype=float) + np.asarray(x, dtype=float))


def const_model(b_y=1.0, s_y=1.0, b_x=None, s_x=None, maps=None, **kw):
    """Model with constant observation coefficients and optional latent ones."""
    b_x = b_x or (lambda x, t: np.zeros_like(np.asarray(x, dtype=float)))
    s_x = s_x or (lambda x, t: np.ones_like(np.asarray(x, dtype=float)))
    return StateSpaceModel(
        b_y=lambda y, x, t: b_y * ones(y, x, t),
        sigma_y=lambda y, x, t: s_y * ones(y, x, t),
        b_x=b_x, sigma_x=s_x,
        maps=maps or ParamMaps.affine([1.0], [0.0]),
        ratio_bounds=kw.pop("ratio_bounds", RatioBounds(1.0, 1.0)),
        **kw,
    )


@pytest.fixture
def unit_ratio():
    return get_preset("unit-ratio").build()


@pytest.fixture
def latent_modulated():
    return get_preset("latent-modulated").build()


def grid_for(T, m):
    return TimeGrid.for_window(make_window(T), m)


# acceptance lines, printed in the terminal summary even when output is captured
ACCEPTANCE = []


def record(number, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title} | {detail}"
    ACCEPTANCE.append((number, line))
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE):
        terminalreporter.write_line(line)
