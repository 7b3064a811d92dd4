"""Built-in model presets.

Configuration files can only name presets (plus keyword parameters), since
arbitrary coefficient functions are not serializable. Programmatic users may
build :class:`~ssde_lab.model.StateSpaceModel` instances directly or register
their own presets.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .exceptions import ConfigError
from .model import ParamMaps, RatioBounds, StateSpaceModel


@dataclass(frozen=True)
class Preset:
    name: str
    description: str
    factory: Callable
    theta0: tuple
    growth_box: dict
    demo_only: bool = False
    note: str = ""
    panel_factory: Optional[Callable] = None

    def build(self, **params):
        try:
            return self.factory(**params)
        except TypeError as exc:
            raise ConfigError(f"bad parameters for preset {self.name!r}: {exc}") from None

    def build_panel(self, n, **params):
        from .panel import PanelModel

        if self.panel_factory is not None:
            try:
                return self.panel_factory(n, **params)
            except TypeError as exc:
                raise ConfigError(f"bad parameters for preset {self.name!r}: {exc}") from None
        base = self.build(**params)
        return PanelModel.homogeneous(base, n)


def _ones(y, x, t):
    return np.ones_like(np.asarray(y, dtype=float))


def _gbm_latent(a, sigma):
    return (lambda x, t: -a * x), (lambda x, t: sigma * x)


def unit_ratio(a=1.0, sigma=0.5):
    """``dY = theta dt + dW_Y`` with a driftless geometric latent process."""
    b_x, s_x = _gbm_latent(a, sigma)
    return StateSpaceModel(
        b_y=_ones, sigma_y=_ones, b_x=b_x, sigma_x=s_x,
        maps=ParamMaps.affine([1.0], [0.0]),
        ratio_bounds=RatioBounds(K_Y=1.0, K_X=a * a / (sigma * sigma)),
        y0=0.0, x0=1.0, name="unit-ratio",
    )


def latent_modulated(a=1.0, sigma=0.5):
    """Observation drift ``1 + x exp(-t)``: the latent effect fades with time."""
    b_x, s_x = _gbm_latent(a, sigma)
    return StateSpaceModel(
        b_y=lambda y, x, t: 1.0 + x * np.exp(-t),
        sigma_y=_ones, b_x=b_x, sigma_x=s_x,
        maps=ParamMaps.affine([1.0], [0.0]),
        ratio_bounds=RatioBounds(K_Y=1.0, K_X=a * a / (sigma * sigma), alpha_y1=1.0, alpha_y2=1.0),
        y0=0.0, x0=1.0, name="latent-modulated",
    )


def gbm_latent(a=1.0, sigma=0.5):
    """Geometric latent ``dX = -a X dt + sigma X dW_X`` with its drift multiplier fixed at 1."""
    b_x, s_x = _gbm_latent(a, sigma)
    return StateSpaceModel(
        b_y=_ones, sigma_y=_ones, b_x=b_x, sigma_x=s_x,
        maps=ParamMaps.affine([1.0], [0.0], offset_x=1.0),
        ratio_bounds=RatioBounds(K_Y=1.0, K_X=a * a / (sigma * sigma)),
        y0=0.0, x0=1.0, name="gbm-latent",
    )


def panel_linear_maps(i):
    """Affine maps of individual ``i`` (0-based); slopes tend to 1 as ``i`` grows."""
    return ParamMaps.affine([1.0 + 0.5 / (i + 1) ** 2], [0.0])


def panel_linear(n, a=1.0, sigma=0.5):
    from .panel import PanelModel

    base = unit_ratio(a, sigma)
    rb = base.ratio_bounds
    return PanelModel(
        n=n, base=base,
        per_individual_maps=tuple(panel_linear_maps(i) for i in range(n)),
        limit_maps=ParamMaps.affine([1.0], [0.0]),
        K_bar_Y=rb.K_Y, K_bar_X=rb.K_X,
    )


_BOX = {"y": (-50.0, 50.0), "x": (-10.0, 10.0), "t": (0.0, 100.0)}

_REGISTRY = {}


def register(preset):
    _REGISTRY[preset.name] = preset
    return preset


def get_preset(name):
    try:
        return _REGISTRY[name]
    except KeyError:
        raise ConfigError(
            f"unknown preset {name!r}; available: {', '.join(sorted(_REGISTRY))}") from None


def list_presets():
    return [_REGISTRY[k] for k in sorted(_REGISTRY)]


register(Preset(
    "unit-ratio", "b_Y = sigma_Y = 1, psi_Y(theta) = theta, latent-free observation drift",
    unit_ratio, theta0=(1.0,), growth_box=_BOX,
))
register(Preset(
    "latent-modulated", "b_Y = 1 + x exp(-t), sigma_Y = 1, psi_Y(theta) = theta, psi_X = 0",
    latent_modulated, theta0=(1.0,), growth_box=_BOX, demo_only=True,
    note=("the ratio (1 + x e^-t)^2 only meets the bounds with time-dependent constants "
          "K_{Y,j,T} -> K_Y; the limiting-constant check fails near x = 0 for small t"),
))
register(Preset(
    "gbm-latent", "b_Y = sigma_Y = 1, latent b_X = -a x, sigma_X = sigma x, K_X = a^2/sigma^2",
    gbm_latent, theta0=(1.0,), growth_box=_BOX,
))
register(Preset(
    "panel-linear", "unit-ratio individuals with affine psi_{Y_i} converging to psi_Y(theta) = theta",
    unit_ratio, theta0=(1.0,), growth_box=_BOX, panel_factory=panel_linear,
))
