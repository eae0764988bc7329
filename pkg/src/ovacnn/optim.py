"""Stochastic gradient descent with momentum and L2 regularisation.

Update, elementwise for every parameter ``w`` with gradient ``grad``::

    g = grad + l2 * w
    v = momentum * v - learn_rate * g
    w = w + v

L2 applies to weights and biases alike.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError, ShapeError


@dataclass(frozen=True)
class SgdmConfig:
    learn_rate: float = 0.01
    momentum: float = 0.9
    l2: float = 0.0001

    def __post_init__(self):
        if not self.learn_rate > 0:
            raise ConfigError(f"learn_rate must be > 0, got {self.learn_rate}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if not self.l2 >= 0:
            raise ConfigError(f"l2 must be >= 0, got {self.l2}")


def init_velocity(params):
    return [np.zeros_like(p) for p in params]


def sgdm_step(params, grads, velocity, cfg, owners=None):
    """Apply one SGDM update in place and return ``(params, velocity)``.

    ``owners`` optionally names the layer of each parameter so a non-finite
    gradient can be reported against it.
    """
    if not (len(params) == len(grads) == len(velocity)):
        raise ShapeError("params, grads and velocity must have equal length")
    for i, (w, g, v) in enumerate(zip(params, grads, velocity)):
        if not (w.shape == g.shape == v.shape):
            raise ShapeError(
                f"parameter {i}: shapes {list(w.shape)}, {list(g.shape)}, {list(v.shape)} differ"
            )
        if not np.all(np.isfinite(g)):
            where = f"layer {owners[i]}" if owners is not None else f"parameter {i}"
            raise NumericError(f"non-finite gradient in {where}")
    for w, g, v in zip(params, grads, velocity):
        if cfg.l2:
            g = g + cfg.l2 * w
        v *= cfg.momentum
        v -= cfg.learn_rate * g
        w += v
    return params, velocity


class Sgdm:
    """Optimizer state bound to one network's parameter list."""

    def __init__(self, params, cfg, owners=None):
        self.params = params
        self.cfg = cfg
        self.owners = owners
        self.velocity = init_velocity(params)

    def step(self, grads):
        sgdm_step(self.params, grads, self.velocity, self.cfg, self.owners)
