"""Diffusion schedule families and coordinate transforms.

Implements the EDM / flow-matching / trigonometric interpolation laws,
the time/state/output maps between flow-matching and trigonometric
coordinates, the clean-sample parameterization of the trigonometric
consistency model, and the equivalent-noise diagnostic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .engine import ShapeError, _asarray

HALF_PI = math.pi / 2.0

# Near-zero guard for divisions by sin(t) (equivalent noise) and by t (EDM ODE).
T_EPS = 1e-6


class DomainError(ValueError):
    """Time argument outside the schedule family's valid range."""


EDM = "EDM"
FLOW_MATCHING = "FlowMatching"
TRIGFLOW = "TrigFlow"


@dataclass(frozen=True)
class ScheduleFamily:
    """One interpolation law: tag, data scale sigma_d, and time horizon."""

    tag: str
    sigma_d: float = 1.0
    t_max: float | None = None

    def __post_init__(self):
        if self.sigma_d <= 0:
            raise ValueError("sigma_d must be positive")
        if self.tag == EDM:
            t_max = self.t_max if self.t_max is not None else 80.0
            if t_max <= 0:
                raise ValueError("EDM horizon must be positive")
        elif self.tag == FLOW_MATCHING:
            t_max = 1.0
        elif self.tag == TRIGFLOW:
            t_max = HALF_PI
        else:
            raise ValueError(f"unknown schedule family '{self.tag}'")
        object.__setattr__(self, "t_max", t_max)

    def check_time(self, t: float) -> float:
        t = float(t)
        if not 0.0 <= t <= self.t_max + 1e-12:
            raise DomainError(f"t={t} outside [0, {self.t_max}] for {self.tag}")
        return min(t, self.t_max)


def alpha_sigma(family: ScheduleFamily, t: float) -> tuple[float, float]:
    """Interpolation coefficients (alpha_t, sigma_t) of the family at t."""
    t = family.check_time(t)
    if family.tag == EDM:
        return 1.0, t
    if family.tag == FLOW_MATCHING:
        return 1.0 - t, t
    return math.cos(t), math.sin(t)


def forward_noise(family: ScheduleFamily, x0, z, t: float) -> np.ndarray:
    """Perturbed sample alpha_t * x0 + sigma_t * z."""
    x0 = _asarray(x0)
    z = _asarray(z)
    if x0.shape != z.shape:
        raise ShapeError(f"x0 shape {x0.shape} != z shape {z.shape}")
    alpha, sigma = alpha_sigma(family, t)
    return alpha * x0 + sigma * z


def ode_rhs(family: ScheduleFamily, f_value, x_t, t: float) -> np.ndarray:
    """dx/dt of the family's probability-flow ODE given the raw net output."""
    f_value = _asarray(f_value)
    t = family.check_time(t)
    if family.tag == EDM:
        if t < T_EPS:
            raise DomainError("EDM ODE is singular at t = 0")
        return (_asarray(x_t) - f_value) / t
    if family.tag == FLOW_MATCHING:
        return f_value
    return family.sigma_d * f_value


def t_fm_from_trig(t_trig: float) -> float:
    """Map a trigonometric time in [0, pi/2] to flow-matching time in [0, 1]."""
    t_trig = float(t_trig)
    if not 0.0 <= t_trig <= HALF_PI + 1e-12:
        raise DomainError(f"t_trig={t_trig} outside [0, pi/2]")
    s, c = math.sin(t_trig), math.cos(t_trig)
    return s / (s + c)


def t_trig_from_fm(t_fm: float) -> float:
    """Inverse time map; t_fm = 1 is the removable limit pi/2."""
    t_fm = float(t_fm)
    if not 0.0 <= t_fm <= 1.0:
        raise DomainError(f"t_fm={t_fm} outside [0, 1]")
    if t_fm == 1.0:
        return HALF_PI
    return math.atan(t_fm / (1.0 - t_fm))


def fm_scale_factor(t_fm: float) -> float:
    """Norm factor sqrt(t_fm^2 + (1-t_fm)^2); in [sqrt(1/2), 1]."""
    return math.sqrt(t_fm * t_fm + (1.0 - t_fm) ** 2)


def x_fm_from_trig(x_trig, t_trig: float, sigma_d: float):
    """State/time pair in flow-matching coordinates for a trig-space point."""
    t_fm = t_fm_from_trig(t_trig)
    x_fm = _asarray(x_trig) / sigma_d * fm_scale_factor(t_fm)
    return x_fm, t_fm


def wrap_fm_as_trigflow(v_net, x_trig, t_trig: float, y, sigma_d: float) -> np.ndarray:
    """Evaluate a flow-matching velocity net as a trig-parameterized output.

    ``v_net(x_fm, t_fm, y)`` is mapped through the time/state transforms and
    recombined so the result plays the role of the raw trig-space network
    output F at (x_trig / sigma_d, t_trig).
    """
    x_fm, t_fm = x_fm_from_trig(x_trig, t_trig, sigma_d)
    v = _asarray(v_net(x_fm, t_fm, y))
    factor = fm_scale_factor(t_fm)
    a = 1.0 - 2.0 * t_fm
    b = 1.0 - 2.0 * t_fm + 2.0 * t_fm * t_fm
    return (a * x_fm + b * v) / factor


def consistency_output(f_value, x_t, t, sigma_d: float):
    """Clean-sample prediction cos(t) * x_t - sin(t) * sigma_d * F."""
    t = np.asarray(t, dtype=np.float64)
    c = np.cos(t)
    s = np.sin(t)
    if t.ndim > 0:
        c = c[..., None]
        s = s[..., None]
    return c * _asarray(x_t) - s * sigma_d * _asarray(f_value)


def equivalent_noise(x_t, x0_hat, t: float) -> np.ndarray:
    """Noise that would forward-produce x_t from the clean estimate x0_hat."""
    t = float(t)
    if math.sin(t) < T_EPS:
        raise DomainError(f"equivalent noise is singular at t={t}")
    if t == HALF_PI:
        # cos is exactly zero and sin exactly one at the noise endpoint;
        # float cos(HALF_PI) is off by one ulp of pi/2, so short-circuit
        return _asarray(x_t).copy()
    return (_asarray(x_t) - math.cos(t) * _asarray(x0_hat)) / math.sin(t)
