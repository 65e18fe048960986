"""Synthetic 2D datasets, teacher pretraining, and the point-mass oracle.

The teacher is the velocity net trained with the trigonometric-schedule
regression objective on one of the toy densities. The point-mass dataset
admits a closed-form optimal velocity, which the test suite uses as an
analytic reference throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import engine, network
from .engine import ParamStore, ShapeError
from .network import VelocityNetConfig
from .optim import RmsOptimizer
from .schedules import T_EPS, DomainError


class TrainingError(RuntimeError):
    """Training diverged; carries the step index where it happened."""

    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (step {step})")
        self.step = step


GAUSSIAN_MIXTURE_8 = "GaussianMixture8"
TWO_MOONS = "TwoMoons"
SWISS_ROLL_2D = "SwissRoll2D"
POINT_MASS = "PointMass"


@dataclass
class Dataset2D:
    """A toy 2D density with per-mode condition ids and sigma_d normalization."""

    tag: str = GAUSSIAN_MIXTURE_8
    sigma_d: float = 0.5
    point: tuple = (2.0, -1.0)
    mode_radius: float = 1.0
    mode_std: float = 0.15
    noise: float = 0.08
    _scale: float = field(init=False, repr=False, default=1.0)

    def __post_init__(self):
        if self.tag == GAUSSIAN_MIXTURE_8:
            # per-coordinate variance of centers-on-a-circle plus mode spread
            var = 0.5 * self.mode_radius**2 + self.mode_std**2
            self._scale = self.sigma_d / math.sqrt(var)
        elif self.tag in (TWO_MOONS, SWISS_ROLL_2D):
            probe = self._raw_sample(50_000, np.random.default_rng(0))[0]
            probe -= probe.mean(axis=0)
            self._scale = self.sigma_d / math.sqrt(probe.var(axis=0).mean())
        elif self.tag == POINT_MASS:
            self._scale = 1.0
        else:
            raise ValueError(f"unknown dataset tag '{self.tag}'")

    @property
    def num_conditions(self) -> int:
        return {GAUSSIAN_MIXTURE_8: 8, TWO_MOONS: 2}.get(self.tag, 1)

    def _raw_sample(self, n: int, rng: np.random.Generator):
        if self.tag == GAUSSIAN_MIXTURE_8:
            y = rng.integers(0, 8, size=n)
            angles = y * (2.0 * math.pi / 8.0)
            centers = self.mode_radius * np.stack(
                [np.cos(angles), np.sin(angles)], axis=-1
            )
            return centers + self.mode_std * rng.standard_normal((n, 2)), y
        if self.tag == TWO_MOONS:
            y = rng.integers(0, 2, size=n)
            a = rng.uniform(0.0, math.pi, size=n)
            outer = np.stack([np.cos(a), np.sin(a)], axis=-1)
            inner = np.stack([1.0 - np.cos(a), 0.5 - np.sin(a)], axis=-1)
            x = np.where(y[:, None] == 0, outer, inner)
            x = x - np.array([0.5, 0.25])
            return x + self.noise * rng.standard_normal((n, 2)), y
        if self.tag == SWISS_ROLL_2D:
            u = rng.uniform(1.5 * math.pi, 4.5 * math.pi, size=n)
            x = np.stack([u * np.cos(u), u * np.sin(u)], axis=-1) / (4.5 * math.pi)
            return x + self.noise * rng.standard_normal((n, 2)), np.zeros(n, dtype=np.int64)
        x = np.tile(np.asarray(self.point, dtype=np.float64), (n, 1))
        return x, np.zeros(n, dtype=np.int64)

    def sample(self, n: int, rng: np.random.Generator):
        """n normalized points and their condition ids."""
        if n < 1:
            raise ValueError("n must be >= 1")
        x, y = self._raw_sample(n, rng)
        return self._scale * x, y


def sample_data(dataset: Dataset2D, n: int, rng: np.random.Generator):
    return dataset.sample(n, rng)


def logit_normal_times(
    rng: np.random.Generator, n: int, p_mean: float, p_std: float, sigma_d: float
) -> np.ndarray:
    """Timestep proposal t = arctan(exp(tau) / sigma_d), tau ~ N(p_mean, p_std^2)."""
    tau = rng.normal(p_mean, p_std, size=n)
    return np.arctan(np.exp(tau) / sigma_d)


def trigflow_target(x0, z, t):
    """Regression target cos(t) * z - sin(t) * x0 (t scalar or per-sample)."""
    x0 = np.asarray(x0, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if x0.shape != z.shape:
        raise ShapeError(f"x0 shape {x0.shape} != z shape {z.shape}")
    t = np.asarray(t, dtype=np.float64)
    c, s = np.cos(t), np.sin(t)
    if t.ndim > 0:
        c, s = c[..., None], s[..., None]
    return c * z - s * x0


def analytic_velocity_pointmass(x_t, t: float, x_star, sigma_d: float):
    """Optimal raw network output for a point-mass data distribution.

    The probability-flow trajectory through (x_t, t) is the plane rotation
    x(s) = cos(s) x* + sin(s) z_eff, whose velocity divided by sigma_d is
    (cos(t) x_t - x*) / (sigma_d sin(t)).
    """
    t = float(t)
    if math.sin(t) < T_EPS:
        raise DomainError(f"point-mass velocity singular at t={t}")
    x_t = np.asarray(x_t, dtype=np.float64)
    x_star = np.asarray(x_star, dtype=np.float64)
    return (math.cos(t) * x_t - x_star) / (sigma_d * math.sin(t))


@dataclass
class TeacherConfig:
    dataset: Dataset2D = field(default_factory=Dataset2D)
    net: VelocityNetConfig | None = None
    steps: int = 20_000
    batch: int = 256
    lr: float = 3e-3
    seed: int = 0
    p_mean: float = 0.2
    p_std: float = 1.6

    def __post_init__(self):
        if self.steps < 0 or self.batch < 1 or self.lr <= 0:
            raise ValueError("invalid training configuration")
        if self.net is None:
            self.net = VelocityNetConfig(num_conditions=self.dataset.num_conditions)


def teacher_loss(params, x_t, t, y, target, sigma_d: float):
    """Mean squared residual of sigma_d * F against the schedule target."""
    f = network.velocity_forward(params, x_t / sigma_d, t, y=y)
    resid = sigma_d * f - target
    return engine.mean(engine.square(resid))


def train_teacher(config: TeacherConfig, log_every: int = 0):
    """Pretrain the velocity net; returns (params, per-step losses)."""
    rng = np.random.default_rng(config.seed)
    sigma_d = config.dataset.sigma_d
    params = network.init_velocity_net(config.net, rng)
    opt = RmsOptimizer(config.lr)
    losses: list[float] = []
    for step in range(config.steps):
        x0, y = config.dataset.sample(config.batch, rng)
        z = rng.normal(0.0, sigma_d, size=x0.shape)
        t = logit_normal_times(rng, config.batch, config.p_mean, config.p_std, sigma_d)
        x_t = np.cos(t)[:, None] * x0 + np.sin(t)[:, None] * z
        target = trigflow_target(x0, z, t)

        def loss_fn(p):
            return teacher_loss(p, x_t, t, y, target, sigma_d)

        try:
            value, grads = engine.value_and_grad(loss_fn, params)
        except engine.NumericError as err:
            raise TrainingError(f"teacher training diverged: {err}", step) from err
        losses.append(value)
        opt.step(params, grads)
        if log_every and step % log_every == 0:
            recent = np.mean(losses[-log_every:])
            print(f"teacher step {step}: loss {recent:.6f}")
    return params, losses
