"""Timestep sampling schemes, backward rollouts, and batch builders.

A trajectory is a strictly decreasing list of times starting at pi/2.
Rolling the teacher backward along it harvests (state, velocity, time)
triples; those triples are the training samples of the trajectory-space
distillation path. The forward-noised builder provides the conventional
diffusion-space baseline batches for comparison.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import network
from .counters import ResourceCounters
from .engine import ParamStore
from .schedules import HALF_PI, consistency_output, t_trig_from_fm
from .teacher import logit_normal_times

RANDOM = "Random"
LOGIT_NORMAL = "LogitNormal"
REFERENCE_ROUTE = "ReferenceRoute"


class RolloutError(RuntimeError):
    """Non-finite state during a rollout; carries the step index."""

    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (step {step})")
        self.step = step


@dataclass(frozen=True)
class TimestepScheme:
    tag: str = LOGIT_NORMAL
    p_mean: float = 0.2
    p_std: float = 1.6
    shift: float = 1.5
    jitter_fraction: float = 0.75

    def __post_init__(self):
        if self.tag not in (RANDOM, LOGIT_NORMAL, REFERENCE_ROUTE):
            raise ValueError(f"unknown timestep scheme '{self.tag}'")
        if self.p_std <= 0 or self.shift < 1 or not 0.0 <= self.jitter_fraction <= 1.0:
            raise ValueError("invalid timestep scheme parameters")


@dataclass
class Trajectory:
    """Strictly decreasing times in (0, pi/2], starting at pi/2."""

    times: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.float64)
        if t.ndim != 1 or len(t) < 1:
            raise ValueError("trajectory needs at least one time")
        if abs(t[0] - HALF_PI) > 1e-12:
            raise ValueError(f"trajectory must start at pi/2, got {t[0]}")
        if np.any(np.diff(t) >= 0):
            raise ValueError("trajectory times must be strictly decreasing")
        if np.any(t <= 0.0):
            raise ValueError("trajectory times must be positive")
        self.times = t

    def __len__(self) -> int:
        return len(self.times)


@dataclass
class TrajectoryBatch:
    """Harvested (state, velocity, time) triples plus bookkeeping fields."""

    states: np.ndarray
    velocities: np.ndarray
    times: np.ndarray
    keep_mask: np.ndarray
    conditions: np.ndarray
    x0_hat: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.times)
        if not (len(self.states) == len(self.velocities) == len(self.keep_mask) == len(self.conditions) == n):
            raise ValueError("batch field lengths disagree")

    def __len__(self) -> int:
        return len(self.times)

    @classmethod
    def merge(cls, batches: list["TrajectoryBatch"]) -> "TrajectoryBatch":
        return cls(
            states=np.concatenate([b.states for b in batches]),
            velocities=np.concatenate([b.velocities for b in batches]),
            times=np.concatenate([b.times for b in batches]),
            keep_mask=np.concatenate([b.keep_mask for b in batches]),
            conditions=np.concatenate([b.conditions for b in batches]),
        )


@dataclass
class FilterConfig:
    """Degenerate-reference filter: drop trajectories that collapse onto z_b."""

    z_b: np.ndarray = field(default_factory=lambda: np.zeros(2))
    threshold: float = 0.95

    def __post_init__(self):
        self.z_b = np.asarray(self.z_b, dtype=np.float64)
        if not np.all(np.isfinite(self.z_b)):
            raise ValueError("filter reference must be finite")
        if not -1.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must lie in [-1, 1]")


# ---------------------------------------------------------------------------
# Timestep schemes
# ---------------------------------------------------------------------------


def _draw_interior(draw, count: int) -> np.ndarray:
    """Collect `count` distinct times in (0, pi/2); duplicates are redrawn."""
    values: np.ndarray = np.empty(0)
    while len(values) < count:
        fresh = draw(count - len(values))
        fresh = fresh[(fresh > 0.0) & (fresh < HALF_PI)]
        values = np.unique(np.concatenate([values, fresh]))
    return values


def sample_trajectory_times(
    scheme: TimestepScheme, n: int, rng: np.random.Generator, sigma_d: float = 1.0
) -> Trajectory:
    """Draw an n-step trajectory under the given scheme (first time = pi/2)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if n == 1:
        return Trajectory(np.array([HALF_PI]))
    if scheme.tag == RANDOM:
        interior = _draw_interior(lambda k: rng.uniform(0.0, HALF_PI, size=k), n - 1)
    elif scheme.tag == LOGIT_NORMAL:
        interior = _draw_interior(
            lambda k: logit_normal_times(rng, k, scheme.p_mean, scheme.p_std, sigma_d),
            n - 1,
        )
    else:
        return partitioned_sample(
            flow_euler_reference(n, scheme.shift), scheme.jitter_fraction, rng
        )
    times = np.concatenate([[HALF_PI], np.sort(interior)[::-1]])
    return Trajectory(times)


def flow_euler_reference(n: int, shift: float) -> Trajectory:
    """Shifted flow-matching Euler grid mapped into trig time.

    Grid u_i = 1 - i/n, shifted by t' = shift * u / (1 + (shift - 1) * u),
    then mapped through the inverse time transform; starts at pi/2.
    """
    if n < 1 or shift < 1:
        raise ValueError("need n >= 1 and shift >= 1")
    u = 1.0 - np.arange(n) / n
    t_fm = shift * u / (1.0 + (shift - 1.0) * u)
    t_trig = np.array([t_trig_from_fm(min(float(v), 1.0)) for v in t_fm])
    return Trajectory(t_trig)


def partitioned_sample(
    reference: Trajectory, jitter_fraction: float, rng: np.random.Generator
) -> Trajectory:
    """One time per partition around each reference time; endpoints fixed.

    Partition i spans the midpoints toward the neighboring reference
    times; the sample is drawn uniformly within the central
    ``jitter_fraction`` of each half around the reference time, so
    jitter 0 reproduces the reference exactly.
    """
    ref = reference.times
    out = ref.copy()
    for i in range(1, len(ref) - 1):
        hi = 0.5 * (ref[i - 1] + ref[i])
        lo = 0.5 * (ref[i] + ref[i + 1])
        s = rng.uniform(-jitter_fraction, jitter_fraction)
        out[i] = ref[i] + s * (hi - ref[i]) if s >= 0 else ref[i] + s * (ref[i] - lo)
    return Trajectory(out)


# ---------------------------------------------------------------------------
# Rollout and batch builders
# ---------------------------------------------------------------------------


def _teacher_velocity_fn(teacher, y: int, sigma_d: float, counters: ResourceCounters | None):
    """Per-call velocity closure; the condition embedding is computed once."""
    if isinstance(teacher, ParamStore) or hasattr(teacher, "items"):
        cond = np.asarray(network.condition_embed(teacher, y, counters))

        def fn(x, t):
            return np.asarray(
                network.velocity_forward(teacher, x / sigma_d, t, cond=cond)
            )

        return fn
    if counters is not None:
        counters.cond_embeds += 1
    return lambda x, t: np.asarray(teacher(x, t, y))


def rollout(
    teacher,
    z,
    y: int,
    traj: Trajectory,
    sigma_d: float,
    counters: ResourceCounters | None = None,
) -> TrajectoryBatch:
    """Backward trigonometric Euler rollout harvesting every visited state.

    ``teacher`` is either a trained ParamStore or a callable
    (x_t, t, y) -> F. Velocities are recorded before each step; the step
    is the exact plane rotation of the trig schedule. Exactly
    len(traj) teacher forwards and one condition embedding are counted.
    """
    vel = _teacher_velocity_fn(teacher, y, sigma_d, counters)
    x = np.asarray(z, dtype=np.float64).copy()
    times = traj.times
    states = np.empty((len(times), x.shape[-1]))
    velocities = np.empty_like(states)
    for i, t in enumerate(times):
        f_val = vel(x, t)
        if counters is not None:
            counters.teacher_nfe += 1
        v = sigma_d * f_val
        if not np.all(np.isfinite(v)):
            raise RolloutError("non-finite teacher velocity", i)
        states[i] = x
        velocities[i] = v
        if i + 1 < len(times):
            dt = t - times[i + 1]
            x = math.cos(dt) * x - math.sin(dt) * v
    t_last = times[-1]
    x0_hat = consistency_output(velocities[-1] / sigma_d, states[-1], t_last, sigma_d)
    return TrajectoryBatch(
        states=states,
        velocities=velocities,
        times=times.copy(),
        keep_mask=np.ones(len(times)),
        conditions=np.full(len(times), int(y), dtype=np.int64),
        x0_hat=np.asarray(x0_hat),
    )


def brightness_filter(x0_hat_scaled, cfg: FilterConfig) -> int:
    """1 to keep, 0 to discard when too close (cosine) to the reference."""
    x = np.asarray(x0_hat_scaled, dtype=np.float64)
    nx = np.linalg.norm(x)
    nb = np.linalg.norm(cfg.z_b)
    if nx == 0.0 or nb == 0.0:
        return 1
    sim = float(x @ cfg.z_b / (nx * nb))
    return 0 if sim >= cfg.threshold else 1


def diffusion_space_batch(
    teacher,
    x0,
    y,
    scheme: TimestepScheme,
    rng: np.random.Generator,
    sigma_d: float,
    counters: ResourceCounters | None = None,
) -> TrajectoryBatch:
    """Forward-noised baseline batch: one independent (x_t, v, t) per point.

    Every sample pays its own condition-embedding call; the teacher runs
    once per sample. This is the non-amortized contrast to `rollout`.
    """
    if scheme.tag != LOGIT_NORMAL:
        raise ValueError("diffusion-space batches use the logit-normal scheme")
    x0 = np.asarray(x0, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n = len(x0)
    t = logit_normal_times(rng, n, scheme.p_mean, scheme.p_std, sigma_d)
    z = rng.normal(0.0, sigma_d, size=x0.shape)
    x_t = np.cos(t)[:, None] * x0 + np.sin(t)[:, None] * z

    if isinstance(teacher, ParamStore) or hasattr(teacher, "items"):
        cond = np.stack(
            [np.asarray(network.condition_embed(teacher, yi, counters)) for yi in y]
        )
        f_val = np.asarray(
            network.velocity_forward(teacher, x_t / sigma_d, t, cond=cond)
        )
    else:
        if counters is not None:
            counters.cond_embeds += n
        f_val = np.stack([np.asarray(teacher(x_t[i], t[i], y[i])) for i in range(n)])
    if counters is not None:
        counters.teacher_nfe += n
    return TrajectoryBatch(
        states=x_t,
        velocities=sigma_d * f_val,
        times=t,
        keep_mask=np.ones(n),
        conditions=y,
    )
