"""Sampling from students, distribution metrics, and the ablation harness."""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np

from . import network
from .counters import ResourceCounters
from .engine import ParamStore
from .schedules import HALF_PI, consistency_output, equivalent_noise
from .trajectory import Trajectory, flow_euler_reference, rollout


def one_step_sample(
    student: ParamStore, z, y: int, sigma_d: float, counters: ResourceCounters | None = None
):
    """Single-forward generation: the clean prediction at the noise endpoint."""
    z = np.asarray(z, dtype=np.float64)
    f = np.asarray(network.velocity_forward(student, z / sigma_d, HALF_PI, y=y))
    if counters is not None:
        counters.teacher_nfe += 1
    return np.asarray(consistency_output(f, z, HALF_PI, sigma_d))


def multi_step_sample(
    student: ParamStore,
    step_times,
    y: int,
    rng: np.random.Generator,
    sigma_d: float,
    counters: ResourceCounters | None = None,
):
    """Iterated generate-then-renoise sampling.

    At each scheduled time the model maps back to a clean estimate; fresh
    noise then lifts it to the next (smaller) time. One network forward
    per scheduled time.
    """
    times = np.asarray(step_times, dtype=np.float64)
    Trajectory(times)  # validates ordering and the pi/2 start
    x = rng.normal(0.0, sigma_d, size=2)
    x0_hat = x
    for i, t in enumerate(times):
        f = np.asarray(network.velocity_forward(student, x / sigma_d, float(t), y=y))
        if counters is not None:
            counters.teacher_nfe += 1
        x0_hat = np.asarray(consistency_output(f, x, float(t), sigma_d))
        if i + 1 < len(times):
            t_next = float(times[i + 1])
            z = rng.normal(0.0, sigma_d, size=2)
            x = math.cos(t_next) * x0_hat + math.sin(t_next) * z
    return x0_hat


def one_step_batch(
    student: ParamStore, n: int, rng: np.random.Generator, sigma_d: float
) -> np.ndarray:
    """n one-step samples with conditions drawn uniformly over the vocabulary."""
    vocab = student["embed.cond"].shape[0]
    y = rng.integers(0, vocab, size=n)
    z = rng.normal(0.0, sigma_d, size=(n, 2))
    f = np.asarray(network.velocity_forward(student, z / sigma_d, HALF_PI, y=y))
    return np.asarray(consistency_output(f, z, HALF_PI, sigma_d))


def teacher_rollout_samples(
    teacher: ParamStore,
    n: int,
    n_steps: int,
    rng: np.random.Generator,
    sigma_d: float,
    shift: float = 1.5,
) -> np.ndarray:
    """n samples via the multi-step backward rollout on the reference grid.

    All samples share the time grid, so the whole population is advanced
    in one batched network call per step.
    """
    vocab = teacher["embed.cond"].shape[0]
    y = rng.integers(0, vocab, size=n)
    x = rng.normal(0.0, sigma_d, size=(n, 2))
    times = flow_euler_reference(n_steps, shift).times
    f = None
    for i, t in enumerate(times):
        f = np.asarray(network.velocity_forward(teacher, x / sigma_d, float(t), y=y))
        if i + 1 < len(times):
            dt = float(t - times[i + 1])
            x = math.cos(dt) * x - math.sin(dt) * sigma_d * f
    return np.asarray(consistency_output(f, x, float(times[-1]), sigma_d))


def sliced_wasserstein(
    a, b, n_projections: int, rng: np.random.Generator
) -> float:
    """Mean 1D 2-Wasserstein distance over random projection directions."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError("point sets must be 2D arrays with equal dimension")
    if len(a) == 0 or len(b) == 0:
        raise ValueError("point sets must be non-empty")
    dim = a.shape[1]
    dirs = rng.standard_normal((n_projections, dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pa = np.sort(a @ dirs.T, axis=0)
    pb = np.sort(b @ dirs.T, axis=0)
    if len(a) == len(b):
        w2 = np.sqrt(np.mean((pa - pb) ** 2, axis=0))
    else:
        m = max(len(a), len(b))
        q = (np.arange(m) + 0.5) / m
        qa = (np.arange(len(a)) + 0.5) / len(a)
        qb = (np.arange(len(b)) + 0.5) / len(b)
        w2 = np.empty(n_projections)
        for j in range(n_projections):
            fa = np.interp(q, qa, pa[:, j])
            fb = np.interp(q, qb, pb[:, j])
            w2[j] = np.sqrt(np.mean((fa - fb) ** 2))
    return float(np.mean(w2))


def one_step_metric(
    student: ParamStore,
    heldout: np.ndarray,
    sigma_d: float,
    n_samples: int = 2048,
    n_projections: int = 512,
    seed: int = 2024,
) -> float:
    """Sliced-Wasserstein distance of one-step samples to held-out data."""
    rng = np.random.default_rng(seed)
    samples = one_step_batch(student, n_samples, rng, sigma_d)
    return sliced_wasserstein(samples, heldout, n_projections, rng)


def equivalent_noise_curve(
    teacher, traj: Trajectory, z, y: int, sigma_d: float
) -> list[tuple[float, float]]:
    """(t, cosine similarity of equivalent noise to the initial noise) series.

    The teacher is rolled backward along the trajectory; at each recorded
    state the instantaneous clean estimate defines the equivalent noise.
    """
    z = np.asarray(z, dtype=np.float64)
    batch = rollout(teacher, z, y, traj, sigma_d)
    out = []
    for x_t, v, t in zip(batch.states, batch.velocities, batch.times):
        x0_hat = np.asarray(consistency_output(v / sigma_d, x_t, float(t), sigma_d))
        eq = equivalent_noise(x_t, x0_hat, float(t))
        if np.array_equal(eq, z):
            sim = 1.0  # cosine of a vector with itself, exact by identity
        else:
            denom = np.linalg.norm(eq) * np.linalg.norm(z)
            sim = float(eq @ z / denom) if denom > 0 else 1.0
        out.append((float(t), sim))
    return out


def ablation_harness(
    grid,
    seeds,
    teacher: ParamStore,
    dataset,
    heldout: np.ndarray,
    eval_samples: int = 2048,
):
    """Run every (config, seed), score one-step samples, summarize medians.

    ``grid`` is a list of (label, DistillConfig). Per-run failures are
    recorded as rows with an empty value and the harness continues.
    Returns (summary_rows, run_rows).
    """
    from .distill import run_distillation

    run_rows: list[dict] = []
    summary_rows: list[dict] = []
    for label, cfg in grid:
        values = []
        for seed in seeds:
            run_cfg = replace(cfg, seed=int(seed))
            try:
                state, _ = run_distillation(run_cfg, teacher, dataset)
                value = one_step_metric(
                    state.theta, heldout, run_cfg.sigma_d, eval_samples
                )
                values.append(value)
                run_rows.append(
                    {"run": label, "seed": int(seed), "metric": "one_step_sw", "value": value}
                )
            except Exception as err:  # keep the sweep going on per-run failure
                run_rows.append(
                    {"run": label, "seed": int(seed), "metric": "error", "value": str(err)}
                )
        summary_rows.append(
            {
                "run": label,
                "seed": "median",
                "metric": "one_step_sw_median",
                "value": float(np.median(values)) if values else "",
            }
        )
    return summary_rows, run_rows
