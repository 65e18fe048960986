"""Continuous-time consistency distillation losses and training loops.

Covers both sample spaces: the trajectory-space path (states harvested
from backward teacher rollouts, conditioning amortized per prompt) and
the diffusion-space baseline (independent forward-noised states). The
loss follows the stop-gradient tangent construction: the detached
network view and its total time derivative assemble the tangent g,
which is normalized, and the student regresses onto its own detached
output shifted by g under a learned per-timestep weight.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import engine, network
from .counters import ResourceCounters
from .engine import ParamStore
from .optim import RmsOptimizer
from .trajectory import (
    FilterConfig,
    TimestepScheme,
    TrajectoryBatch,
    brightness_filter,
    diffusion_space_batch,
    rollout,
    sample_trajectory_times,
)

TBCM = "TBCM"
SCM = "SCM"

WARMUP = "Warmup"
WARMUP_COOLDOWN = "WarmupCooldown"

METRIC_COLUMNS = [
    "iteration",
    "loss",
    "r",
    "kept_fraction",
    "teacher_nfe",
    "cond_embeds",
    "data_encoder_calls",
    "eval_metric",
]


@dataclass(frozen=True)
class RSchedule:
    """Warmup (and optional cooldown) controller for the stability factor r."""

    h: int = 400
    mode: str = WARMUP
    s_r: int = 0
    t_r: int = 1
    r_f: float = 0.75

    def __post_init__(self):
        if self.h < 1:
            raise ValueError("warmup length h must be >= 1")
        if self.mode not in (WARMUP, WARMUP_COOLDOWN):
            raise ValueError(f"unknown r-schedule mode '{self.mode}'")
        if self.mode == WARMUP_COOLDOWN:
            if self.s_r < self.h or self.t_r < 1:
                raise ValueError("cooldown needs s_r >= h and t_r >= 1")
            if not 0.0 < self.r_f <= 1.0:
                raise ValueError("r_f must lie in (0, 1]")


def r_value(schedule: RSchedule, iters: int) -> float:
    """Stability factor at an iteration count: linear warmup, blended cooldown."""
    if iters < 0:
        raise ValueError("iters must be >= 0")
    r = min(1.0, iters / schedule.h)
    if schedule.mode == WARMUP_COOLDOWN:
        p = min(max((iters - schedule.s_r) / schedule.t_r, 0.0), 1.0)
        r = (1.0 - p) * r + p * schedule.r_f
    return r


def tangent_g(f_minus, dxdt, x_t, dfdt_total, t, r: float, sigma_d: float):
    """Tangent -cos^2(t)(sd*F - dx/dt) - r*cos(t)sin(t)(x + sd*dF/dt).

    With r = 1 this equals cos(t) times the total time derivative of the
    clean-sample map under the trig parameterization.
    """
    t = np.asarray(t, dtype=np.float64)
    c, s = np.cos(t), np.sin(t)
    if t.ndim > 0:
        c, s = c[:, None], s[:, None]
    f_minus = np.asarray(f_minus, dtype=np.float64)
    return -c * c * (sigma_d * f_minus - np.asarray(dxdt)) - r * c * s * (
        np.asarray(x_t) + sigma_d * np.asarray(dfdt_total)
    )


def normalize_tangent(g, c: float):
    """Per-sample g / (||g|| + c); output norm is always below 1."""
    if c <= 0:
        raise ValueError("normalization constant must be positive")
    g = np.asarray(g, dtype=np.float64)
    norms = np.linalg.norm(g, axis=-1, keepdims=True)
    return g / (norms + c)


def scm_loss(
    theta: ParamStore,
    phi: ParamStore,
    batch: TrajectoryBatch,
    r: float,
    c: float,
    sigma_d: float,
    theta_minus: ParamStore | None = None,
):
    """Masked consistency loss and gradients through the student and weight head.

    Returns (loss, grads_theta, grads_phi), or None when every sample is
    masked out (skip signal, no update). The detached-view quantities
    (F, dF/dt, the tangent) are computed with plain arrays, so no
    gradient can flow through them by construction; ``theta_minus``
    overrides the detached parameters for oracle comparisons.
    """
    mask = np.asarray(batch.keep_mask, dtype=np.float64)
    kept = float(mask.sum())
    if kept == 0.0:
        return None
    tm = theta_minus if theta_minus is not None else theta
    x = np.asarray(batch.states, dtype=np.float64)
    t = np.asarray(batch.times, dtype=np.float64)
    v = np.asarray(batch.velocities, dtype=np.float64)
    y = np.asarray(batch.conditions, dtype=np.int64)
    dim = x.shape[-1]
    x_scaled = x / sigma_d

    f_minus, dfdt = network.velocity_forward_jvp(tm, x_scaled, t, y, v, sigma_d)
    g = tangent_g(f_minus, v, x, dfdt, t, r, sigma_d)
    g = normalize_tangent(g, c)
    target = f_minus + g

    merged = ParamStore()
    for name, value in theta.items():
        merged[f"theta.{name}"] = value
    for name, value in phi.items():
        merged[f"phi.{name}"] = value

    def loss_fn(leaves):
        theta_view = {k[len("theta."):]: lv for k, lv in leaves.items() if k.startswith("theta.")}
        phi_view = {k[len("phi."):]: lv for k, lv in leaves.items() if k.startswith("phi.")}
        f = network.velocity_forward(theta_view, x_scaled, t, y=y)
        w = network.weight_forward(phi_view, t)
        sq = engine.arr_sum(engine.square(f - target), axis=-1)
        per_sample = engine.exp(w) * sq * (1.0 / dim) - w
        return engine.arr_sum(per_sample * mask) * (1.0 / kept)

    value, grads = engine.value_and_grad(loss_fn, merged)
    grads_theta = ParamStore(
        {k[len("theta."):]: v for k, v in grads.items() if k.startswith("theta.")}
    )
    grads_phi = ParamStore(
        {k[len("phi."):]: v for k, v in grads.items() if k.startswith("phi.")}
    )
    return value, grads_theta, grads_phi


@dataclass
class DistillConfig:
    mode: str = TBCM
    scheme: TimestepScheme = field(default_factory=TimestepScheme)
    n_steps: int = 8
    r_schedule: RSchedule = field(default_factory=RSchedule)
    c: float = 0.1
    filter: FilterConfig | None = None
    steps: int = 4000
    batch: int = 32
    lr: float = 3e-5
    seed: int = 0
    sigma_d: float = 0.5

    def __post_init__(self):
        if self.mode not in (TBCM, SCM):
            raise ValueError(f"unknown distillation mode '{self.mode}'")
        if self.mode == TBCM:
            if self.n_steps < 1:
                raise ValueError("trajectory length must be >= 1")
            if self.batch % self.n_steps != 0:
                raise ValueError("batch must be a multiple of the trajectory length")
        if self.steps < 0 or self.batch < 1 or self.lr <= 0 or self.c <= 0:
            raise ValueError("invalid distillation configuration")


@dataclass
class TrainState:
    theta: ParamStore
    phi: ParamStore
    cfg: DistillConfig
    opt_theta: RmsOptimizer
    opt_phi: RmsOptimizer
    iters: int = 0
    counters: ResourceCounters = field(default_factory=ResourceCounters)


def make_train_state(cfg: DistillConfig, teacher: ParamStore, rng: np.random.Generator) -> TrainState:
    theta = network.init_student_from_teacher(teacher)
    phi = network.init_weight_head(network.AdaptiveWeightConfig(), rng)
    return TrainState(
        theta=theta,
        phi=phi,
        cfg=cfg,
        opt_theta=RmsOptimizer(cfg.lr),
        opt_phi=RmsOptimizer(cfg.lr),
    )


def distill_step(state: TrainState, batch: TrajectoryBatch):
    """One optimization step; returns the loss (None when batch fully masked)."""
    cfg = state.cfg
    r = r_value(cfg.r_schedule, state.iters)
    out = scm_loss(state.theta, state.phi, batch, r, cfg.c, cfg.sigma_d)
    state.counters.optimizer_samples += len(batch)
    loss = None
    if out is not None:
        loss, grads_theta, grads_phi = out
        if not np.isfinite(loss):
            raise TrainingDivergence("distillation loss is non-finite", state.iters)
        state.opt_theta.step(state.theta, grads_theta)
        state.opt_phi.step(state.phi, grads_phi)
    state.iters += 1
    return loss


class TrainingDivergence(RuntimeError):
    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (step {step})")
        self.step = step


def build_batch(
    cfg: DistillConfig,
    teacher: ParamStore,
    dataset,
    rng: np.random.Generator,
    counters: ResourceCounters,
    prompts=None,
) -> TrajectoryBatch:
    """Assemble one optimization batch in the configured sample space."""
    sigma_d = cfg.sigma_d
    if cfg.mode == TBCM:
        num_prompts = cfg.batch // cfg.n_steps
        vocab = teacher["embed.cond"].shape[0]
        parts = []
        for _ in range(num_prompts):
            y = int(rng.integers(vocab)) if prompts is None else int(next(prompts))
            z = rng.normal(0.0, sigma_d, size=2)
            traj = sample_trajectory_times(cfg.scheme, cfg.n_steps, rng, sigma_d)
            tb = rollout(teacher, z, y, traj, sigma_d, counters)
            if cfg.filter is not None:
                tb.keep_mask[:] = brightness_filter(tb.x0_hat / sigma_d, cfg.filter)
            parts.append(tb)
        return TrajectoryBatch.merge(parts)
    x0, y = dataset.sample(cfg.batch, rng)
    counters.data_encoder_calls += cfg.batch
    return diffusion_space_batch(teacher, x0, y, cfg.scheme, rng, sigma_d, counters)


def run_distillation(
    cfg: DistillConfig,
    teacher: ParamStore,
    dataset=None,
    prompts=None,
    eval_every: int = 0,
    heldout=None,
    eval_samples: int = 1024,
):
    """Full distillation run; returns (state, metrics rows).

    Trajectory mode draws prompts and rolls the teacher backward (no
    data samples, no encoder calls); the baseline draws data and
    forward-noises it. Metrics rows follow METRIC_COLUMNS.
    """
    if cfg.mode == SCM and dataset is None:
        raise ValueError("the diffusion-space baseline needs a dataset")
    rng = np.random.default_rng(cfg.seed)
    state = make_train_state(cfg, teacher, rng)
    metrics: list[dict] = []
    prompt_iter = iter(prompts) if prompts is not None else None
    for _ in range(cfg.steps):
        batch = build_batch(cfg, teacher, dataset, rng, state.counters, prompt_iter)
        r = r_value(cfg.r_schedule, state.iters)
        loss = distill_step(state, batch)
        row = {
            "iteration": state.iters,
            "loss": "" if loss is None else repr(float(loss)),
            "r": repr(float(r)),
            "kept_fraction": repr(float(np.mean(batch.keep_mask))),
            "teacher_nfe": state.counters.teacher_nfe,
            "cond_embeds": state.counters.cond_embeds,
            "data_encoder_calls": state.counters.data_encoder_calls,
            "eval_metric": "",
        }
        if eval_every and state.iters % eval_every == 0 and heldout is not None:
            from .evaluate import one_step_metric

            row["eval_metric"] = repr(
                one_step_metric(state.theta, heldout, cfg.sigma_d, eval_samples)
            )
        metrics.append(row)
    return state, metrics


def write_metrics_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
