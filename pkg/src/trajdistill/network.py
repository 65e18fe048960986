"""Conditional velocity network, adaptive weighting head, and checkpoints.

The velocity net is a small tanh MLP over [x, fourier(t), cond(y)] built
entirely from engine primitives, so the same forward code runs in plain,
forward-mode (directional derivative), and reverse-mode (gradient)
evaluation. The condition embedding is a learned table indexed by a
small id vocabulary, the toy analog of prompt conditioning.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import engine
from .engine import Dual, ParamStore, ShapeError
from .counters import ResourceCounters


@dataclass(frozen=True)
class VelocityNetConfig:
    input_dim: int = 2
    hidden_dims: tuple = (128, 128, 128)
    time_embed_dim: int = 8
    num_conditions: int = 8
    cond_embed_dim: int = 8

    def __post_init__(self):
        if self.input_dim < 1 or not self.hidden_dims:
            raise ValueError("input_dim >= 1 and non-empty hidden_dims required")
        if self.time_embed_dim < 2 or self.time_embed_dim % 2 != 0:
            raise ValueError("time_embed_dim must be a positive even number")
        if self.num_conditions < 1 or self.cond_embed_dim < 1:
            raise ValueError("conditioning dims must be positive")

    def as_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_dims": list(self.hidden_dims),
            "time_embed_dim": self.time_embed_dim,
            "num_conditions": self.num_conditions,
            "cond_embed_dim": self.cond_embed_dim,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VelocityNetConfig":
        d = dict(d)
        d["hidden_dims"] = tuple(d["hidden_dims"])
        return cls(**d)


@dataclass(frozen=True)
class AdaptiveWeightConfig:
    hidden_dim: int = 64
    time_embed_dim: int = 8

    def __post_init__(self):
        if self.hidden_dim < 1:
            raise ValueError("hidden_dim must be positive")


def init_velocity_net(cfg: VelocityNetConfig, rng: np.random.Generator) -> ParamStore:
    """Fresh parameters; zero-initialized output layer so F == 0 at start."""
    params = ParamStore()
    params["embed.cond"] = rng.standard_normal(
        (cfg.num_conditions, cfg.cond_embed_dim)
    ) / np.sqrt(cfg.cond_embed_dim)
    in_dim = cfg.input_dim + cfg.time_embed_dim + cfg.cond_embed_dim
    for i, h in enumerate(cfg.hidden_dims):
        params[f"net.{i}.W"] = rng.standard_normal((in_dim, h)) * np.sqrt(1.0 / in_dim)
        params[f"net.{i}.b"] = np.zeros(h)
        in_dim = h
    params["net.out.W"] = np.zeros((in_dim, cfg.input_dim))
    params["net.out.b"] = np.zeros(cfg.input_dim)
    return params


def init_weight_head(cfg: AdaptiveWeightConfig, rng: np.random.Generator) -> ParamStore:
    """Per-timestep log-weight head; zero output layer gives w(t) == 0."""
    phi = ParamStore()
    phi["w.0.W"] = rng.standard_normal(
        (cfg.time_embed_dim, cfg.hidden_dim)
    ) * np.sqrt(1.0 / cfg.time_embed_dim)
    phi["w.0.b"] = np.zeros(cfg.hidden_dim)
    phi["w.out.W"] = np.zeros((cfg.hidden_dim, 1))
    phi["w.out.b"] = np.zeros(1)
    return phi


# ---------------------------------------------------------------------------
# Generic forward pieces
# ---------------------------------------------------------------------------


def _shape_of(x):
    if isinstance(x, Dual):
        return x.primal.shape
    if isinstance(x, engine.Var):
        return x.value.shape
    return np.shape(x)


def _per_sample_t(t, batch: int):
    """Normalize scalar or per-sample t to shape (batch,)."""
    if isinstance(t, Dual):
        if t.primal.ndim == 0:
            return Dual(np.full(batch, t.primal), np.full(batch, t.tangent))
        return t
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 0:
        return np.full(batch, t)
    return t


def time_features(t, embed_dim: int):
    """Fourier features [sin(2^k t), cos(2^k t)] for k = 0..embed_dim/2 - 1."""
    n = _shape_of(t)[0]
    freqs = 2.0 ** np.arange(embed_dim // 2)
    angles = engine.reshape(t, (n, 1)) * freqs
    return engine.concat([engine.sin(angles), engine.cos(angles)], axis=-1)


def _num_hidden_layers(params) -> int:
    i = 0
    while f"net.{i}.W" in params:
        i += 1
    return i


def _net_dims(params) -> tuple[int, int, int]:
    """(input_dim, time_embed_dim, cond_embed_dim) recovered from shapes."""
    get = params.__getitem__
    first_in = _shape_of(get("net.0.W"))[0]
    input_dim = _shape_of(get("net.out.W"))[1]
    cond_dim = _shape_of(get("embed.cond"))[1]
    return input_dim, first_in - input_dim - cond_dim, cond_dim


def condition_embed(params, y: int, counters: ResourceCounters | None = None):
    """Deterministic embedding for a condition id; one counted call each time."""
    table = params["embed.cond"]
    n = _shape_of(table)[0]
    y = int(y)
    if not 0 <= y < n:
        raise KeyError(f"unknown condition id {y} (vocabulary size {n})")
    if counters is not None:
        counters.cond_embeds += 1
    return engine.embed_rows(table, np.array(y))


def velocity_forward(params, x_over_sigma, t, y=None, cond=None):
    """Raw network output F(x / sigma_d, t, y); shape follows x.

    ``y`` may be a scalar id or a per-sample id array; alternatively a
    precomputed embedding vector/batch can be supplied as ``cond`` (the
    amortized path used by trajectory rollouts).
    """
    x = x_over_sigma
    single = len(_shape_of(x)) == 1
    if single:
        x = engine.reshape(x, (1, _shape_of(x)[0]))
    batch = _shape_of(x)[0]

    _, time_dim, _ = _net_dims(params)
    te = time_features(_per_sample_t(t, batch), time_dim)

    if cond is None:
        if y is None:
            raise ValueError("either y or cond must be given")
        ids = np.asarray(y, dtype=np.int64)
        table = params["embed.cond"]
        if np.any(ids < 0) or np.any(ids >= _shape_of(table)[0]):
            raise KeyError(f"unknown condition id in {ids!r}")
        if ids.ndim == 0:
            ids = np.full(batch, ids)
        cond = engine.embed_rows(table, ids)
    elif len(_shape_of(cond)) == 1:
        if isinstance(cond, (Dual, engine.Var)):
            cond = engine.reshape(cond, (1, -1))
            if batch > 1:
                cond = engine.concat([cond] * batch, axis=0)
        else:
            cond = np.broadcast_to(np.asarray(cond, dtype=np.float64), (batch, len(cond)))

    h = engine.concat([x, te, cond], axis=-1)
    for i in range(_num_hidden_layers(params)):
        h = engine.tanh(h @ params[f"net.{i}.W"] + params[f"net.{i}.b"])
    out = h @ params["net.out.W"] + params["net.out.b"]
    if single:
        out = engine.reshape(out, (_shape_of(out)[1],))
    return out


def velocity_forward_jvp(params, x_over_sigma, t, y, dx_dt, sigma_d: float = 1.0):
    """Network value and its total time derivative along the trajectory.

    Direction is (dx_dt / sigma_d, 1) in the scaled-input coordinates;
    parameters are constants (detached-view semantics), so no gradient
    information is created here.
    """
    dx_dt = np.asarray(dx_dt, dtype=np.float64)
    if dx_dt.shape != np.shape(np.asarray(x_over_sigma)):
        raise ShapeError(
            f"dx_dt shape {dx_dt.shape} != x shape {np.shape(np.asarray(x_over_sigma))}"
        )

    def f(p, xx, tt, yy):
        return velocity_forward(p, xx, tt, y=yy)

    return engine.jvp(f, params, x_over_sigma, t, y, dx_dt / sigma_d, 1.0)


def weight_forward(phi, t):
    """Adaptive log-weight w(t); scalar in, scalar out (or batched)."""
    t_arr = t if isinstance(t, Dual) else np.asarray(t, dtype=np.float64)
    scalar = len(_shape_of(t_arr)) == 0
    batch = 1 if scalar else _shape_of(t_arr)[0]
    time_dim = _shape_of(phi["w.0.W"])[0]
    te = time_features(_per_sample_t(t_arr, batch), time_dim)
    h = engine.tanh(te @ phi["w.0.W"] + phi["w.0.b"])
    out = h @ phi["w.out.W"] + phi["w.out.b"]
    out = engine.reshape(out, (batch,))
    if scalar:
        if isinstance(out, (Dual, engine.Var)):
            return engine.reshape(out, ())
        return float(out[0])
    return out


def init_student_from_teacher(teacher: ParamStore) -> ParamStore:
    """Deep copy; the student starts from the teacher's weights."""
    return teacher.copy()


# ---------------------------------------------------------------------------
# Checkpoints: parameter file + json sidecar with config/seed metadata
# ---------------------------------------------------------------------------


def save_checkpoint(path, params: ParamStore, meta: dict) -> None:
    path = Path(path)
    params.save(path)
    sidecar = path.with_suffix(path.suffix + ".json")
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_checkpoint(path) -> tuple[ParamStore, dict]:
    path = Path(path)
    params = ParamStore.load(path)
    sidecar = path.with_suffix(path.suffix + ".json")
    meta = json.loads(sidecar.read_text()) if sidecar.exists() else {}
    return params, meta
