"""Command-line surface: config-driven runs with manifests and CSV output.

Subcommands: train-teacher, distill, sample, analyze-noise, eval, ablate.
Configs are flat ``key = value`` files ('#' starts a comment). Every run
writes a manifest (config echo, seed, counters, wall time, version) into
its output directory. The TRAJDISTILL_OUTPUT_ROOT environment variable
overrides the root under which relative output directories are created.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, network
from .counters import ResourceCounters
from .distill import (
    SCM,
    TBCM,
    WARMUP,
    WARMUP_COOLDOWN,
    DistillConfig,
    RSchedule,
    run_distillation,
    write_metrics_csv,
)
from .evaluate import (
    ablation_harness,
    equivalent_noise_curve,
    multi_step_sample,
    one_step_sample,
    sliced_wasserstein,
    one_step_batch,
)
from .teacher import Dataset2D, TeacherConfig, train_teacher
from .trajectory import FilterConfig, TimestepScheme, flow_euler_reference


class ConfigError(ValueError):
    pass


def parse_config(path) -> dict:
    """Flat key = value file; values stay strings, '#' starts a comment."""
    cfg = {}
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        cfg[key.strip()] = value.strip()
    return cfg


def _get(cfg, key, default=None, cast=str):
    if key not in cfg:
        if default is None:
            raise ConfigError(f"missing required config key '{key}'")
        return default
    try:
        return cast(cfg[key])
    except ValueError as err:
        raise ConfigError(f"bad value for '{key}': {cfg[key]!r}") from err


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.split(","))


def _ints(text: str) -> tuple:
    return tuple(int(v) for v in text.split(","))


def dataset_from_config(cfg: dict) -> Dataset2D:
    return Dataset2D(
        tag=_get(cfg, "dataset", "GaussianMixture8"),
        sigma_d=_get(cfg, "sigma_d", 0.5, float),
        point=_floats(_get(cfg, "point", "2.0,-1.0")),
    )


def scheme_from_config(cfg: dict) -> TimestepScheme:
    return TimestepScheme(
        tag=_get(cfg, "scheme", "LogitNormal"),
        p_mean=_get(cfg, "p_mean", 0.2, float),
        p_std=_get(cfg, "p_std", 1.6, float),
        shift=_get(cfg, "shift", 1.5, float),
        jitter_fraction=_get(cfg, "jitter_fraction", 0.75, float),
    )


def output_dir(cfg: dict, override: str | None) -> Path:
    out = Path(override or _get(cfg, "out", "run_output"))
    if not out.is_absolute():
        root = os.environ.get("TRAJDISTILL_OUTPUT_ROOT")
        if root:
            out = Path(root) / out
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_manifest(out: Path, cfg: dict, counters: ResourceCounters | None, started: float, extra=None):
    manifest = {
        "version": __version__,
        "config": cfg,
        "seed": cfg.get("seed"),
        "counters": counters.as_dict() if counters else None,
        "wall_time_s": round(time.time() - started, 3),
    }
    if extra:
        manifest.update(extra)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _write_rows(path, fieldnames, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_train_teacher(cfg: dict, out: Path) -> int:
    started = time.time()
    dataset = dataset_from_config(cfg)
    net = network.VelocityNetConfig(
        hidden_dims=_ints(_get(cfg, "hidden", "128,128,128")),
        time_embed_dim=_get(cfg, "time_embed_dim", 8, int),
        num_conditions=dataset.num_conditions,
        cond_embed_dim=_get(cfg, "cond_embed_dim", 8, int),
    )
    tc = TeacherConfig(
        dataset=dataset,
        net=net,
        steps=_get(cfg, "steps", 20000, int),
        batch=_get(cfg, "batch", 256, int),
        lr=_get(cfg, "lr", 3e-3, float),
        seed=_get(cfg, "seed", 0, int),
        p_mean=_get(cfg, "p_mean", 0.2, float),
        p_std=_get(cfg, "p_std", 1.6, float),
    )
    params, losses = train_teacher(tc)
    network.save_checkpoint(
        out / "teacher.ckpt",
        params,
        {"kind": "teacher", "dataset": dataset.tag, "sigma_d": dataset.sigma_d,
         "seed": tc.seed, "net": net.as_dict()},
    )
    _write_rows(
        out / "metrics.csv",
        ["iteration", "loss"],
        [{"iteration": i, "loss": repr(v)} for i, v in enumerate(losses)],
    )
    write_manifest(out, cfg, None, started)
    return 0


def _distill_config(cfg: dict) -> DistillConfig:
    mode = _get(cfg, "mode", "tbcm").upper()
    if mode not in (TBCM, SCM):
        raise ConfigError(f"mode must be tbcm or scm, got {cfg.get('mode')!r}")
    r_mode = _get(cfg, "r_mode", WARMUP)
    schedule = RSchedule(
        h=_get(cfg, "r_h", 400, int),
        mode=r_mode,
        s_r=_get(cfg, "r_s", 0 if r_mode == WARMUP else 2000, int),
        t_r=_get(cfg, "r_t", 1 if r_mode == WARMUP else 1000, int),
        r_f=_get(cfg, "r_f", 0.75, float),
    )
    filt = None
    if _get(cfg, "filter", "off") == "on":
        filt = FilterConfig(
            z_b=np.asarray(_floats(_get(cfg, "filter_zb", "0.0,0.0"))),
            threshold=_get(cfg, "filter_threshold", 0.95, float),
        )
    return DistillConfig(
        mode=mode,
        scheme=scheme_from_config(cfg),
        n_steps=_get(cfg, "n_steps", 8, int),
        r_schedule=schedule,
        c=_get(cfg, "c", 0.1, float),
        filter=filt,
        steps=_get(cfg, "steps", 4000, int),
        batch=_get(cfg, "batch", 32, int),
        lr=_get(cfg, "lr", 3e-5, float),
        seed=_get(cfg, "seed", 0, int),
        sigma_d=_get(cfg, "sigma_d", 0.5, float),
    )


def cmd_distill(cfg: dict, out: Path) -> int:
    started = time.time()
    teacher, meta = network.load_checkpoint(_get(cfg, "teacher"))
    dcfg = _distill_config(cfg)
    dataset = dataset_from_config(cfg) if dcfg.mode == SCM else None
    state, metrics = run_distillation(dcfg, teacher, dataset)
    network.save_checkpoint(
        out / "student.ckpt",
        state.theta,
        {"kind": "student", "mode": dcfg.mode, "seed": dcfg.seed,
         "sigma_d": dcfg.sigma_d, "teacher_meta": meta},
    )
    network.save_checkpoint(out / "weight_head.ckpt", state.phi, {"kind": "weight_head"})
    write_metrics_csv(metrics, out / "metrics.csv")
    write_manifest(out, cfg, state.counters, started)
    return 0


def cmd_sample(cfg: dict, out: Path) -> int:
    started = time.time()
    student, meta = network.load_checkpoint(_get(cfg, "student"))
    sigma_d = _get(cfg, "sigma_d", float(meta.get("sigma_d", 0.5)), float)
    steps = _get(cfg, "steps", 1, int)
    n = _get(cfg, "n", 1024, int)
    seed = _get(cfg, "seed", 0, int)
    rng = np.random.default_rng(seed)
    vocab = student["embed.cond"].shape[0]
    counters = ResourceCounters()
    rows = []
    if steps == 1:
        for i in range(n):
            y = int(rng.integers(vocab))
            z = rng.normal(0.0, sigma_d, size=2)
            x = one_step_sample(student, z, y, sigma_d, counters)
            rows.append({"sample": i, "x": repr(x[0]), "y": repr(x[1]), "condition": y})
    else:
        times = flow_euler_reference(steps, _get(cfg, "shift", 1.5, float)).times
        for i in range(n):
            y = int(rng.integers(vocab))
            x = multi_step_sample(student, times, y, rng, sigma_d, counters)
            rows.append({"sample": i, "x": repr(x[0]), "y": repr(x[1]), "condition": y})
    _write_rows(out / "samples.csv", ["sample", "x", "y", "condition"], rows)
    write_manifest(out, cfg, counters, started, {"nfe_per_sample": steps})
    return 0


def cmd_analyze_noise(cfg: dict, out: Path) -> int:
    started = time.time()
    teacher, meta = network.load_checkpoint(_get(cfg, "teacher"))
    sigma_d = _get(cfg, "sigma_d", float(meta.get("sigma_d", 0.5)), float)
    n_steps = _get(cfg, "n_steps", 32, int)
    n_traj = _get(cfg, "n_trajectories", 16, int)
    seed = _get(cfg, "seed", 0, int)
    rng = np.random.default_rng(seed)
    vocab = teacher["embed.cond"].shape[0]
    traj = flow_euler_reference(n_steps, _get(cfg, "shift", 1.5, float))
    rows = []
    for k in range(n_traj):
        y = int(rng.integers(vocab))
        z = rng.normal(0.0, sigma_d, size=2)
        for t, sim in equivalent_noise_curve(teacher, traj, z, y, sigma_d):
            rows.append({"trajectory": k, "t": repr(t), "cosine_similarity": repr(sim)})
    _write_rows(out / "noise_curve.csv", ["trajectory", "t", "cosine_similarity"], rows)
    write_manifest(out, cfg, None, started)
    return 0


def cmd_eval(cfg: dict, out: Path) -> int:
    started = time.time()
    student, meta = network.load_checkpoint(_get(cfg, "student"))
    dataset = dataset_from_config(cfg)
    sigma_d = _get(cfg, "sigma_d", float(meta.get("sigma_d", dataset.sigma_d)), float)
    n = _get(cfg, "n", 2048, int)
    projections = _get(cfg, "projections", 512, int)
    seed = _get(cfg, "seed", 0, int)
    rng = np.random.default_rng(seed)
    heldout, _ = dataset.sample(n, rng)
    samples = one_step_batch(student, n, rng, sigma_d)
    value = sliced_wasserstein(samples, heldout, projections, rng)
    _write_rows(
        out / "eval.csv",
        ["run", "iteration", "metric", "value"],
        [{"run": Path(_get(cfg, "student")).stem, "iteration": "", "metric": "one_step_sw", "value": repr(value)}],
    )
    write_manifest(out, cfg, None, started)
    return 0


def cmd_ablate(cfg: dict, out: Path) -> int:
    started = time.time()
    teacher, meta = network.load_checkpoint(_get(cfg, "teacher"))
    dataset = dataset_from_config(cfg)
    seeds = _ints(_get(cfg, "seeds", "0,1,2,3,4"))
    base = _distill_config(cfg)
    vary = _get(cfg, "vary", "scheme")
    if vary == "scheme":
        grid = [
            (tag, replace(base, scheme=replace(base.scheme, tag=tag)))
            for tag in ("Random", "LogitNormal", "ReferenceRoute")
        ]
    elif vary == "n_steps":
        values = _ints(_get(cfg, "values", "4,8,16"))
        grid = [(f"n{v}", replace(base, n_steps=v)) for v in values]
    elif vary == "r_f":
        values = _floats(_get(cfg, "values", "0.75,1.0"))
        grid = [
            (f"rf{v}", replace(base, r_schedule=replace(base.r_schedule, r_f=v)))
            for v in values
        ]
    elif vary == "mode":
        grid = [("tbcm", replace(base, mode=TBCM)), ("scm", replace(base, mode=SCM))]
    else:
        raise ConfigError(f"unknown ablation axis '{vary}'")
    heldout, _ = dataset.sample(_get(cfg, "eval_samples", 2048, int), np.random.default_rng(9999))
    summary, runs = ablation_harness(grid, seeds, teacher, dataset, heldout)
    _write_rows(out / "runs.csv", ["run", "seed", "metric", "value"], runs)
    _write_rows(out / "summary.csv", ["run", "seed", "metric", "value"], summary)
    write_manifest(out, cfg, None, started)
    return 0


COMMANDS = {
    "train-teacher": cmd_train_teacher,
    "distill": cmd_distill,
    "sample": cmd_sample,
    "analyze-noise": cmd_analyze_noise,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="trajdistill",
        description="2D consistency-distillation lab",
    )
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="flat key=value config file")
    parser.add_argument("--out", help="output directory (overrides the config)")
    parser.add_argument("--mode", help="distillation mode override (tbcm/scm)")
    parser.add_argument("--steps", type=int, help="step-count override")
    parser.add_argument("--seed", type=int, help="seed override")
    args = parser.parse_args(argv)
    try:
        cfg = parse_config(args.config)
        if args.mode is not None:
            cfg["mode"] = args.mode
        if args.steps is not None:
            cfg["steps"] = str(args.steps)
        if args.seed is not None:
            cfg["seed"] = str(args.seed)
        out = output_dir(cfg, args.out)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](cfg, out)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except Exception as err:
        print(f"runtime error: {type(err).__name__}: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
