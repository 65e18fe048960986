"""End-to-end acceptance battery.

Ten numbered checks covering derivative correctness, coordinate
transforms, exact rollouts, the equivalent-noise diagnostic, the loss
fixed point, gradient checks, end-to-end distillation quality,
directional hyperparameter comparisons, resource accounting, and
bit-level reproducibility. Each check prints a single PASS line; the
heavier checks share one pretrained teacher and memoize distillation
runs across checks.
"""

import hashlib
import math
import time
from dataclasses import replace

import numpy as np
import pytest

from trajdistill import cli, engine, network
from trajdistill.counters import ResourceCounters
from trajdistill.distill import (
    DistillConfig,
    RSchedule,
    run_distillation,
    scm_loss,
    normalize_tangent,
    tangent_g,
)
from trajdistill.engine import finite_diff_directional, jvp
from trajdistill.evaluate import (
    equivalent_noise_curve,
    one_step_metric,
    sliced_wasserstein,
    teacher_rollout_samples,
)
from trajdistill.schedules import (
    HALF_PI,
    equivalent_noise,
    fm_scale_factor,
    t_fm_from_trig,
    t_trig_from_fm,
)
from trajdistill.teacher import (
    Dataset2D,
    TeacherConfig,
    analytic_velocity_pointmass,
    train_teacher,
)
from trajdistill.trajectory import TimestepScheme, Trajectory, rollout

SIGMA_D = 0.5
SEEDS = (0, 1, 2, 3, 4)
COOLDOWN = RSchedule(h=400, mode="WarmupCooldown", s_r=2000, t_r=1000, r_f=0.75)


def report(num: int, name: str, ok: bool, detail: str = ""):
    status = "PASS" if ok else "FAIL"
    print(f"[criterion {num:2d}] {status}: {name}" + (f" ({detail})" if detail else ""))
    assert ok, f"criterion {num} failed: {name} {detail}"


# ---------------------------------------------------------------------------
# Shared heavy fixtures
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def gm8(tmp_path_factory):
    """One pretrained GaussianMixture8 teacher plus held-out data."""
    dataset = Dataset2D("GaussianMixture8", sigma_d=SIGMA_D)
    started = time.monotonic()
    params, _ = train_teacher(
        TeacherConfig(dataset=dataset, steps=20_000, batch=256, seed=0)
    )
    train_time = time.monotonic() - started
    heldout, _ = dataset.sample(2048, np.random.default_rng(9999))
    return {
        "teacher": params,
        "dataset": dataset,
        "heldout": heldout,
        "train_time": train_time,
        "runs": {},  # memoized distillation results keyed by config repr
    }


def distilled_metrics(gm8, cfg: DistillConfig) -> list:
    """One-step metric per seed for a config, memoized across checks."""
    key = repr(replace(cfg, seed=0))
    if key not in gm8["runs"]:
        values = []
        for seed in SEEDS:
            state, _ = run_distillation(
                replace(cfg, seed=seed), gm8["teacher"], gm8["dataset"]
            )
            values.append(
                one_step_metric(state.theta, gm8["heldout"], SIGMA_D)
            )
        gm8["runs"][key] = values
    return gm8["runs"][key]


TBCM_REFERENCE = DistillConfig(
    mode="TBCM",
    n_steps=8,
    batch=32,
    steps=4000,
    lr=3e-5,
    sigma_d=SIGMA_D,
    r_schedule=COOLDOWN,
)


# ---------------------------------------------------------------------------
# 1. JVP correctness
# ---------------------------------------------------------------------------


def test_criterion_01_jvp_vs_finite_difference():
    rng = np.random.default_rng(42)

    def f(p, x, t, y):
        return network.velocity_forward(p, x, t, y=y)

    started = time.monotonic()
    worst = 0.0
    for _ in range(100):
        params = network.init_velocity_net(network.VelocityNetConfig(), rng)
        params["net.out.W"] = rng.standard_normal(
            params["net.out.W"].shape
        ) * np.sqrt(1.0 / 128.0)
        x = rng.standard_normal(2)
        t = rng.uniform(0.05, HALF_PI - 0.05)
        v = rng.standard_normal(2)
        y = int(rng.integers(8))
        _, deriv = jvp(f, params, x, t, y, v, 1.0)
        fd = finite_diff_directional(f, params, x, t, y, v, 1.0, 1e-5)
        rel = np.max(np.abs(deriv - fd) / (np.abs(deriv) + 1e-12))
        worst = max(worst, float(rel))
    elapsed = time.monotonic() - started
    report(
        1,
        "directional derivative matches central finite differences",
        worst <= 1e-5 and elapsed <= 10.0,
        f"worst rel {worst:.2e}, {elapsed:.1f}s",
    )


# ---------------------------------------------------------------------------
# 2. Time-transform round trips
# ---------------------------------------------------------------------------


def test_criterion_02_transform_round_trips():
    grid = np.linspace(0.0, HALF_PI, 1000)
    err = max(abs(t_trig_from_fm(t_fm_from_trig(t)) - t) for t in grid)
    factor_err = max(
        abs(fm_scale_factor(0.0) - 1.0),
        abs(fm_scale_factor(0.5) - math.sqrt(0.5)),
        abs(fm_scale_factor(1.0) - 1.0),
    )
    report(
        2,
        "time maps invert on 1000 points; scale factor extremes exact",
        err <= 1e-12 and factor_err <= 1e-15,
        f"round-trip {err:.2e}, factor {factor_err:.2e}",
    )


# ---------------------------------------------------------------------------
# 3. Rotation-step exactness
# ---------------------------------------------------------------------------


def test_criterion_03_rotation_step_exactness():
    x_star = np.array([0.8, -0.4])

    def teacher(x, t, y):
        return analytic_velocity_pointmass(x, t, x_star, SIGMA_D)

    rng = np.random.default_rng(7)
    started = time.monotonic()
    worst = 0.0
    for n in range(1, 65):
        z = rng.normal(0.0, SIGMA_D, size=2)
        if n == 1:
            times = np.array([HALF_PI])
        else:
            interior = np.sort(rng.uniform(0.01, HALF_PI - 1e-3, size=n - 1))[::-1]
            times = np.concatenate([[HALF_PI], np.unique(interior)[::-1]])
        traj = Trajectory(times)
        batch = rollout(teacher, z, 0, traj, SIGMA_D)
        expected = (
            np.cos(traj.times)[:, None] * x_star + np.sin(traj.times)[:, None] * z
        )
        worst = max(worst, float(np.max(np.abs(batch.states - expected))))
    elapsed = time.monotonic() - started
    report(
        3,
        "backward rollout states lie on the closed-form trajectory",
        worst <= 1e-9 and elapsed <= 5.0,
        f"worst dev {worst:.2e}, lengths 1-64, {elapsed:.1f}s",
    )


# ---------------------------------------------------------------------------
# 4. Equivalent-noise identities
# ---------------------------------------------------------------------------


def test_criterion_04_equivalent_noise(gm8):
    started = time.monotonic()
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(200):
        x0, z = rng.standard_normal((2, 2))
        t = rng.uniform(0.05, HALF_PI)
        x_t = math.cos(t) * x0 + math.sin(t) * z
        worst = max(worst, float(np.max(np.abs(equivalent_noise(x_t, x0, t) - z))))

    from trajdistill.trajectory import flow_euler_reference

    traj = flow_euler_reference(32, 1.5)
    rng = np.random.default_rng(123)
    firsts, ends = [], []
    for _ in range(64):
        z = rng.normal(0.0, SIGMA_D, size=2)
        curve = equivalent_noise_curve(
            gm8["teacher"], traj, z, int(rng.integers(8)), SIGMA_D
        )
        firsts.append(curve[0][1])
        ends.append(curve[-1][1])
    mean_end = float(np.mean(ends))
    elapsed = time.monotonic() - started + gm8["train_time"]
    report(
        4,
        "forward noising reproduces z; backward similarity decays",
        worst <= 1e-14
        and all(f == 1.0 for f in firsts)
        and mean_end < 0.9  # pinned after the first oracle run (observed 0.713)
        and elapsed <= 120.0,
        f"forward dev {worst:.1e}, mean end sim {mean_end:.3f}, {elapsed:.0f}s",
    )


# ---------------------------------------------------------------------------
# 5. Loss fixed point and the r = 1 identity
# ---------------------------------------------------------------------------


def test_criterion_05_loss_fixed_point():
    x_star = np.array([0.8, -0.4])
    rng = np.random.default_rng(13)
    worst_g, worst_sq = 0.0, 0.0
    for _ in range(100):
        t = rng.uniform(0.05, HALF_PI)
        z = rng.normal(0.0, SIGMA_D, size=2)
        x_t = math.cos(t) * x_star + math.sin(t) * z
        f_star = analytic_velocity_pointmass(x_t, t, x_star, SIGMA_D)
        dxdt = SIGMA_D * f_star
        dfdt = -x_t / SIGMA_D  # exact total derivative at the solution
        g = tangent_g(f_star, dxdt, x_t, dfdt, t, 1.0, SIGMA_D)
        g_hat = normalize_tangent(g[None, :], 0.1)[0]
        # student == detached view at the solution: residual is -g_hat
        worst_g = max(worst_g, float(np.linalg.norm(g)))
        worst_sq = max(worst_sq, float(np.sum((f_star - f_star - g_hat) ** 2)))

    worst_id = 0.0
    for _ in range(200):
        t = rng.uniform(0.01, HALF_PI - 0.01)
        x_t, f, dxdt, dfdt = rng.standard_normal((4, 2))
        g = tangent_g(f, dxdt, x_t, dfdt, t, 1.0, SIGMA_D)
        c, s = math.cos(t), math.sin(t)
        dmap = -s * x_t + c * dxdt - c * SIGMA_D * f - s * SIGMA_D * dfdt
        worst_id = max(worst_id, float(np.max(np.abs(g - c * dmap))))
    report(
        5,
        "tangent vanishes at the exact solution; r=1 derivative identity",
        worst_g <= 1e-9 and worst_sq <= 1e-9 and worst_id <= 1e-12,
        f"|g| {worst_g:.1e}, sq {worst_sq:.1e}, identity {worst_id:.1e}",
    )


# ---------------------------------------------------------------------------
# 6. Gradient correctness of the distillation loss
# ---------------------------------------------------------------------------


def test_criterion_06_loss_gradients():
    rng = np.random.default_rng(17)
    cfg = network.VelocityNetConfig(hidden_dims=(8, 8), num_conditions=2)
    theta = network.init_velocity_net(cfg, rng)
    theta["net.out.W"] = rng.standard_normal(theta["net.out.W"].shape) * 0.3
    phi = network.init_weight_head(network.AdaptiveWeightConfig(hidden_dim=8), rng)
    phi["w.out.W"] = rng.standard_normal(phi["w.out.W"].shape) * 0.3
    theta_minus = theta.copy()

    x_star = np.array([0.8, -0.4])

    def teacher(x, t, y):
        return analytic_velocity_pointmass(x, t, x_star, SIGMA_D)

    z = rng.normal(0.0, SIGMA_D, size=2)
    traj = Trajectory(np.array([HALF_PI, 0.7]))
    batch = rollout(teacher, z, 0, traj, SIGMA_D)
    r, c = 0.6, 0.1

    def value(th, ph):
        return scm_loss(th, ph, batch, r, c, SIGMA_D, theta_minus=theta_minus)[0]

    _, g_theta, g_phi = scm_loss(theta, phi, batch, r, c, SIGMA_D, theta_minus=theta_minus)

    eps = 1e-6
    worst = 0.0
    rng2 = np.random.default_rng(18)
    for store, grads, is_theta in ((theta, g_theta, True), (phi, g_phi, False)):
        for name in store.names():
            flat = store[name].reshape(-1)
            picks = rng2.choice(len(flat), size=min(4, len(flat)), replace=False)
            for idx in picks:
                hi, lo = store.copy(), store.copy()
                a = hi[name].reshape(-1).copy()
                a[idx] += eps
                hi[name] = a.reshape(store[name].shape)
                a = lo[name].reshape(-1).copy()
                a[idx] -= eps
                lo[name] = a.reshape(store[name].shape)
                if is_theta:
                    fd = (value(hi, phi) - value(lo, phi)) / (2 * eps)
                else:
                    fd = (value(theta, hi) - value(theta, lo)) / (2 * eps)
                ad = grads[name].reshape(-1)[idx]
                worst = max(worst, abs(ad - fd) / (abs(fd) + 1e-8))
    report(
        6,
        "loss gradients match central finite differences",
        worst <= 1e-5,
        f"worst rel {worst:.2e}",
    )


# ---------------------------------------------------------------------------
# 7. End-to-end distillation quality
# ---------------------------------------------------------------------------


def test_criterion_07_end_to_end_distillation(gm8):
    started = time.monotonic()
    rng = np.random.default_rng(2024)
    baseline_samples = teacher_rollout_samples(gm8["teacher"], 2048, 32, rng, SIGMA_D)
    baseline = sliced_wasserstein(baseline_samples, gm8["heldout"], 512, rng)

    values = distilled_metrics(gm8, TBCM_REFERENCE)
    median = float(np.median(values))
    elapsed = time.monotonic() - started + gm8["train_time"]
    report(
        7,
        "one-step student within 2x of the 32-step teacher baseline",
        median <= 2.0 * baseline and elapsed <= 900.0,
        f"median {median:.4f} vs baseline {baseline:.4f} "
        f"(ratio {median / baseline:.2f}), {elapsed:.0f}s",
    )


# ---------------------------------------------------------------------------
# 8. Directional comparisons
# ---------------------------------------------------------------------------


def test_criterion_08_directional_orderings(gm8):
    started = time.monotonic()
    tie = 1.05  # ties allowed within 5% relative

    def median_for(cfg):
        return float(np.median(distilled_metrics(gm8, cfg)))

    wide = replace(TBCM_REFERENCE, n_steps=12, batch=48)
    by_scheme = {
        tag: median_for(replace(wide, scheme=TimestepScheme(tag=tag)))
        for tag in ("Random", "LogitNormal", "ReferenceRoute")
    }
    ok_scheme = (
        by_scheme["ReferenceRoute"] <= tie * by_scheme["LogitNormal"]
        and by_scheme["LogitNormal"] <= tie * by_scheme["Random"]
    )

    by_n = {
        n: median_for(replace(TBCM_REFERENCE, n_steps=n, batch=48))
        for n in (4, 8, 16)
    }
    ok_n = by_n[4] * tie >= by_n[8] and by_n[8] * tie >= by_n[16]

    by_rf = {
        rf: median_for(
            replace(TBCM_REFERENCE, r_schedule=replace(COOLDOWN, r_f=rf))
        )
        for rf in (0.75, 1.0)
    }
    ok_rf = by_rf[0.75] <= tie * by_rf[1.0]

    tbcm = median_for(TBCM_REFERENCE)
    scm = median_for(replace(TBCM_REFERENCE, mode="SCM"))
    ok_mode = tbcm <= tie * scm

    elapsed = time.monotonic() - started
    report(
        8,
        "scheme / step-count / r_f / sample-space orderings",
        ok_scheme and ok_n and ok_rf and ok_mode and elapsed <= 7200.0,
        f"scheme {by_scheme}, N {by_n}, r_f {by_rf}, "
        f"tbcm {tbcm:.4f} vs scm {scm:.4f}, {elapsed:.0f}s",
    )


# ---------------------------------------------------------------------------
# 9. Resource counters
# ---------------------------------------------------------------------------


def test_criterion_09_resource_counters(gm8):
    steps, batch, n = 25, 32, 8
    tb_cfg = replace(TBCM_REFERENCE, steps=steps)
    tb, _ = run_distillation(tb_cfg, gm8["teacher"])
    sc, _ = run_distillation(
        replace(tb_cfg, mode="SCM"), gm8["teacher"], gm8["dataset"]
    )
    ok = (
        tb.counters.optimizer_samples == sc.counters.optimizer_samples == steps * batch
        and tb.counters.data_encoder_calls == 0
        and sc.counters.data_encoder_calls == steps * batch
        and tb.counters.cond_embeds * n == sc.counters.cond_embeds
        and tb.counters.teacher_nfe == sc.counters.teacher_nfe == steps * batch
    )
    report(
        9,
        "conditioning amortized 1/N; no data encoding; equal teacher cost",
        ok,
        f"tbcm {tb.counters.as_dict()}, scm {sc.counters.as_dict()}",
    )


# ---------------------------------------------------------------------------
# 10. Determinism
# ---------------------------------------------------------------------------


def test_criterion_10_determinism(tmp_path):
    teacher_out = tmp_path / "teacher"
    (tmp_path / "teacher.cfg").write_text(
        "dataset = PointMass\nsigma_d = 0.5\nsteps = 200\nbatch = 64\n"
        f"hidden = 16,16\nout = {teacher_out}\n"
    )
    assert cli.main(["train-teacher", "--config", str(tmp_path / "teacher.cfg")]) == 0

    digests = []
    for rep in ("a", "b"):
        out = tmp_path / f"run_{rep}"
        cfg = tmp_path / f"run_{rep}.cfg"
        cfg.write_text(
            f"teacher = {teacher_out}/teacher.ckpt\nmode = tbcm\nn_steps = 4\n"
            f"batch = 8\nsteps = 20\nseed = 11\nsigma_d = 0.5\nout = {out}\n"
        )
        assert cli.main(["distill", "--config", str(cfg)]) == 0
        digests.append(
            tuple(
                hashlib.sha256((out / name).read_bytes()).hexdigest()
                for name in ("metrics.csv", "student.ckpt", "weight_head.ckpt")
            )
        )
    report(
        10,
        "repeated (config, seed) runs are byte-identical",
        digests[0] == digests[1],
    )
