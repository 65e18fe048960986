"""Distill one-step students in both sample spaces and compare costs.

The trajectory-space path harvests every state of a backward teacher
rollout as a training sample, so one condition-embedding call serves a
whole trajectory and no data samples are ever drawn. The diffusion-space
baseline forward-noises dataset draws, paying per-sample conditioning
and data-encoding costs. Both see the same number of optimizer samples.

Run 01_teacher_pretraining.py first, then:
    python3 demos/03_distill_tbcm_vs_scm.py
"""

import numpy as np

from trajdistill import network
from trajdistill.distill import DistillConfig, RSchedule, run_distillation
from trajdistill.evaluate import one_step_metric
from trajdistill.teacher import Dataset2D

SIGMA_D = 0.5
STEPS = 1500

teacher, _ = network.load_checkpoint("/tmp/demo_teacher.ckpt")
dataset = Dataset2D("GaussianMixture8", sigma_d=SIGMA_D)
heldout, _ = dataset.sample(2048, np.random.default_rng(9999))
cooldown = RSchedule(h=400, mode="WarmupCooldown", s_r=800, t_r=400, r_f=0.75)

for mode in ("TBCM", "SCM"):
    cfg = DistillConfig(
        mode=mode, n_steps=8, batch=32, steps=STEPS, lr=3e-5,
        sigma_d=SIGMA_D, r_schedule=cooldown, seed=0,
    )
    state, _ = run_distillation(cfg, teacher, dataset)
    sw = one_step_metric(state.theta, heldout, SIGMA_D)
    c = state.counters
    print(f"{mode}:")
    print(f"  one-step sliced-Wasserstein: {sw:.4f}")
    print(f"  teacher forwards: {c.teacher_nfe}, condition embeds: {c.cond_embeds}, "
          f"data encodes: {c.data_encoder_calls}, optimizer samples: {c.optimizer_samples}")
