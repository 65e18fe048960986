"""Few-step sampling from a distilled student.

A consistency student maps any (x_t, t) straight to a clean estimate.
One forward pass gives one-step generation; quality can be traded for
compute by re-noising the estimate to a smaller time and mapping again
(generate-then-renoise), one forward per scheduled time.

Run 01_teacher_pretraining.py first, then:
    python3 demos/05_multi_step_sampling.py
"""

import numpy as np

from trajdistill import network
from trajdistill.counters import ResourceCounters
from trajdistill.distill import DistillConfig, RSchedule, run_distillation
from trajdistill.evaluate import multi_step_sample, one_step_batch, sliced_wasserstein
from trajdistill.teacher import Dataset2D
from trajdistill.trajectory import flow_euler_reference

SIGMA_D = 0.5

teacher, _ = network.load_checkpoint("/tmp/demo_teacher.ckpt")
dataset = Dataset2D("GaussianMixture8", sigma_d=SIGMA_D)
heldout, _ = dataset.sample(2048, np.random.default_rng(9999))

print("distilling a quick student (1500 steps) ...")
cfg = DistillConfig(
    mode="TBCM", n_steps=8, batch=32, steps=1500, lr=3e-5, sigma_d=SIGMA_D,
    r_schedule=RSchedule(h=400, mode="WarmupCooldown", s_r=800, t_r=400, r_f=0.75),
)
state, _ = run_distillation(cfg, teacher)
student = state.theta

samples = one_step_batch(student, 2048, np.random.default_rng(5), SIGMA_D)
sw = sliced_wasserstein(samples, heldout, 256, np.random.default_rng(6))
print(f"one-step generation:  SW = {sw:.4f}  (1 forward per sample)")

for steps in (2, 4):
    times = flow_euler_reference(steps, 1.5).times
    rng = np.random.default_rng(7)
    counters = ResourceCounters()
    out = np.stack([
        multi_step_sample(student, times, int(rng.integers(8)), rng, SIGMA_D, counters)
        for _ in range(2048)
    ])
    sw = sliced_wasserstein(out, heldout, 256, np.random.default_rng(6))
    per = counters.teacher_nfe // 2048
    print(f"{steps}-step generation:   SW = {sw:.4f}  ({per} forwards per sample)")
