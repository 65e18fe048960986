"""The equivalent-noise diagnostic: forward noising vs backward generation.

The equivalent noise of a state x_t with clean estimate x0_hat is the
noise that would forward-produce x_t, (x_t - cos(t) x0_hat) / sin(t).
Along forward noising it is constant (similarity to the initial draw
stays at 1); along a backward teacher rollout it drifts, which is the
observation motivating trajectory-space distillation.

Run 01_teacher_pretraining.py first, then:
    python3 demos/02_equivalent_noise.py
"""

import numpy as np

from trajdistill import network
from trajdistill.evaluate import equivalent_noise_curve
from trajdistill.schedules import equivalent_noise
from trajdistill.trajectory import flow_euler_reference

SIGMA_D = 0.5
teacher, _ = network.load_checkpoint("/tmp/demo_teacher.ckpt")

rng = np.random.default_rng(0)
x0 = rng.normal(0.0, SIGMA_D, size=2)
z = rng.normal(0.0, SIGMA_D, size=2)

print("forward noising (fixed x0, fixed z):")
for t in (1.5, 1.0, 0.5, 0.1):
    x_t = np.cos(t) * x0 + np.sin(t) * z
    eq = equivalent_noise(x_t, x0, t)
    sim = eq @ z / (np.linalg.norm(eq) * np.linalg.norm(z))
    print(f"  t = {t:.2f}: similarity to initial z = {sim:+.6f}")

print("\nbackward generation (teacher rollout, 32 steps), 8 trajectories:")
traj = flow_euler_reference(32, 1.5)
ends = []
for k in range(8):
    z = rng.normal(0.0, SIGMA_D, size=2)
    curve = equivalent_noise_curve(teacher, traj, z, int(rng.integers(8)), SIGMA_D)
    ends.append(curve[-1][1])
    marks = "  ".join(f"{t:.2f}:{s:+.4f}" for t, s in curve[::8])
    print(f"  trajectory {k}: {marks}  ...  end {curve[-1][1]:+.3f}")
print(f"\nmean end similarity: {np.mean(ends):.3f} (forward process would be 1.0)")
