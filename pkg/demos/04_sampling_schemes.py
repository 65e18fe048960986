"""What the three trajectory-time sampling schemes actually draw.

Each distillation trajectory is a strictly decreasing list of times
starting at pi/2. Random draws uniform interior times; LogitNormal
concentrates where the pretraining proposal lives; ReferenceRoute
jitters around the shifted Flow-Euler inference grid, staying inside
per-step partitions so the draw always looks like a plausible
inference-time discretization.

Run:  python3 demos/04_sampling_schemes.py
"""

import numpy as np

from trajdistill.trajectory import (
    TimestepScheme,
    flow_euler_reference,
    sample_trajectory_times,
)

SIGMA_D = 0.5
N = 12
WIDTH = 64


def bar(times):
    """Crude text histogram of one trajectory over [0, pi/2]."""
    cells = [" "] * WIDTH
    for t in times:
        cells[min(WIDTH - 1, int(t / (np.pi / 2) * WIDTH))] = "|"
    return "".join(cells)


rng = np.random.default_rng(0)
print(f"{'scheme':16s} 0 {'.' * (WIDTH - 4)} pi/2")
for tag in ("Random", "LogitNormal", "ReferenceRoute"):
    scheme = TimestepScheme(tag=tag)
    for rep in range(3):
        traj = sample_trajectory_times(scheme, N, rng, SIGMA_D)
        label = tag if rep == 0 else ""
        print(f"{label:16s} [{bar(traj.times)}]")

ref = flow_euler_reference(N, 1.5)
print(f"{'reference grid':16s} [{bar(ref.times)}]")
print(f"\nreference times (shift 1.5): {np.round(ref.times, 3)}")
