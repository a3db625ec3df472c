# A PD controller chasing a goal behind the wall, with and without the filter
import numpy as np

from cbfadapt import DoubleIntegrator, IccbfSpec, simulate, step, wall_barrier
from cbfadapt.qp_filter import nominal_pd

di = DoubleIntegrator()
goal = np.array([2.0, 0.0])
gains = (1.0, 1.5)

# unfiltered: the PD law drives straight through p = 1
x = np.zeros(2)
worst = np.inf
for _ in range(1000):
    x = step(di, x, nominal_pd(di, goal, x, gains))
    worst = min(worst, 1.0 - x[0])
print(f"unfiltered: min b_0 = {worst:+.3f}")

for k in [(0.5, 0.5), (1.0, 1.0), (3.0, 3.0)]:
    spec = IccbfSpec(di, wall_barrier(1.0), k)
    traj = simulate(spec, goal, [0.0, 0.0], 10.0, gains)
    print(
        f"filtered k={k}: min b_0 = {traj.min_b0:+.2e}, final p = {traj.states[-1, 0]:.3f}, "
        f"filter active {100 * traj.filter_active_fraction:.0f}% of steps"
    )
