# Barrier stack and input constraint for a double integrator behind a wall at p = 1
import numpy as np

from cbfadapt import DoubleIntegrator, IccbfSpec, wall_barrier
from cbfadapt.iccbf import eval_constraint, kcand_feasible

di = DoubleIntegrator(u_max=1.0)
spec = IccbfSpec(di, wall_barrier(1.0), (1.0, 1.0))

# b_0 = 1 - p, b_1 = -v + k1 (1 - p); both non-negative means we are in C*
for x in ([0.0, 0.0], [0.5, 0.5], [0.8, 0.5]):
    ev = spec.evaluate(x)
    print(f"x={x}  stack={np.round(ev.stack, 6)}  inner margin={ev.inner_margin:+.3f}")

# b_2 is affine in u: -u - (k1 + k2) v + k1 k2 (1 - p)
x = [0.5, 0.5]
for u in (-1.0, -0.5, 0.0, 1.0):
    print(f"b_2({x}, u={u:+.1f}) = {eval_constraint(spec, x, [u]):+.3f}")

# with a huge second gain the constraint cannot be met by any bounded input
bad = IccbfSpec(di, wall_barrier(1.0), (2.0, 100.0))
ok, margin = kcand_feasible(bad, [0.0, 2.0])
print(f"gains (2, 100) at x=(0, 2): K_cand non-empty={ok}, sup_u b_2={margin:.3f}")

# sweep the first gain on the boundary of C_1 to see where feasibility is lost
for k1 in (0.5, 1.0, 1.5, 2.0):
    s = IccbfSpec(di, wall_barrier(1.0), (k1, 100.0))
    p = 0.0
    v = k1 * (1 - p)  # b_1 = 0
    print(f"k1={k1:.1f}: margin on boundary = {kcand_feasible(s, [p, v])[1]:+.3f}")
