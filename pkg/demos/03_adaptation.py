# Fixed conservative gains vs. online adaptation with rollout-scored candidates
import numpy as np

from cbfadapt import AdaptationConfig, DoubleIntegrator, IccbfSpec, adapt_run, simulate, time_to_reach, wall_barrier

di = DoubleIntegrator()
spec0 = IccbfSpec(di, wall_barrier(1.0), (0.5, 0.5))
goal, x0, gains = np.array([2.0, 0.0]), np.zeros(2), (1.0, 1.5)
target = np.array([1.0, 0.0])  # the wall-limited goal

fixed = simulate(spec0, goal, x0, 10.0, gains)
print(f"fixed (0.5, 0.5): time to p=1 +/- 0.1: {time_to_reach(di, fixed, target, 0.1)} s, min b_0 {fixed.min_b0:.2e}")

# ensemble=None scores candidates with the validator directly
traj, log = adapt_run(di, spec0, None, goal, x0, 10.0, AdaptationConfig(seed=0), gains)
print(f"adaptive:         time to p=1 +/- 0.1: {time_to_reach(di, traj, target, 0.1)} s, min b_0 {traj.min_b0:.2e}")
print(f"{len(log.events)} events, {log.parameter_changes()} parameter changes")
for ev in log.events[:8]:
    print(f"  t={ev['t']:.1f}  {ev['source']:<16} k={np.round(ev['chosen'], 3)}  accepted {ev['accepted']}/{len(ev['candidates'])}")

# states the initial gains would call unsafe but the adopted gains certify
outside = [s for s in log.steps if spec0.evaluate(s["state"]).inner_margin < 0 and s["inner_margin"] >= 0]
print(f"{len(outside)} steps outside the initial inner safe set, inside the adopted one")
