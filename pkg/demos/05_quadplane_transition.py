# Quadplane hover-to-cruise transition with an altitude floor at 3 m
from pathlib import Path

import numpy as np

from cbfadapt import adapt_run, harness, simulate, time_to_reach

cfg = harness.load_config(Path(__file__).resolve().parents[1] / "configs" / "quadplane.toml")
print(f"model {cfg.model}, floor barrier gains {cfg.spec.params.coeffs}, extra barriers {len(cfg.extra_specs)}")

fixed = simulate(cfg.spec, cfg.goal, cfg.x0, cfg.duration, cfg.gains, cfg.dt, cfg.extra_specs)
traj, log = adapt_run(cfg.model, cfg.spec, None, cfg.goal, cfg.x0, cfg.duration, cfg.adaptation, cfg.gains, cfg.extra_specs)

for name, tr in (("fixed", fixed), ("adaptive", traj)):
    t = time_to_reach(cfg.model, tr, cfg.reach_target, cfg.reach_tolerance)
    z, vx = tr.states[:, 1], tr.states[:, 2]
    print(f"{name:>8}: min altitude {z.min():.2f} m, final vx {vx[-1]:.2f} m/s, reached cruise at {t} s")

print(f"adaptive run changed gains {log.parameter_changes()} times:")
for ev in log.events[::2]:
    print(f"  t={ev['t']:.1f}  k={np.round(ev['chosen'], 3)}  z={log.steps[int(round(ev['t'] / cfg.dt))]['state'][1]:.2f}")
