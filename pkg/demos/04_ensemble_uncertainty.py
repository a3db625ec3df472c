# Epistemic vs aleatoric variance of the probabilistic ensemble on a toy problem
import numpy as np

from cbfadapt import penn
from cbfadapt.validator import Dataset

rng = np.random.default_rng(0)
x = rng.uniform(-1, 1, 1000)
noise = 0.05 + 0.2 * (x > 0)  # noisier on the right half
y = np.stack([np.sin(3 * x) + noise * rng.normal(size=x.size), x**2 + 0.05 * rng.normal(size=x.size)], axis=1)

model = penn.train(Dataset.from_arrays(x[:, None], y), epochs=60, members=5, hidden=(32, 32), seed=0)
print("member training NLL, first -> last epoch:")
for h in model.history:
    print(f"  {h[0]:+.3f} -> {h[-1]:+.3f}")

probe = np.array([-0.5, 0.5, 2.0, 4.0])
pred = penn.predict(model, probe[:, None])
print("   x   mean   aleatoric  epistemic   (first target)")
for xi, m, a, e in zip(probe, pred.mean[:, 0], pred.aleatoric_var[:, 0], pred.epistemic_var[:, 0]):
    print(f"{xi:+.1f}  {m:+.3f}   {a:.4f}     {e:.4f}")
