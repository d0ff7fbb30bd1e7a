"""Dev scratch: can the head recover the density ratio?"""
import time

import numpy as np

from repweight.repnet import TrainConfig, train
from repweight.tasks import TaskFamily, WeightingTask
from repweight.oracle import make_synthetic_dgp
from repweight.tasks import build_ate_tasks

# --- discrete 1-covariate DGP: support {0,1}, p=(.5,.5), q=(.25,.75), w*=(0.5,1.5)
rng = np.random.default_rng(7)
n = 2000
xs = rng.choice([0.0, 1.0], size=n, p=[0.5, 0.5])[:, None]
xt = rng.choice([0.0, 1.0], size=n, p=[0.25, 0.75])[:, None]
family = TaskFamily((WeightingTask(index=0, source_x=xs, target_x=xt),))

cfg = TrainConfig(rng_seed=3)
t0 = time.time()
net = train(family, cfg)
w_star = np.where(xs.ravel() == 0.0, 0.5, 1.5)
head = net.head_values(xs, 0)
err = np.sqrt(np.mean((head - w_star) ** 2))
print(f"discrete: rmse={err:.4f} epochs={len(net.history['val_loss'])} "
      f"best={net.history['best_epoch']} time={time.time()-t0:.1f}s")

# --- P = Q => head should be ~1
xs2 = rng.standard_normal((1000, 3))
xt2 = rng.standard_normal((1000, 3))
fam2 = TaskFamily((WeightingTask(index=0, source_x=xs2, target_x=xt2),))
net2 = train(fam2, TrainConfig(rng_seed=5))
head2 = net2.head_values(xs2, 0)
print(f"P=Q: mean head = {head2.mean():.4f}")

# --- synthetic ATE benchmark, single seed probe
for seed in range(3):
    ds, orc = make_synthetic_dgp(d=10, n_source=4000, confounder_dim=2, seed=seed)
    fam = build_ate_tasks(ds).masked()
    t0 = time.time()
    net3 = train(fam, TrainConfig(rng_seed=seed + 1000))
    errs = []
    for task in fam:
        w_true = orc.density_ratio(task.source_x, int(task.index))
        head3 = net3.head_values(task.source_x, task.index)
        errs.append(np.sqrt(np.mean((head3 - w_true) ** 2)))
    joint = float(np.sqrt(np.mean(np.array(errs) ** 2)))
    print(
        f"seed {seed}: per-arm rmse={[f'{e:.3f}' for e in errs]} joint={joint:.3f} "
        f"epochs={len(net3.history['val_loss'])} best={net3.history['best_epoch']} "
        f"time={time.time()-t0:.1f}s arms={[t.n_source for t in fam]}"
    )
