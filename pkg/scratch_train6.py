import time

import numpy as np

from repweight.repnet import RepNet, TrainConfig, train
from repweight.tasks import build_ate_tasks
from scratch_train4 import make


def run(gscale, arch, kw, seeds=6):
    rmses = []
    t0 = time.time()
    for seed in range(seeds):
        ds, orc = make(gscale, d=10, n=4000, c=2, seed=seed)
        fam = build_ate_tasks(ds).masked()
        net = train(fam, TrainConfig(rng_seed=seed + 1000, **kw), **arch)
        errs = []
        for task in fam:
            w_true = orc.density_ratio(task.source_x, int(task.index))
            head = net.head_values(task.source_x, task.index)
            errs.append(np.mean((head - w_true) ** 2))
        rmses.append(float(np.sqrt(np.mean(errs))))
    return rmses, time.time() - t0


# pure-noise floor: nearly no confounding, the head should be ~ constant 1
for arch in (dict(), dict(trunk_hidden=(64,), head_hidden=(32,)), dict(trunk_hidden=(32,), head_hidden=(16,), rep_dim=10)):
    rmses, dt = run(1e-6, arch, dict(batch_size=256, learning_rate=0.01, patience=3))
    print(f"noise floor arch={arch}: {[f'{e:.3f}' for e in rmses]} median={np.median(rmses):.3f} ({dt:.1f}s)")

for gscale in (0.6, 0.5):
    for arch in (dict(trunk_hidden=(64,), head_hidden=(32,)), dict(trunk_hidden=(32,), head_hidden=(16,))):
        rmses, dt = run(gscale, arch, dict(batch_size=256, learning_rate=0.01, patience=3))
        print(f"g={gscale} arch={arch}: {[f'{e:.3f}' for e in rmses]} median={np.median(rmses):.3f} ({dt:.1f}s)")
