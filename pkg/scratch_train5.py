import time

import numpy as np

from repweight.repnet import TrainConfig, train
from repweight.tasks import build_ate_tasks
from scratch_train4 import make

GSCALE = 0.6

grids = [
    dict(batch_size=256, learning_rate=0.01, patience=3),
    dict(batch_size=256, learning_rate=0.005, patience=3),
    dict(batch_size=512, learning_rate=0.005, patience=3),
    dict(batch_size=512, learning_rate=0.003, patience=5),
    dict(batch_size=1024, learning_rate=0.003, patience=5),
    dict(batch_size=None, learning_rate=0.01, patience=10),
    dict(batch_size=None, learning_rate=0.03, patience=10),
]

for kw in grids:
    rmses = []
    t0 = time.time()
    for seed in range(6):
        ds, orc = make(GSCALE, d=10, n=4000, c=2, seed=seed)
        fam = build_ate_tasks(ds).masked()
        net = train(fam, TrainConfig(rng_seed=seed + 1000, **kw))
        errs = []
        for task in fam:
            w_true = orc.density_ratio(task.source_x, int(task.index))
            head = net.head_values(task.source_x, task.index)
            errs.append(np.mean((head - w_true) ** 2))
        rmses.append(float(np.sqrt(np.mean(errs))))
    print(
        f"{kw}: rmse {[f'{e:.3f}' for e in rmses]} median={np.median(rmses):.3f} "
        f"time={time.time()-t0:.1f}s"
    )
