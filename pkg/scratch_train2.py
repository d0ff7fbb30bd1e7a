import time

import numpy as np

from repweight.oracle import make_synthetic_dgp
from repweight.repnet import TrainConfig, train
from repweight.tasks import build_ate_tasks

for batch in (64, 128, 256):
    errors = []
    t0 = time.time()
    for seed in range(5):
        ds, orc = make_synthetic_dgp(d=10, n_source=4000, confounder_dim=2, seed=seed)
        fam = build_ate_tasks(ds).masked()
        net = train(fam, TrainConfig(rng_seed=seed + 1000, batch_size=batch))
        errs = []
        for task in fam:
            w_true = orc.density_ratio(task.source_x, int(task.index))
            head = net.head_values(task.source_x, task.index)
            errs.append(np.mean((head - w_true) ** 2))
        errors.append(float(np.sqrt(np.mean(errs))))
    print(
        f"batch={batch}: joint rmse per seed = {[f'{e:.3f}' for e in errors]} "
        f"median={np.median(errors):.3f} total_time={time.time()-t0:.1f}s"
    )
