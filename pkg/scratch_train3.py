import time

import numpy as np

from repweight.oracle import make_synthetic_dgp
from repweight.repnet import TrainConfig, train
from repweight.tasks import build_ate_tasks

ds, orc = make_synthetic_dgp(d=10, n_source=4000, confounder_dim=2, seed=0)
fam = build_ate_tasks(ds).masked()

# baseline: error of the constant head v=1
for task in fam:
    w_true = orc.density_ratio(task.source_x, int(task.index))
    print(
        f"arm {task.index}: E[w*]={w_true.mean():.3f} sd(w*)={w_true.std():.3f} "
        f"rmse(const 1)={np.sqrt(np.mean((1 - w_true) ** 2)):.3f} "
        f"range=({w_true.min():.2f},{w_true.max():.2f})"
    )

for patience, batch, epochs in ((20, 256, 300), (50, 256, 1000), (20, None, 300), (50, None, 2000)):
    t0 = time.time()
    net = train(
        fam,
        TrainConfig(rng_seed=1000, batch_size=batch, patience=patience, max_epochs=epochs),
    )
    errs = []
    for task in fam:
        w_true = orc.density_ratio(task.source_x, int(task.index))
        head = net.head_values(task.source_x, task.index)
        errs.append(np.mean((head - w_true) ** 2))
    joint = float(np.sqrt(np.mean(errs)))
    hist = net.history
    print(
        f"patience={patience} batch={batch} max={epochs}: rmse={joint:.3f} "
        f"epochs={len(hist['val_loss'])} best={hist['best_epoch']} "
        f"val[best]={min(hist['val_loss']):.4f} time={time.time()-t0:.1f}s"
    )
