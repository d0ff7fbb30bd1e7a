"""Dev scratch: full criterion-9 style sweep over confounding strength."""
import sys
import time

import numpy as np

from repweight.kernels import energy_kernel
from repweight.oracle import joint_bias_metric
from repweight.qp import kom_weights
from repweight.repnet import TrainConfig, extract_representation, nn_head_weights, train
from repweight.tasks import build_ate_tasks
from scratch_train4 import make

gscale = float(sys.argv[1]) if len(sys.argv) > 1 else 0.5
n_seeds = int(sys.argv[2]) if len(sys.argv) > 2 else 8
sigma = float(sys.argv[3]) if len(sys.argv) > 3 else 0.01

rows = []
t0 = time.time()
for seed in range(n_seeds):
    ds, orc = make(gscale, d=10, n=4000, c=2, seed=seed)
    family = build_ate_tasks(ds)
    design = family.masked()
    net = train(design, TrainConfig(rng_seed=seed + 1000, batch_size=256, patience=3))

    errs = []
    for task in design:
        w_true = orc.density_ratio(task.source_x, int(task.index))
        head = net.head_values(task.source_x, task.index)
        errs.append(np.mean((head - w_true) ** 2))
    rmse = float(np.sqrt(np.mean(errs)))

    model_values = [orc.outcome_model(t.target_x, int(t.index)) for t in family]
    phi = extract_representation(net)
    w_ours = [kom_weights(t, energy_kernel(), phi, sigma=sigma).w for t in design]
    w_unif = [np.ones(t.n_source) for t in design]
    w_head = [nn_head_weights(net, t).w for t in design]
    jb_ours = joint_bias_metric(family, w_ours, model_values)
    jb_unif = joint_bias_metric(family, w_unif, model_values)
    jb_head = joint_bias_metric(family, w_head, model_values)
    rows.append((rmse, jb_ours, jb_unif, jb_head))
    print(
        f"seed {seed}: rmse={rmse:.3f} jb ours={jb_ours:.4f} unif={jb_unif:.4f} "
        f"head={jb_head:.4f} [{time.time()-t0:.0f}s]"
    )

rows = np.array(rows)
print(
    f"\ngscale={gscale} sigma={sigma}: median rmse={np.median(rows[:,0]):.3f} | "
    f"ours<unif {np.sum(rows[:,1] < rows[:,2])}/{len(rows)} | "
    f"ours<=head {np.sum(rows[:,1] <= rows[:,3])}/{len(rows)} | "
    f"median jb: ours={np.median(rows[:,1]):.4f} unif={np.median(rows[:,2]):.4f} head={np.median(rows[:,3]):.4f} | "
    f"total {time.time()-t0:.0f}s"
)
