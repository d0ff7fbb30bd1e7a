import time

import numpy as np

import repweight.oracle as om
from repweight.repnet import TrainConfig, train
from repweight.tasks import Dataset, build_ate_tasks


def make(gamma_scale, d, n, c, seed, noise_sd=1.0):
    scale = 1.0 / np.sqrt(max(c, 1))
    proto = om.SyntheticOracle(
        d=d,
        confounder_dim=c,
        gamma=np.full(c, gamma_scale * scale),
        slope=np.full(c, 1.5 * scale),
        interaction=0.7 if c >= 2 else 0.0,
        intercept=1.0,
        effect_intercept=1.0,
        effect_slope=np.full(c, 0.5 * scale),
        noise_sd=noise_sd,
        marginal_treated=0.5,
        marginal_se=0.0,
    )
    marginal, se = proto.population_mean(proto.propensity, n_draws=100_000, seed=seed + 101)
    orc = om.SyntheticOracle(
        **{
            **{f: getattr(proto, f) for f in proto.__dataclass_fields__},
            "marginal_treated": marginal,
            "marginal_se": se,
        }
    )
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, d))
    a = (rng.uniform(size=n) < orc.propensity(x)).astype(int)
    y = np.where(a == 1, orc.outcome_model(x, 1), orc.outcome_model(x, 0)) + rng.standard_normal(n) * noise_sd
    return Dataset(covariates=x, treatment=a, outcome=y), orc


for gscale in (0.8, 0.6, 0.5):
    rmses = []
    t0 = time.time()
    for seed in range(6):
        ds, orc = make(gscale, d=10, n=4000, c=2, seed=seed)
        fam = build_ate_tasks(ds).masked()
        net = train(fam, TrainConfig(rng_seed=seed + 1000, batch_size=256))
        errs = []
        for task in fam:
            w_true = orc.density_ratio(task.source_x, int(task.index))
            head = net.head_values(task.source_x, task.index)
            errs.append(np.mean((head - w_true) ** 2))
        rmses.append(float(np.sqrt(np.mean(errs))))
    ds0, orc0 = make(gscale, d=10, n=4000, c=2, seed=0)
    w0 = orc0.density_ratio(ds0.covariates, 1)
    print(
        f"gamma_scale={gscale}: sd(w*)={w0.std():.3f} rmse per seed "
        f"{[f'{e:.3f}' for e in rmses]} median={np.median(rmses):.3f} "
        f"time={time.time()-t0:.1f}s"
    )
