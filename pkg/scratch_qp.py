"""Dev scratch: hammer the ADMM solver against a projected-gradient oracle."""
import time

import numpy as np

from repweight.kernels import Kernel, gram
from repweight.qp import QPSpec, SolverConfig, assemble_qp, solve_qp


def project_simplex_scaled(v, total):
    """Euclidean projection onto {w >= 0, sum w = total}."""
    n = v.size
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - total
    idx = np.arange(1, n + 1)
    cond = u - css / idx > 0
    rho = idx[cond][-1]
    theta = css[rho - 1] / rho
    return np.maximum(v - theta, 0.0)


def pg_oracle(spec, iters=1_000_000):
    S, v = spec.S, spec.v
    m = spec.m
    L = np.linalg.eigvalsh(S).max()
    L = max(L, 1e-8)
    step = 1.0 / L
    w = np.ones(m)
    for k in range(iters):
        g = S @ w + v
        w_new = project_simplex_scaled(w - step * g, float(m))
        if np.max(np.abs(w_new - w)) < 1e-15:
            w = w_new
            return w, k + 1
        w = w_new
    return w, iters


rng = np.random.default_rng(0)
worst_gap = 0.0
worst_kkt = 0.0
t0 = time.time()
for trial in range(50):
    m = int(rng.integers(3, 101))
    nq = int(rng.integers(2, 40))
    d = int(rng.integers(1, 6))
    xs = rng.standard_normal((m, d))
    xt = rng.standard_normal((nq, d)) + rng.normal(scale=0.5, size=d)
    kname = ["energy", "linear", "gaussian"][trial % 3]
    k = Kernel(kname, bandwidth=1.0 if kname == "gaussian" else None)
    sigma = [0.01, 0.1][trial % 2]
    g = gram(k, None, xs, xt)
    spec = assemble_qp(g, sigma)
    sol = solve_qp(spec, SolverConfig())
    w_ref, iters = pg_oracle(spec)
    gap = np.max(np.abs(sol.w - w_ref))
    kkt = max(sol.certificate.primal_residual, sol.certificate.dual_residual)
    worst_gap = max(worst_gap, gap)
    worst_kkt = max(worst_kkt, kkt)
    if gap > 1e-5 or kkt > 1e-6 or not sol.certificate.converged:
        print(
            f"trial {trial}: kernel={kname} m={m} sigma={sigma} gap={gap:.2e} "
            f"kkt={kkt:.2e} conv={sol.certificate.converged} "
            f"polished={sol.certificate.polished} admm_iters={sol.certificate.iterations} "
            f"pg_iters={iters}"
        )
print(f"worst gap {worst_gap:.3e}, worst kkt {worst_kkt:.3e}, elapsed {time.time()-t0:.1f}s")
