import numpy as np

from repweight.kernels import Kernel, gram
from repweight.qp import SolverConfig, assemble_qp, solve_qp
from scratch_qp import pg_oracle, project_simplex_scaled

rng = np.random.default_rng(0)
spec = None
for trial in range(13):
    m = int(rng.integers(3, 101))
    nq = int(rng.integers(2, 40))
    d = int(rng.integers(1, 6))
    xs = rng.standard_normal((m, d))
    xt = rng.standard_normal((nq, d)) + rng.normal(scale=0.5, size=d)
    kname = ["energy", "linear", "gaussian"][trial % 3]
    k = Kernel(kname, bandwidth=1.0 if kname == "gaussian" else None)
    sigma = [0.01, 0.1][trial % 2]
    g = gram(k, None, xs, xt)
    if trial == 12:
        spec = assemble_qp(g, sigma)

sol = solve_qp(spec, SolverConfig())
w_ref, iters = pg_oracle(spec)


def obj(w):
    return 0.5 * w @ spec.S @ w + spec.v @ w


print("obj(admm) =", obj(sol.w))
print("obj(pg)   =", obj(w_ref))
print("pg exited after", iters)

# is the ADMM answer a PG fixed point?
L = np.linalg.eigvalsh(spec.S).max()
step = 1.0 / L
w = sol.w.copy()
moves = []
for _ in range(5):
    w_new = project_simplex_scaled(w - step * (spec.S @ w + spec.v), float(spec.m))
    moves.append(np.max(np.abs(w_new - w)))
    w = w_new
print("PG displacement from ADMM point:", moves)

# keep running PG from its own exit point with more iterations
w = w_ref.copy()
for _ in range(200000):
    w_new = project_simplex_scaled(w - step * (spec.S @ w + spec.v), float(spec.m))
    w = w_new
print("obj(pg, +200k more) =", obj(w), " gap to admm:", np.max(np.abs(w - sol.w)))
