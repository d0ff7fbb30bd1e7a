"""Kernel-optimal-matching quadratic programs and an ADMM solver.

Minimizing the weighted MMD^2 plus an L2 weight penalty over simplex-style
constraints (w_i >= 0, per-task sum fixed to the source size) is the QP

    min_w  (1/2) w'Sw + v'w   subject to  l <= Aw <= u

with S built from source-source kernel entries plus a 2*sigma^2 ridge and
v from source-target row sums. A stacks an identity block (one bound row
per weight) and one sum row per task.

The solver is operator-splitting ADMM in the style of OSQP
(Stellato et al., 2020): a cached factorization of S + sigma_split*I +
A'diag(rho)A, over-relaxed updates, residual-balancing rho adaptation, and
an active-set polish step that solves the reduced KKT system for
machine-precision solutions when the active set is identified correctly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla

from .kernels import GramBlock, Kernel, gram

__all__ = [
    "QPSpec",
    "SolverCertificate",
    "SolverConfig",
    "WeightVector",
    "assemble_qp",
    "assemble_joint_qp",
    "solve_qp",
    "kom_weights",
    "dump_qp_text",
]


@dataclass(frozen=True)
class QPSpec:
    """Matrices of one (possibly joint, block-diagonal) weighting QP."""

    S: np.ndarray
    v: np.ndarray
    A: np.ndarray
    l: np.ndarray
    u: np.ndarray
    block_sizes: tuple = ()

    def __post_init__(self):
        S = np.asarray(self.S, dtype=float)
        v = np.asarray(self.v, dtype=float).ravel()
        A = np.asarray(self.A, dtype=float)
        l = np.asarray(self.l, dtype=float).ravel()
        u = np.asarray(self.u, dtype=float).ravel()
        m = S.shape[0]
        if S.shape != (m, m) or v.shape != (m,):
            raise ValueError("S must be square and v of matching length")
        if np.max(np.abs(S - S.T), initial=0.0) > 1e-10:
            raise ValueError("S is not symmetric")
        if not (np.all(np.isfinite(S)) and np.all(np.isfinite(v))):
            raise ValueError("non-finite entries in S or v")
        if A.shape[1] != m or l.shape != (A.shape[0],) or u.shape != (A.shape[0],):
            raise ValueError("constraint system dimensions are inconsistent")
        if np.any(l > u):
            raise ValueError("constraint lower bounds exceed upper bounds")
        for name, val in (("S", S), ("v", v), ("A", A), ("l", l), ("u", u)):
            object.__setattr__(self, name, val)
        object.__setattr__(self, "block_sizes", tuple(int(b) for b in self.block_sizes))

    @property
    def m(self) -> int:
        return self.S.shape[0]


@dataclass(frozen=True)
class SolverCertificate:
    primal_residual: float
    dual_residual: float
    objective: float
    iterations: int
    converged: bool
    polished: bool = False


@dataclass(frozen=True)
class WeightVector:
    """Per-source-sample weights with the certificate of the solve.

    `duals` are the multipliers on the bound rows (<= 0 at active lower
    bounds in the l <= Aw <= u convention), kept for diagnostics.
    """

    w: np.ndarray
    certificate: SolverCertificate | None = None
    duals: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "w", np.asarray(self.w, dtype=float).ravel())


@dataclass(frozen=True)
class SolverConfig:
    tol_abs: float = 1e-6
    tol_rel: float = 1e-6
    max_iters: int = 20000
    rho: float = 0.1
    adapt_every: int = 50
    polish: bool = True


def assemble_qp(g: GramBlock, sigma: float) -> QPSpec:
    """QP matrices for one task: ridge-regularized MMD^2 minimization.

    S[i,j] = (2/|P|^2) Kpp[i,j] + 2 sigma^2 1{i=j},
    v[i]   = -(2/(|P||Q|)) sum_j Kpq[i,j],
    constraints w_i >= 0 and sum_i w_i = |P|.
    """
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    n_p, n_q = g.n_source, g.n_target
    S = (2.0 / n_p**2) * g.kpp + (2.0 * sigma**2) * np.eye(n_p)
    v = -(2.0 / (n_p * n_q)) * g.kpq.sum(axis=1)
    A = np.vstack([np.eye(n_p), np.ones((1, n_p))])
    l = np.concatenate([np.zeros(n_p), [float(n_p)]])
    u = np.concatenate([np.full(n_p, np.inf), [float(n_p)]])
    return QPSpec(S, v, A, l, u, block_sizes=(n_p,))


def assemble_joint_qp(blocks) -> QPSpec:
    """Stack per-task QPs into one block-diagonal program.

    `blocks` is a sequence of (GramBlock, sigma) pairs. There is no
    cross-task coupling: S is block-diagonal, the bound rows cover every
    coordinate, and each task contributes one sum row.
    """
    blocks = list(blocks)
    if not blocks:
        raise ValueError("no blocks to assemble")
    parts = [assemble_qp(g, sigma) for g, sigma in blocks]
    sizes = [p.m for p in parts]
    m = sum(sizes)
    S = np.zeros((m, m))
    v = np.zeros(m)
    offset = 0
    for p, size in zip(parts, sizes):
        S[offset : offset + size, offset : offset + size] = p.S
        v[offset : offset + size] = p.v
        offset += size
    A = np.zeros((m + len(parts), m))
    A[:m, :] = np.eye(m)
    l = np.concatenate([np.zeros(m), np.array(sizes, dtype=float)])
    u = np.concatenate([np.full(m, np.inf), np.array(sizes, dtype=float)])
    offset = 0
    for row, size in enumerate(sizes):
        A[m + row, offset : offset + size] = 1.0
        offset += size
    return QPSpec(S, v, A, l, u, block_sizes=tuple(sizes))


def _gershgorin_min(S: np.ndarray) -> float:
    diag = np.diag(S)
    radius = np.sum(np.abs(S), axis=1) - np.abs(diag)
    return float(np.min(diag - radius))


def _is_canonical(spec: QPSpec) -> bool:
    m = spec.m
    if not spec.block_sizes or spec.A.shape[0] != m + len(spec.block_sizes):
        return False
    if not np.array_equal(spec.A[:m], np.eye(m)):
        return False
    offset = 0
    for row, size in enumerate(spec.block_sizes):
        expected = np.zeros(m)
        expected[offset : offset + size] = 1.0
        if not np.array_equal(spec.A[m + row], expected):
            return False
        offset += size
    return True


def _kkt_matrix(spec: QPSpec, sigma_split: float, rho_vec: np.ndarray, canonical: bool):
    m = spec.m
    M = spec.S + sigma_split * np.eye(m)
    if canonical:
        # A'diag(rho)A = diag(bound rhos) + rho_b * ones-block per task
        M[np.diag_indices(m)] += rho_vec[:m]
        offset = 0
        for row, size in enumerate(spec.block_sizes):
            M[offset : offset + size, offset : offset + size] += rho_vec[m + row]
            offset += size
    else:
        M += (spec.A * rho_vec[:, None]).T @ spec.A
    return sla.cho_factor(M, lower=True, check_finite=False)


def _residuals(spec, x, y, z):
    ax = spec.A @ x
    sx = spec.S @ x
    aty = spec.A.T @ y
    r_prim = float(np.max(np.abs(ax - z), initial=0.0))
    r_dual = float(np.max(np.abs(sx + spec.v + aty), initial=0.0))
    scale_prim = max(np.max(np.abs(ax), initial=0.0), np.max(np.abs(z), initial=0.0))
    scale_dual = max(
        np.max(np.abs(sx), initial=0.0),
        np.max(np.abs(aty), initial=0.0),
        np.max(np.abs(spec.v), initial=0.0),
    )
    return r_prim, r_dual, scale_prim, scale_dual


def _polish(spec: QPSpec, x: np.ndarray, y: np.ndarray, tol_abs: float):
    """Primal-dual active-set refinement from the ADMM iterate.

    Starting from the bound rows the iterate suggests are active, solve the
    equality-constrained KKT system; pin free variables that land below
    their bound, release pinned ones whose multiplier has the wrong sign
    for a lower bound (must be <= 0 in the l <= Aw <= u convention), and
    repeat. Returns (x, y) at a consistent KKT point, or None when the
    reduced system is singular or the active set cycles.
    """
    m = spec.m
    n_con = spec.A.shape[0]
    eq = np.isclose(spec.l, spec.u)
    bound_rows = np.where(~eq)[0]
    eq_rows = np.where(eq)[0]
    if not np.all(bound_rows < m) or not np.all(spec.A[bound_rows] == np.eye(m)[bound_rows]):
        return None  # polish only supports the canonical bound-block layout

    slack = x - spec.l[:m]
    active = (slack < max(100 * tol_abs, 1e-7)) | (y[:m] < -1e-9)
    A_eq = spec.A[eq_rows]
    b_eq = spec.l[eq_rows]
    seen = set()

    for _ in range(50):
        key = active.tobytes()
        if key in seen:
            return None
        seen.add(key)
        free = ~active
        nf = int(free.sum())
        if nf == 0:
            return None
        E = A_eq[:, free]
        kkt = np.zeros((nf + len(eq_rows), nf + len(eq_rows)))
        kkt[:nf, :nf] = spec.S[np.ix_(free, free)]
        kkt[:nf, nf:] = E.T
        kkt[nf:, :nf] = E
        x_low = spec.l[:m].copy()
        rhs = np.concatenate(
            [
                -spec.v[free] - spec.S[np.ix_(free, active)] @ x_low[active],
                b_eq - A_eq[:, active] @ x_low[active],
            ]
        )
        try:
            sol = sla.solve(kkt, rhs, check_finite=False)
        except sla.LinAlgError:
            return None
        x_new = x_low.copy()
        x_new[free] = sol[:nf]
        nu = sol[nf:]
        grad = spec.S @ x_new + spec.v + A_eq.T @ nu
        pin = free & (x_new < spec.l[:m] - 1e-12)
        release = active & (-grad > 1e-11 * max(1.0, float(np.max(np.abs(grad)))))
        if not pin.any() and not release.any():
            y_new = np.zeros(n_con)
            y_new[eq_rows] = nu
            y_new[np.where(active)[0]] = -grad[active]
            return x_new, y_new
        active = (active | pin) & ~release
    return None


def solve_qp(spec: QPSpec, config: SolverConfig | None = None) -> WeightVector:
    """ADMM solve with a KKT certificate; never raises on slow convergence.

    The returned certificate reports the projection-form primal residual
    ||proj_[l,u](Aw) - Aw||_inf and the stationarity residual
    ||Sw + v + A'y||_inf. `converged` is False when max_iters ran out.
    """
    cfg = config or SolverConfig()
    m = spec.m
    n_con = spec.A.shape[0]
    canonical = _is_canonical(spec)

    # keep the x-update system positive definite even for the (conditionally
    # negative-type) energy kernel, whose S can be indefinite off the
    # constraint manifold
    rho_floor = max(1e-6, 1.05 * max(0.0, -_gershgorin_min(spec.S)))
    rho = max(cfg.rho, rho_floor)
    eq = np.isclose(spec.l, spec.u)
    sigma_split = 1e-6
    alpha = 1.6

    def rho_vector(r):
        vec = np.full(n_con, r)
        vec[eq] = 1e3 * r
        return vec

    rho_vec = rho_vector(rho)
    factor = _kkt_matrix(spec, sigma_split, rho_vec, canonical)

    x = np.zeros(m)
    z = np.clip(spec.A @ x, spec.l, spec.u)
    y = np.zeros(n_con)

    iterations = 0
    converged = False
    r_prim = r_dual = np.inf
    for k in range(1, cfg.max_iters + 1):
        iterations = k
        rhs = sigma_split * x - spec.v + spec.A.T @ (rho_vec * z - y)
        xt = sla.cho_solve(factor, rhs, check_finite=False)
        zt = spec.A @ xt
        x = alpha * xt + (1.0 - alpha) * x
        zr = alpha * zt + (1.0 - alpha) * z
        z_new = np.clip(zr + y / rho_vec, spec.l, spec.u)
        y = y + rho_vec * (zr - z_new)
        z = z_new

        if k % 5 == 0 or k == cfg.max_iters:
            r_prim, r_dual, scale_prim, scale_dual = _residuals(spec, x, y, z)
            eps_prim = cfg.tol_abs + cfg.tol_rel * scale_prim
            eps_dual = cfg.tol_abs + cfg.tol_rel * scale_dual
            if r_prim <= eps_prim and r_dual <= eps_dual:
                converged = True
                break
            if cfg.adapt_every and k % cfg.adapt_every == 0:
                ratio = (r_prim / max(scale_prim, 1e-12)) / max(
                    r_dual / max(scale_dual, 1e-12), 1e-12
                )
                rho_new = float(np.clip(rho * np.sqrt(ratio), rho_floor, 1e6))
                if rho_new > 5 * rho or rho_new < rho / 5:
                    rho = rho_new
                    rho_vec = rho_vector(rho)
                    factor = _kkt_matrix(spec, sigma_split, rho_vec, canonical)

    if cfg.polish and canonical:
        polished = _polish(spec, x, y, cfg.tol_abs)
        if polished is not None:
            xp, yp = polished
            rp_p, rd_p, _, _ = _residuals(spec, xp, yp, np.clip(spec.A @ xp, spec.l, spec.u))
            if max(rp_p, rd_p) <= max(r_prim, r_dual):
                ax = spec.A @ xp
                cert = SolverCertificate(
                    primal_residual=float(np.max(np.abs(ax - np.clip(ax, spec.l, spec.u)), initial=0.0)),
                    dual_residual=rd_p,
                    objective=float(0.5 * xp @ spec.S @ xp + spec.v @ xp),
                    iterations=iterations,
                    converged=converged or max(rp_p, rd_p) <= cfg.tol_abs,
                    polished=True,
                )
                return WeightVector(xp, cert, duals=yp[:m])

    ax = spec.A @ x
    cert = SolverCertificate(
        primal_residual=float(np.max(np.abs(ax - np.clip(ax, spec.l, spec.u)), initial=0.0)),
        dual_residual=r_dual,
        objective=float(0.5 * x @ spec.S @ x + spec.v @ x),
        iterations=iterations,
        converged=converged,
        polished=False,
    )
    return WeightVector(x, cert, duals=y[:m])


def kom_weights(
    task,
    kernel: Kernel,
    phi=None,
    sigma: float = 0.01,
    config: SolverConfig | None = None,
) -> WeightVector:
    """Kernel optimal matching for one task: gram -> assemble -> solve.

    Solver-noise negatives are clipped to zero and the weights rescaled to
    mean exactly 1, which downstream estimators rely on.
    """
    g = gram(kernel, phi, task.source_x, task.target_x)
    spec = assemble_qp(g, sigma)
    solution = solve_qp(spec, config)
    w = np.maximum(solution.w, 0.0)
    total = w.sum()
    if total <= 0:
        raise ValueError("solver returned an all-zero weight vector")
    w = w * (w.size / total)
    return WeightVector(w, solution.certificate, solution.duals)


def dump_qp_text(spec: QPSpec, path) -> None:
    """Debug dump: plain-text, row-major, space-separated matrices."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"m {spec.m} constraints {spec.A.shape[0]}\n")
        for name, mat in (("S", spec.S), ("A", spec.A)):
            fh.write(f"{name}\n")
            for row in np.atleast_2d(mat):
                fh.write(" ".join(f"{val:.17g}" for val in row) + "\n")
        for name, vec in (("v", spec.v), ("l", spec.l), ("u", spec.u)):
            fh.write(f"{name}\n")
            fh.write(" ".join(f"{val:.17g}" for val in vec) + "\n")
