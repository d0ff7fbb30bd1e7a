"""Kernels, Gram blocks, and weighted two-sample MMD^2.

Supported kernels: the energy-distance kernel k(x,x') = -||x-x'||_2 (its
MMD is the energy distance), the linear kernel x'y, and the Gaussian
kernel. Kernels compose with a representation map: Gram entries are
evaluated on phi-images, so any weighting method downstream balances the
represented covariates rather than the raw ones.

Gram matrices are dense; task sizes here are at most a few thousand rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist, pdist

__all__ = [
    "Kernel",
    "GramBlock",
    "energy_kernel",
    "linear_kernel",
    "gaussian_kernel",
    "kernel_eval",
    "gram",
    "mmd_squared",
    "median_bandwidth",
    "identity_rep",
    "as_rep_matrix",
]

_VARIANTS = ("energy", "linear", "gaussian")


@dataclass(frozen=True)
class Kernel:
    variant: str
    bandwidth: float | None = None

    def __post_init__(self):
        if self.variant not in _VARIANTS:
            raise ValueError(f"unknown kernel variant {self.variant!r}")
        if self.variant == "gaussian":
            if self.bandwidth is None or not self.bandwidth > 0:
                raise ValueError("gaussian kernel needs a positive bandwidth")


def energy_kernel() -> Kernel:
    return Kernel("energy")


def linear_kernel() -> Kernel:
    return Kernel("linear")


def gaussian_kernel(bandwidth: float) -> Kernel:
    return Kernel("gaussian", bandwidth=float(bandwidth))


def identity_rep(x: np.ndarray) -> np.ndarray:
    return x


def kernel_eval(k: Kernel, u, v) -> float:
    """Evaluate k on a single pair of vectors."""
    u = np.asarray(u, dtype=float).ravel()
    v = np.asarray(v, dtype=float).ravel()
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    if k.variant == "energy":
        return -float(np.linalg.norm(u - v))
    if k.variant == "linear":
        return float(u @ v)
    sq = float(np.sum((u - v) ** 2))
    return float(np.exp(-sq / (2.0 * k.bandwidth**2)))


def _pairwise(k: Kernel, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if k.variant == "energy":
        return -cdist(a, b)
    if k.variant == "linear":
        return a @ b.T
    return np.exp(-cdist(a, b, "sqeuclidean") / (2.0 * k.bandwidth**2))


@dataclass(frozen=True)
class GramBlock:
    """Kernel matrices between/within the source and target samples."""

    kpp: np.ndarray
    kpq: np.ndarray
    kqq: np.ndarray

    def __post_init__(self):
        for name, m in (("kpp", self.kpp), ("kpq", self.kpq), ("kqq", self.kqq)):
            if not np.all(np.isfinite(m)):
                raise ValueError(f"non-finite entries in {name}")
        np_, nq = self.kpq.shape
        if self.kpp.shape != (np_, np_) or self.kqq.shape != (nq, nq):
            raise ValueError("inconsistent Gram block shapes")
        for name, m in (("kpp", self.kpp), ("kqq", self.kqq)):
            if np.max(np.abs(m - m.T), initial=0.0) > 1e-12:
                raise ValueError(f"{name} is not symmetric")

    @property
    def n_source(self) -> int:
        return self.kpp.shape[0]

    @property
    def n_target(self) -> int:
        return self.kqq.shape[0]


def as_rep_matrix(z) -> np.ndarray:
    """Coerce a representation output to (n, r); 1-d output means r = 1."""
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    if z.ndim != 2:
        raise ValueError(f"representation output must be 1-d or 2-d, got ndim={z.ndim}")
    return z


def gram(k: Kernel, phi, source_x: np.ndarray, target_x: np.ndarray) -> GramBlock:
    """Gram blocks of the kernel composed with the representation phi.

    phi maps an (n, d) array to an (n, r) array (1-d output is read as
    r = 1); None means identity. Composing here is exactly equivalent to
    evaluating the plain kernel on pre-transformed inputs.
    """
    if phi is None:
        phi = identity_rep
    zp = as_rep_matrix(phi(np.asarray(source_x, dtype=float)))
    zq = as_rep_matrix(phi(np.asarray(target_x, dtype=float)))
    if not np.all(np.isfinite(zp)) or not np.all(np.isfinite(zq)):
        raise ValueError("representation produced non-finite values")
    kpp = _pairwise(k, zp, zp)
    kqq = _pairwise(k, zq, zq)
    # exact symmetry for downstream QP assembly (BLAS products can be off at ~1e-17)
    kpp = 0.5 * (kpp + kpp.T)
    kqq = 0.5 * (kqq + kqq.T)
    return GramBlock(kpp=kpp, kpq=_pairwise(k, zp, zq), kqq=kqq)


def mmd_squared(g: GramBlock, w: np.ndarray) -> float:
    """Squared MMD between the w-reweighted source and the target sample.

    Three-term expansion: (1/|P|^2) sum_ij w_i w_j Kpp[i,j]
    - (2/(|P||Q|)) sum_ij w_i Kpq[i,j] + (1/|Q|^2) sum_ij Kqq[i,j].
    Weights must be (near) nonnegative with mean 1. The value can dip a
    hair below zero for the energy kernel, which is conditionally
    negative-type rather than positive-definite.
    """
    w = np.asarray(w, dtype=float).ravel()
    n_p, n_q = g.n_source, g.n_target
    if w.shape != (n_p,):
        raise ValueError(f"weight length {w.shape[0]} != source size {n_p}")
    if abs(w.mean() - 1.0) > 1e-9:
        raise ValueError(f"weights must have mean 1, got {w.mean()!r}")
    if w.min() < -1e-12:
        raise ValueError(f"weights must be nonnegative, min is {w.min()!r}")
    term_pp = w @ g.kpp @ w / n_p**2
    term_pq = 2.0 * (w @ g.kpq.sum(axis=1)) / (n_p * n_q)
    term_qq = g.kqq.sum() / n_q**2
    return float(term_pp - term_pq + term_qq)


def median_bandwidth(z: np.ndarray) -> float:
    """Median pairwise distance of pooled representation images.

    The usual default when nothing pins the Gaussian scale; falls back to
    1.0 when all points coincide.
    """
    z = np.atleast_2d(np.asarray(z, dtype=float))
    if z.shape[0] < 2:
        return 1.0
    med = float(np.median(pdist(z)))
    return med if med > 0 else 1.0
