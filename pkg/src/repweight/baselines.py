"""Non-learned weighting baselines and fixed representations.

- Inverse propensity weighting from an L2-regularized logistic model
  (damped Newton), with the usual mean-one normalization.
- Entropy balancing on first moments (Hainmueller, 2012): exponential-tilt
  weights whose dual is solved by Newton with line search.
- PCA scores and the propensity-score vector as representations that plug
  into kernel matching like any other map.
- Uniform weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .qp import WeightVector
from .tasks import Dataset, WeightingTask

__all__ = [
    "LogisticModel",
    "PropensityContext",
    "fit_logistic",
    "ipw_weights",
    "entropy_balance",
    "pca_representation",
    "ps_vector_representation",
    "uniform_weights",
]

_PROB_CLIP = 1e-6


@dataclass(frozen=True)
class LogisticModel:
    """Binary logistic model; `coefficients` is (intercept, slopes...)."""

    coefficients: np.ndarray
    regularization: float

    def __post_init__(self):
        coef = np.asarray(self.coefficients, dtype=float).ravel()
        if not np.all(np.isfinite(coef)):
            raise ValueError("non-finite logistic coefficients")
        object.__setattr__(self, "coefficients", coef)

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        eta = self.coefficients[0] + x @ self.coefficients[1:]
        # stable sigmoid
        out = np.empty_like(eta)
        pos = eta >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
        expe = np.exp(eta[~pos])
        out[~pos] = expe / (1.0 + expe)
        return np.clip(out, _PROB_CLIP, 1.0 - _PROB_CLIP)


def fit_logistic(x: np.ndarray, labels: np.ndarray, lam: float = 1e-4) -> LogisticModel:
    """Damped-Newton fit of the mean negative log-likelihood.

    The intercept is unpenalized; slopes carry an L2 penalty of lam/2 per
    unit. With lam = 0 and separable data the iterates blow up, which is
    reported instead of returned.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(labels, dtype=float).ravel()
    if set(np.unique(y).tolist()) != {0.0, 1.0}:
        raise ValueError("labels must contain both classes, coded 0/1")
    n, d = x.shape
    z = np.column_stack([np.ones(n), x])
    penalty = np.concatenate([[0.0], np.full(d, lam)])
    beta = np.zeros(d + 1)

    def objective(b):
        eta = z @ b
        # mean log(1 + exp(-s*eta)) with s = 2y-1, computed stably
        s = 2.0 * y - 1.0
        margin = s * eta
        nll = np.mean(np.logaddexp(0.0, -margin))
        return nll + 0.5 * np.sum(penalty * b**2)

    converged = False
    for _ in range(100):
        eta = z @ beta
        p = 1.0 / (1.0 + np.exp(-np.clip(eta, -35, 35)))
        grad = z.T @ (p - y) / n + penalty * beta
        grad_norm = np.linalg.norm(grad)
        if grad_norm <= 0.5e-8:
            converged = True
            break
        w = p * (1.0 - p)
        hess = (z * w[:, None]).T @ z / n + np.diag(penalty)
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        if grad_norm < 1e-4:
            # quadratic-convergence basin: take the full Newton step; the
            # objective decrease here is below float resolution
            beta = beta - step
        else:
            f0 = objective(beta)
            descent = float(grad @ step)
            t = 1.0
            while t > 1e-12 and objective(beta - t * step) > f0 - 1e-4 * t * descent:
                t *= 0.5
            beta = beta - t * step
        if lam == 0.0 and np.max(np.abs(beta)) > 1e3:
            raise ValueError(
                "labels look perfectly separated; refit with regularization > 0"
            )
    if not converged:
        raise ValueError(
            "Newton did not converge; data may be separated, try regularization > 0"
        )
    if lam == 0.0 and np.all((2.0 * y - 1.0) * (z @ beta) > 0):
        # every point on the correct side of the boundary: the unpenalized
        # MLE diverges, the iteration just stalled at saturated likelihoods
        raise ValueError(
            "labels look perfectly separated; refit with regularization > 0"
        )
    return LogisticModel(coefficients=beta, regularization=lam)


@dataclass(frozen=True)
class PropensityContext:
    """How to turn per-row probabilities into inverse-style weights.

    `kind` selects the formula on the task's source rows:
      att        w ~ e/(1-e)          with e = P(treated | x) on controls
      ate        w ~ 1/p              with p = P(arm a | x) on arm a
      transport  w ~ (1-s)/s          with s = P(in trial | x) on trial rows
    `propensity` maps an (n, d) covariate block to those probabilities;
    oracle tests inject the true function here.
    """

    kind: str
    propensity: object

    def __post_init__(self):
        if self.kind not in ("att", "ate", "transport"):
            raise ValueError(f"unknown task kind {self.kind!r}")


def ipw_weights(task: WeightingTask, context: PropensityContext) -> WeightVector:
    probs = np.asarray(context.propensity(task.source_x), dtype=float).ravel()
    if probs.shape != (task.n_source,):
        raise ValueError("propensity must return one probability per source row")
    probs = np.clip(probs, _PROB_CLIP, 1.0 - _PROB_CLIP)
    if context.kind == "att":
        raw = probs / (1.0 - probs)
    elif context.kind == "ate":
        raw = 1.0 / probs
    else:
        raw = (1.0 - probs) / probs
    return WeightVector(raw * (raw.size / raw.sum()))


def entropy_balance(task: WeightingTask, max_iters: int = 200) -> WeightVector:
    """Exponential-tilt weights matching target first moments exactly.

    Solves the dual min_beta log mean_i exp(beta'(x_i - t)) by Newton with
    backtracking; the weights n*softmax(beta'x) then reproduce every target
    mean within 1e-8 and are strictly positive.
    """
    x = task.source_x
    t = task.target_x.mean(axis=0)
    lo, hi = x.min(axis=0), x.max(axis=0)
    if np.any(t < lo) or np.any(t > hi):
        raise ValueError("infeasible balance: target mean outside source hull")

    centered = x - t
    beta = np.zeros(x.shape[1])

    def dual(b):
        vals = centered @ b
        vmax = vals.max()
        return vmax + np.log(np.mean(np.exp(vals - vmax)))

    gap = None
    for _ in range(max_iters):
        vals = centered @ beta
        vals -= vals.max()
        pi = np.exp(vals)
        pi /= pi.sum()
        grad = pi @ centered
        gap = np.max(np.abs(grad))
        if gap <= 0.5e-8:
            w = pi * x.shape[0]
            return WeightVector(w)
        hess = (centered * pi[:, None]).T @ centered - np.outer(grad, grad)
        try:
            step = np.linalg.solve(hess + 1e-12 * np.eye(len(beta)), grad)
        except np.linalg.LinAlgError:
            step = grad
        if gap < 1e-4:
            beta = beta - step  # quadratic basin: decreases are sub-float
        else:
            f0 = dual(beta)
            descent = float(grad @ step)
            alpha = 1.0
            while alpha > 1e-14 and dual(beta - alpha * step) > f0 - 1e-4 * alpha * descent:
                alpha *= 0.5
            beta = beta - alpha * step
    raise ValueError(
        f"entropy balancing did not converge in {max_iters} iterations; "
        f"final moment gap {gap:.3e}"
    )


def pca_representation(x_pool: np.ndarray, rep_dim: int):
    """Principal-component scores of the pooled sample as a representation.

    Centering and loadings come from `x_pool`; the returned map projects
    any x onto the top `rep_dim` directions. Loadings are orthonormal and
    sign-fixed (largest-magnitude loading positive) for reproducibility.
    """
    x_pool = np.atleast_2d(np.asarray(x_pool, dtype=float))
    center = x_pool.mean(axis=0)
    _, svals, vt = np.linalg.svd(x_pool - center, full_matrices=False)
    tol = svals.max(initial=0.0) * max(x_pool.shape) * np.finfo(float).eps
    rank = int(np.sum(svals > tol))
    if rep_dim > rank:
        raise ValueError(f"rep_dim {rep_dim} exceeds data rank {rank}")
    components = vt[:rep_dim]
    for row in components:
        lead = np.argmax(np.abs(row))
        if row[lead] < 0:
            row *= -1.0

    def rep(x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return (x - center) @ components.T

    rep.dim = rep_dim
    rep.components = components
    return rep


def ps_vector_representation(ds: Dataset, lam: float = 1e-4, label_column: str = "treatment"):
    """Map x to the vector of predicted class probabilities.

    One-vs-rest logistic models per class (treatment arms, or the RCT
    indicator when `label_column="rct_indicator"`), renormalized per row so
    the vector sums to one.
    """
    labels = getattr(ds, label_column)
    if labels is None:
        raise ValueError(f"dataset has no {label_column} column")
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if classes.size < 2:
        raise ValueError("need at least two classes for a propensity vector")
    models = [fit_logistic(ds.covariates, (labels == c).astype(float), lam) for c in classes]

    def rep(x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        probs = np.column_stack([m.predict_proba(x) for m in models])
        return probs / probs.sum(axis=1, keepdims=True)

    rep.dim = int(classes.size)
    rep.models = tuple(models)
    return rep


def uniform_weights(task: WeightingTask) -> WeightVector:
    return WeightVector(np.ones(task.n_source))
