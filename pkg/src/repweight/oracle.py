"""Ground-truth diagnostics on enumerable data-generating processes.

A `DiscreteDGP` fixes a finite covariate support with source probabilities
p, target probabilities q, and an outcome model m. Everything of interest
is then exact arithmetic:

- the true weights (density ratio) w* = q/p and their projection onto any
  representation (group-wise q-mass over p-mass);
- the balancing score error, the L2(P) distance between w* and that
  projection;
- the bias of any weighting, decomposed into a representation-level bias,
  a chosen-weights bias, and a confounding bias, the three summing to the
  total exactly;
- the bound |bias| <= IPM + ||Y~|| * BSE with the sharp singleton-class
  IPM instantiation;
- membership checks for generalized balancing / prognostic / deconfounding
  scores.

`make_synthetic_dgp` provides a continuous Gaussian benchmark with known
propensity, outcome model, and density ratio; population functionals there
are Monte Carlo estimates with reported standard errors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .kernels import Kernel, as_rep_matrix, kernel_eval
from .tasks import Dataset, TaskFamily

__all__ = [
    "DiscreteDGP",
    "BiasReport",
    "BoundPair",
    "ScoreCheck",
    "SyntheticOracle",
    "true_ratio",
    "projected_ratio",
    "balancing_score_error",
    "confounding_bias",
    "bias_decomposition",
    "corollary_bound",
    "joint_bias_metric",
    "check_generalized_score",
    "make_synthetic_dgp",
]


@dataclass(frozen=True)
class DiscreteDGP:
    """Finite-support process: points, source/target masses, outcome model."""

    support: np.ndarray
    p: np.ndarray
    q: np.ndarray
    m: np.ndarray
    noise_sd: float = 0.0
    propensity: np.ndarray | None = None

    def __post_init__(self):
        support = np.asarray(self.support, dtype=float)
        if support.ndim == 1:
            support = support[:, None]
        p = np.asarray(self.p, dtype=float).ravel()
        q = np.asarray(self.q, dtype=float).ravel()
        m = np.asarray(self.m, dtype=float).ravel()
        k = support.shape[0]
        if p.shape != (k,) or q.shape != (k,) or m.shape != (k,):
            raise ValueError("p, q, m must have one entry per support point")
        if abs(p.sum() - 1.0) > 1e-12 or abs(q.sum() - 1.0) > 1e-12:
            raise ValueError("p and q must sum to 1")
        if np.any(p < 0) or np.any(q < 0):
            raise ValueError("p and q must be nonnegative")
        if np.any((q > 0) & (p == 0)):
            raise ValueError("target mass outside source support (no absolute continuity)")
        if not np.all(np.isfinite(m)):
            raise ValueError("outcome model must be finite")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be nonnegative")
        if self.propensity is not None:
            e = np.asarray(self.propensity, dtype=float).ravel()
            if e.shape != (k,) or np.any(e <= 0) or np.any(e >= 1):
                raise ValueError("propensity table must be in (0, 1) per point")
            object.__setattr__(self, "propensity", e)
        for name, val in (("support", support), ("p", p), ("q", q), ("m", m)):
            object.__setattr__(self, name, val)

    @property
    def k(self) -> int:
        return self.support.shape[0]


def true_ratio(dgp: DiscreteDGP) -> np.ndarray:
    """Density ratio q/p per support point (0 where both masses vanish)."""
    w = np.zeros(dgp.k)
    alive = dgp.p > 0
    w[alive] = dgp.q[alive] / dgp.p[alive]
    return w


def _phi_groups(dgp: DiscreteDGP, phi) -> list[np.ndarray]:
    z = as_rep_matrix(phi(dgp.support))
    if z.shape[0] != dgp.k:
        raise ValueError("representation must map every support point")
    order = {}
    for i, row in enumerate(z):
        order.setdefault(row.tobytes(), []).append(i)
    return [np.array(ix) for ix in order.values()]


def projected_ratio(dgp: DiscreteDGP, phi) -> np.ndarray:
    """E_P[w*(X) | phi(X)] per support point.

    Within a group of equal phi-values this is the p-weighted mean of w*,
    which must coincide with the group's q-mass over p-mass; both forms
    are computed and compared.
    """
    w_star = true_ratio(dgp)
    proj = np.zeros(dgp.k)
    for g in _phi_groups(dgp, phi):
        pg = dgp.p[g].sum()
        if pg == 0:
            continue
        by_mean = float(dgp.p[g] @ w_star[g]) / pg
        by_mass = float(dgp.q[g].sum()) / pg
        if abs(by_mean - by_mass) > 1e-14 * max(1.0, abs(by_mass)):
            raise AssertionError("projection forms disagree beyond rounding")
        proj[g] = by_mass
    return proj


def _projected_outcome(dgp: DiscreteDGP, phi) -> np.ndarray:
    """E_P[m(X) | phi(X)] per support point."""
    proj = np.zeros(dgp.k)
    for g in _phi_groups(dgp, phi):
        pg = dgp.p[g].sum()
        proj[g] = float(dgp.p[g] @ dgp.m[g]) / pg if pg > 0 else dgp.m[g].mean()
    return proj


def balancing_score_error(dgp: DiscreteDGP, phi) -> float:
    """L2(P) distance between the true weights and their phi-projection.

    Zero exactly when the representation is a (generalized) balancing
    score, i.e. when w* is a function of phi.
    """
    gap = true_ratio(dgp) - projected_ratio(dgp, phi)
    return float(np.sqrt(dgp.p @ gap**2))


def confounding_bias(dgp: DiscreteDGP, phi) -> float:
    """Target-expectation gap between the outcome model and its projection.

    Three algebraically equal forms are evaluated: the direct definition
    E_Q[m_phi - m], the covariance form E_P[(m_phi - m)(w* - proj)], and
    the product form -E_P[m (w* - proj)]. Disagreement beyond rounding is
    a bug, not an input property.
    """
    w_star = true_ratio(dgp)
    proj = projected_ratio(dgp, phi)
    m_phi = _projected_outcome(dgp, phi)
    direct = float(dgp.q @ (m_phi - dgp.m))
    covariance = float(dgp.p @ ((m_phi - dgp.m) * (w_star - proj)))
    product = -float(dgp.p @ (dgp.m * (w_star - proj)))
    scale = max(1.0, abs(direct))
    if abs(direct - covariance) > 1e-12 * scale or abs(direct - product) > 1e-12 * scale:
        raise AssertionError("confounding bias forms disagree beyond rounding")
    return product


@dataclass(frozen=True)
class BiasReport:
    """Exact bias decomposition of one weighting against one representation."""

    total_bias: float
    bias_wrt_representation: float
    chosen_weights_bias: float
    confounding_bias: float
    bse: float
    ipm_bound_term: float
    corollary_bound: float

    def to_text(self) -> str:
        lines = [f"{key}\t{getattr(self, key):.17g}" for key in self.__dataclass_fields__]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "BiasReport":
        values = {}
        for line in text.strip().splitlines():
            key, _, raw = line.partition("\t")
            values[key] = float(raw)
        return cls(**values)


def _pseudo_outcome_norm(dgp: DiscreteDGP) -> float:
    return float(np.sqrt(dgp.p @ dgp.m**2 + dgp.noise_sd**2))


def _weights_follow_phi(dgp: DiscreteDGP, phi, w: np.ndarray, tol: float) -> bool:
    for g in _phi_groups(dgp, phi):
        if np.max(np.abs(w[g] - w[g].mean()), initial=0.0) > tol:
            return False
    return True


def bias_decomposition(dgp: DiscreteDGP, phi, w) -> BiasReport:
    """Split the bias of weights w into its three exact components.

    w is per-support-point with E_P[w] = 1. The three terms sum to the
    total E_{P^w}[m] - E_Q[m] by construction; this is asserted, as is the
    bound when w is a function of phi.
    """
    w = np.asarray(w, dtype=float).ravel()
    if w.shape != (dgp.k,):
        raise ValueError("need one weight per support point")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    if abs(dgp.p @ w - 1.0) > 1e-9:
        raise ValueError("weights must satisfy E_P[w] = 1")

    m_phi = _projected_outcome(dgp, phi)
    total = float(dgp.p @ (w * dgp.m) - dgp.q @ dgp.m)
    wrt_rep = float(dgp.p @ (w * m_phi) - dgp.q @ m_phi)
    chosen = float(dgp.p @ (w * (dgp.m - m_phi)))
    confound = float(dgp.q @ (m_phi - dgp.m))
    if abs(total - (wrt_rep + chosen + confound)) > 1e-10 * max(1.0, abs(total)):
        raise AssertionError("decomposition terms do not sum to the total bias")

    bse = balancing_score_error(dgp, phi)
    ipm_term = abs(wrt_rep)
    bound = ipm_term + _pseudo_outcome_norm(dgp) * bse
    if _weights_follow_phi(dgp, phi, w, 1e-9) and abs(total) > bound + 1e-9:
        raise AssertionError("bias exceeds its bound for phi-measurable weights")
    return BiasReport(
        total_bias=total,
        bias_wrt_representation=wrt_rep,
        chosen_weights_bias=chosen,
        confounding_bias=confound,
        bse=bse,
        ipm_bound_term=ipm_term,
        corollary_bound=bound,
    )


class BoundPair(NamedTuple):
    lhs: float
    rhs: float
    mmd_rhs: float | None = None


def corollary_bound(dgp: DiscreteDGP, phi, w, kernel: Kernel | None = None) -> BoundPair:
    """|total bias| against IPM + ||Y~||*BSE for phi-measurable weights.

    The IPM is instantiated sharply on the singleton class containing the
    projected outcome model, so the right-hand side is computable exactly.
    When a kernel is given, an MMD-based right-hand side on the phi-images
    is also reported for context. Weights that are not a function of phi
    are rejected; the bound is not claimed for them.
    """
    w = np.asarray(w, dtype=float).ravel()
    if not _weights_follow_phi(dgp, phi, w, 1e-9):
        raise ValueError("weights are not a function of the representation; bound not claimed")
    report = bias_decomposition(dgp, phi, w)
    lhs = abs(report.total_bias)
    rhs = report.corollary_bound
    mmd_rhs = None
    if kernel is not None:
        z = as_rep_matrix(phi(dgp.support))
        a = dgp.p * w - dgp.q  # signed measure of the embedding gap
        gram_zz = np.array([[kernel_eval(kernel, zi, zj) for zj in z] for zi in z])
        mmd_sq = float(a @ gram_zz @ a)
        mmd_rhs = float(np.sqrt(max(mmd_sq, 0.0)) + _pseudo_outcome_norm(dgp) * report.bse)
    if lhs > rhs + 1e-9:
        raise AssertionError("sharp bound violated; this indicates a bug")
    return BoundPair(lhs=lhs, rhs=rhs, mmd_rhs=mmd_rhs)


def joint_bias_metric(family: TaskFamily, weights_per_task, target_model_values) -> float:
    """Root of the task-averaged squared gap between weighted pseudo-outcome
    means and target-sample outcome-model means."""
    if len(weights_per_task) != len(family.tasks) or len(target_model_values) != len(family.tasks):
        raise ValueError("need weights and target model values for every task")
    acc = 0.0
    for task, p, w, mq in zip(family.tasks, family.p, weights_per_task, target_model_values):
        if task.source_pseudo_y is None:
            raise ValueError(f"task {task.index!r} has no pseudo-outcomes")
        w = np.asarray(w, dtype=float).ravel()
        mq = np.asarray(mq, dtype=float).ravel()
        if w.shape != (task.n_source,) or mq.shape != (task.n_target,):
            raise ValueError("weight or model-value length mismatch")
        gap = float(np.mean(w * task.source_pseudo_y) - np.mean(mq))
        acc += p * gap**2
    return float(np.sqrt(acc))


class ScoreCheck(NamedTuple):
    passed: bool
    magnitude: float


def check_generalized_score(dgp: DiscreteDGP, phi, which: str, tol: float = 1e-10) -> ScoreCheck:
    """Test whether phi is a generalized balancing / prognostic /
    deconfounding score on the discrete support."""
    if which == "balancing":
        mag = float(np.max(np.abs(true_ratio(dgp) - projected_ratio(dgp, phi)), initial=0.0))
    elif which == "prognostic":
        mag = float(np.max(np.abs(dgp.m - _projected_outcome(dgp, phi)), initial=0.0))
    elif which == "deconfounding":
        mag = abs(confounding_bias(dgp, phi))
    else:
        raise ValueError(f"unknown score check {which!r}")
    return ScoreCheck(passed=mag <= tol, magnitude=mag)


@dataclass(frozen=True)
class SyntheticOracle:
    """Pointwise ground truth for the Gaussian synthetic benchmark.

    Treatment (or trial membership) follows a logistic link in the first
    `confounder_dim` coordinates; the outcome model is linear plus one
    interaction in the same coordinates. Marginal class probabilities are
    Monte Carlo estimates whose standard errors are reported alongside.
    """

    d: int
    confounder_dim: int
    gamma: np.ndarray
    slope: np.ndarray
    interaction: float
    intercept: float
    effect_intercept: float
    effect_slope: np.ndarray
    noise_sd: float
    marginal_treated: float
    marginal_se: float

    def _conf(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return x[:, : self.confounder_dim]

    def propensity(self, x: np.ndarray) -> np.ndarray:
        if self.confounder_dim == 0:
            return np.full(np.atleast_2d(x).shape[0], 0.5)
        logit = self._conf(x) @ self.gamma
        return 1.0 / (1.0 + np.exp(-logit))

    def outcome_model(self, x: np.ndarray, arm: int) -> np.ndarray:
        c = self._conf(x)
        base = np.full(c.shape[0], self.intercept)
        if self.confounder_dim >= 1:
            base = base + c @ self.slope
        if self.confounder_dim >= 2:
            base = base + self.interaction * c[:, 0] * c[:, 1]
        effect = np.full(c.shape[0], self.effect_intercept)
        if self.confounder_dim >= 1:
            effect = effect + c @ self.effect_slope
        return base + arm * effect

    def density_ratio(self, x: np.ndarray, arm: int) -> np.ndarray:
        """True weights for the arm task: P(A=a) / P(A=a|x)."""
        e = self.propensity(x)
        p_arm = e if arm == 1 else 1.0 - e
        marginal = self.marginal_treated if arm == 1 else 1.0 - self.marginal_treated
        return marginal / p_arm

    def population_mean(self, f, arm: int | None = None, n_draws: int = 100_000, seed: int = 0):
        """Monte Carlo E[f(X)] (or E[f(X)|A=arm]) with its standard error."""
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((n_draws, self.d))
        values = np.asarray(f(x), dtype=float).ravel()
        if arm is None:
            return float(values.mean()), float(values.std(ddof=1) / np.sqrt(n_draws))
        e = self.propensity(x)
        weight = e if arm == 1 else 1.0 - e
        marginal = weight.mean()
        ratio = values * weight / marginal
        return float(ratio.mean()), float(ratio.std(ddof=1) / np.sqrt(n_draws))


def make_synthetic_dgp(
    d: int,
    n_source: int,
    confounder_dim: int,
    seed: int,
    n_target: int = 0,
    framing: str = "treatment",
    noise_sd: float = 1.0,
):
    """Sample a benchmark dataset with its oracle handles.

    framing "treatment": one dataset of `n_source` rows with covariates,
    a confounded binary treatment, and outcomes; use with the ATT/ATE
    builders. framing "transport": a pair (rct, observational) where trial
    membership is confounded and the in-trial assignment is randomized.
    """
    if confounder_dim > d:
        raise ValueError("confounder_dim cannot exceed d")
    c = confounder_dim
    scale = 1.0 / np.sqrt(max(c, 1))

    # moderate confounding: the link keeps propensities well inside (0, 1)
    # so the density ratio stays in a learnable range at desk-scale n
    proto = SyntheticOracle(
        d=d,
        confounder_dim=c,
        gamma=np.full(c, 0.4 * scale),
        slope=np.full(c, 1.5 * scale),
        interaction=0.7 if c >= 2 else 0.0,
        intercept=1.0,
        effect_intercept=1.0,
        effect_slope=np.full(c, 0.5 * scale),
        noise_sd=noise_sd,
        marginal_treated=0.5,
        marginal_se=0.0,
    )
    if c == 0:
        oracle = proto  # assignment is exactly Bernoulli(1/2); no estimation needed
    else:
        marginal, marginal_se = proto.population_mean(
            proto.propensity, n_draws=100_000, seed=seed + 101
        )
        oracle = SyntheticOracle(
            **{
                **{f: getattr(proto, f) for f in proto.__dataclass_fields__},
                "marginal_treated": marginal,
                "marginal_se": marginal_se,
            }
        )

    rng = np.random.default_rng(seed)
    if framing == "treatment":
        x = rng.standard_normal((n_source, d))
        a = (rng.uniform(size=n_source) < oracle.propensity(x)).astype(int)
        noise = rng.standard_normal(n_source) * noise_sd
        y = np.where(a == 1, oracle.outcome_model(x, 1), oracle.outcome_model(x, 0)) + noise
        ds = Dataset(covariates=x, treatment=a, outcome=y)
        return ds, oracle
    if framing == "transport":
        if n_target <= 0:
            raise ValueError("transport framing needs n_target > 0")
        rct_x = _rejection_sample(rng, oracle, n_source, d, member=True)
        obs_x = _rejection_sample(rng, oracle, n_target, d, member=False)
        a = (rng.uniform(size=n_source) < 0.5).astype(int)
        noise = rng.standard_normal(n_source) * noise_sd
        y = np.where(a == 1, oracle.outcome_model(rct_x, 1), oracle.outcome_model(rct_x, 0)) + noise
        rct = Dataset(covariates=rct_x, treatment=a, outcome=y)
        obs = Dataset(covariates=obs_x)
        return (rct, obs), oracle
    raise ValueError(f"unknown framing {framing!r}")


def _rejection_sample(rng, oracle: SyntheticOracle, n: int, d: int, member: bool) -> np.ndarray:
    rows = []
    while len(rows) < n:
        x = rng.standard_normal((4 * n, d))
        e = oracle.propensity(x)
        accept = rng.uniform(size=4 * n) < (e if member else 1.0 - e)
        rows.extend(x[accept])
    return np.array(rows[:n])
