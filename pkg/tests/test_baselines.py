import numpy as np
import pytest

from repweight.baselines import (
    PropensityContext,
    entropy_balance,
    fit_logistic,
    ipw_weights,
    pca_representation,
    ps_vector_representation,
    uniform_weights,
)
from repweight.oracle import DiscreteDGP, balancing_score_error
from repweight.tasks import Dataset, WeightingTask


def task_of(xs, xt):
    return WeightingTask(index=0, source_x=xs, target_x=xt)


class TestFitLogistic:
    def test_separable_with_margin_and_ridge(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(200, 2))
        x[:, 0] += np.where(x[:, 0] > 0, 0.5, -0.5)  # margin around the boundary
        y = (x[:, 0] > 0).astype(float)
        model = fit_logistic(x, y, lam=1.0)
        assert np.all(np.isfinite(model.coefficients))
        acc = np.mean((model.predict_proba(x) > 0.5) == y)
        assert acc >= 0.9

    def test_constant_column_intercept_only(self):
        x = np.full((40, 1), 2.0)
        y = np.array([1.0] * 10 + [0.0] * 30)
        model = fit_logistic(x, y, lam=1e-4)
        assert abs(model.coefficients[1]) < 1e-5
        logit_rate = np.log(0.25 / 0.75)
        assert model.coefficients[0] + 2.0 * model.coefficients[1] == pytest.approx(
            logit_rate, abs=1e-6
        )

    def test_null_model_probabilities_near_half(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(400, 3))
        y = np.array([0.0, 1.0] * 200)
        model = fit_logistic(x, y, lam=1.0)
        probs = model.predict_proba(x)
        assert np.all(np.abs(probs - 0.5) <= 0.1)

    def test_perfect_separation_without_ridge(self):
        x = np.array([[-2.0], [-1.0], [1.0], [2.0]])
        y = np.array([0.0, 0.0, 1.0, 1.0])
        with pytest.raises(ValueError, match="regularization"):
            fit_logistic(x, y, lam=0.0)

    def test_unique_optimum_under_ridge(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(100, 2))
        y = (rng.uniform(size=100) < 0.5).astype(float)
        a = fit_logistic(x, y, lam=0.3)
        b = fit_logistic(x[::-1], y[::-1], lam=0.3)  # same data, different order
        np.testing.assert_allclose(a.coefficients, b.coefficients, atol=1e-6)

    def test_single_class_rejected(self):
        with pytest.raises(ValueError, match="both classes"):
            fit_logistic(np.ones((3, 1)), np.ones(3))


class TestIpwWeights:
    def test_constant_propensity_uniform(self):
        task = task_of(np.zeros((5, 1)), np.zeros((3, 1)))
        ctx = PropensityContext("att", lambda x: np.full(x.shape[0], 0.3))
        np.testing.assert_allclose(ipw_weights(task, ctx).w, np.ones(5))

    def test_two_point_ate_normalization(self):
        task = task_of(np.array([[0.0], [1.0]]), np.zeros((2, 1)))
        probs = {0.0: 0.25, 1.0: 0.5}
        ctx = PropensityContext("ate", lambda x: np.array([probs[v] for v in x[:, 0]]))
        np.testing.assert_allclose(ipw_weights(task, ctx).w, [4 / 3, 2 / 3])

    def test_true_propensity_recovers_density_ratio(self):
        # ATT on binary support: marginal (1/2, 1/2), e = (0.2, 0.6)
        # control law (2/3, 1/3); treated law (0.25, 0.75); ratio (0.375, 2.25)
        xs = np.array([[0.0]] * 4 + [[1.0]] * 2)  # exact control multiplicities
        task = task_of(xs, np.zeros((2, 1)))
        e = {0.0: 0.2, 1.0: 0.6}
        ctx = PropensityContext("att", lambda x: np.array([e[v] for v in x[:, 0]]))
        w = ipw_weights(task, ctx).w
        np.testing.assert_allclose(w, [0.375] * 4 + [2.25] * 2, atol=1e-10)

    def test_transport_ratio_direction(self):
        task = task_of(np.array([[0.0], [1.0]]), np.zeros((2, 1)))
        s = {0.0: 0.8, 1.0: 0.4}  # trial membership prob
        ctx = PropensityContext("transport", lambda x: np.array([s[v] for v in x[:, 0]]))
        w = ipw_weights(task, ctx).w
        assert w[1] > w[0]  # rare-in-trial points get more mass
        assert w.mean() == pytest.approx(1.0)

    def test_mean_one_and_nonnegative(self):
        rng = np.random.default_rng(3)
        task = task_of(rng.normal(size=(50, 2)), rng.normal(size=(20, 2)))
        ctx = PropensityContext("ate", lambda x: rng.uniform(0.1, 0.9, size=x.shape[0]))
        w = ipw_weights(task, ctx).w
        assert w.mean() == pytest.approx(1.0, abs=1e-12)
        assert np.all(w >= 0)

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="unknown task kind"):
            PropensityContext("other", lambda x: x)


class TestEntropyBalance:
    def test_already_balanced_gives_uniform(self):
        rng = np.random.default_rng(4)
        xs = rng.normal(size=(30, 2))
        task = task_of(xs, xs.copy())
        np.testing.assert_allclose(entropy_balance(task).w, np.ones(30), atol=1e-8)

    def test_two_point_hand_solution(self):
        # source {0, 1} uniform, target mean 3/4: weights (1/2, 3/2)
        xs = np.array([[0.0], [1.0]])
        xt = np.array([[0.75]])
        np.testing.assert_allclose(entropy_balance(task_of(xs, xt)).w, [0.5, 1.5], atol=1e-8)

    def test_infeasible_target_mean(self):
        xs = np.array([[0.0], [1.0]])
        xt = np.array([[1.5]])
        with pytest.raises(ValueError, match="outside source hull"):
            entropy_balance(task_of(xs, xt))

    def test_moments_match_and_weights_positive(self):
        rng = np.random.default_rng(5)
        xs = rng.normal(size=(80, 3))
        xt = rng.normal(size=(40, 3)) * 0.8 + 0.2
        task = task_of(xs, xt)
        w = entropy_balance(task).w
        np.testing.assert_allclose(
            (w[:, None] * xs).mean(axis=0), xt.mean(axis=0), atol=1e-8
        )
        assert np.all(w > 0)
        assert w.mean() == pytest.approx(1.0, abs=1e-12)


class TestPcaRepresentation:
    def test_rank_one_data(self):
        rng = np.random.default_rng(6)
        t = rng.normal(size=50)
        x = np.column_stack([t, 2 * t])  # a line in the plane
        rep = pca_representation(x, rep_dim=1)
        scores = rep(x)
        assert scores.var() == pytest.approx(x.var(axis=0).sum(), rel=1e-10)

    def test_orthonormal_loadings(self):
        rng = np.random.default_rng(7)
        rep = pca_representation(rng.normal(size=(60, 4)), rep_dim=3)
        gram_matrix = rep.components @ rep.components.T
        np.testing.assert_allclose(gram_matrix, np.eye(3), atol=1e-10)

    def test_full_rank_preserves_spectrum(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=(300, 3))
        rep = pca_representation(x, rep_dim=3)
        scores = rep(x)
        original = np.sort(np.linalg.eigvalsh(np.cov(x.T)))
        rotated = np.sort(np.linalg.eigvalsh(np.cov(scores.T)))
        np.testing.assert_allclose(rotated, original, atol=1e-8)

    def test_translation_invariance(self):
        # centering absorbs the shift: a fit on translated data scores the
        # translated inputs exactly like the original fit on the originals
        rng = np.random.default_rng(9)
        x = rng.normal(size=(40, 3))
        rep = pca_representation(x, rep_dim=2)
        rep_shifted = pca_representation(x + 5.0, rep_dim=2)
        np.testing.assert_allclose(rep_shifted(x + 5.0), rep(x), atol=1e-10)

    def test_rank_deficient_request_rejected(self):
        x = np.ones((10, 3))  # rank 0 after centering
        with pytest.raises(ValueError, match="rank"):
            pca_representation(x, rep_dim=1)


class TestPsVectorRepresentation:
    def test_binary_probability_vector(self):
        rng = np.random.default_rng(10)
        x = rng.normal(size=(120, 2))
        a = (x[:, 0] + rng.normal(size=120) > 0).astype(int)
        ds = Dataset(covariates=x, treatment=a)
        rep = ps_vector_representation(ds)
        vec = rep(x[:5])
        assert vec.shape == (5, 2)
        np.testing.assert_allclose(vec.sum(axis=1), np.ones(5), atol=1e-9)

    def test_true_propensity_vector_is_balancing_score(self):
        # discrete ATE framing: phi = true per-class probabilities has
        # zero balancing score error by enumeration
        support = np.array([[0.0], [1.0], [2.0]])
        marginal = np.array([0.3, 0.4, 0.3])
        e1 = np.array([0.2, 0.5, 0.8])  # P(A=1 | x)
        p_arm1 = marginal * e1 / (marginal @ e1)
        dgp = DiscreteDGP(support=support, p=p_arm1, q=marginal, m=np.zeros(3))
        phi = lambda x: np.column_stack(
            [1 - e1[x[:, 0].astype(int)], e1[x[:, 0].astype(int)]]
        )
        assert balancing_score_error(dgp, phi) <= 1e-10

    def test_constant_covariates_constant_representation(self):
        x = np.ones((30, 2))
        a = np.array([0, 1] * 15)
        rep = ps_vector_representation(Dataset(covariates=x, treatment=a))
        vec = rep(np.vstack([np.ones(2), np.zeros(2)]))
        np.testing.assert_allclose(vec[0], vec[1], atol=1e-9)


class TestUniformWeights:
    def test_all_ones(self):
        task = task_of(np.zeros((7, 1)), np.zeros((2, 1)))
        w = uniform_weights(task).w
        np.testing.assert_array_equal(w, np.ones(7))
        assert w.mean() == 1.0
