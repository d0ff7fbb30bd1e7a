import numpy as np
import pytest

from repweight.kernels import energy_kernel
from repweight.oracle import (
    BiasReport,
    DiscreteDGP,
    balancing_score_error,
    bias_decomposition,
    check_generalized_score,
    confounding_bias,
    corollary_bound,
    joint_bias_metric,
    make_synthetic_dgp,
    projected_ratio,
    true_ratio,
)
from repweight.tasks import TaskFamily, WeightingTask


def lookup_phi(values):
    """Representation defined point-by-point on a 1-d integer-coded support."""
    table = np.asarray(values, dtype=float)

    def phi(x):
        return table[np.asarray(x)[:, 0].astype(int)][:, None]

    return phi


def three_point_dgp(m=(0.0, 1.0, 2.0), noise_sd=0.0):
    return DiscreteDGP(
        support=np.arange(3.0)[:, None],
        p=np.array([0.2, 0.3, 0.5]),
        q=np.array([0.5, 0.3, 0.2]),
        m=np.array(m, dtype=float),
        noise_sd=noise_sd,
    )


MERGE_12 = lookup_phi([7.0, 7.0, 9.0])  # merges the first two support points


def random_dgp(rng, k_max=8):
    k = int(rng.integers(2, k_max + 1))
    p = rng.dirichlet(np.ones(k))
    q = rng.dirichlet(np.ones(k))
    p = np.maximum(p, 1e-3)
    p /= p.sum()
    return DiscreteDGP(
        support=np.arange(float(k))[:, None],
        p=p,
        q=q,
        m=rng.normal(size=k),
        noise_sd=float(rng.uniform(0, 0.5)),
    )


def random_merge_phi(rng, k):
    labels = rng.integers(0, max(1, k - 1), size=k).astype(float)
    return lookup_phi(labels), labels


class TestTrueRatio:
    def test_identical_distributions(self):
        dgp = DiscreteDGP(np.arange(2.0)[:, None], [0.5, 0.5], [0.5, 0.5], [0.0, 0.0])
        np.testing.assert_allclose(true_ratio(dgp), [1.0, 1.0])

    def test_simple_division(self):
        dgp = DiscreteDGP(np.arange(2.0)[:, None], [0.5, 0.5], [0.25, 0.75], [0.0, 0.0])
        np.testing.assert_allclose(true_ratio(dgp), [0.5, 1.5])

    def test_absolute_continuity_enforced(self):
        with pytest.raises(ValueError, match="absolute continuity"):
            DiscreteDGP(np.arange(3.0)[:, None], [0.5, 0.5, 0.0], [0.25, 0.25, 0.5], np.zeros(3))

    def test_mean_one_under_source(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            dgp = random_dgp(rng)
            assert dgp.p @ true_ratio(dgp) == pytest.approx(1.0, abs=1e-12)


class TestProjectedRatio:
    def test_injective_phi_identity(self):
        dgp = three_point_dgp()
        phi = lookup_phi([0.0, 1.0, 2.0])
        np.testing.assert_allclose(projected_ratio(dgp, phi), true_ratio(dgp))

    def test_constant_phi_all_ones(self):
        dgp = three_point_dgp()
        phi = lookup_phi([5.0, 5.0, 5.0])
        np.testing.assert_allclose(projected_ratio(dgp, phi), np.ones(3))

    def test_hand_enumerated_merge(self):
        dgp = three_point_dgp()
        proj = projected_ratio(dgp, MERGE_12)
        np.testing.assert_allclose(proj, [1.6, 1.6, 0.4])
        assert dgp.p @ proj == pytest.approx(1.0, abs=1e-12)

    def test_projection_has_source_mean_one(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            dgp = random_dgp(rng)
            phi, _ = random_merge_phi(rng, dgp.k)
            proj = projected_ratio(dgp, phi)
            assert dgp.p @ proj == pytest.approx(1.0, abs=1e-12)


class TestBalancingScoreError:
    def test_injective_phi_zero(self):
        dgp = three_point_dgp()
        assert balancing_score_error(dgp, lookup_phi([0, 1, 2])) == 0.0

    def test_constant_phi_equals_sd_of_ratio(self):
        dgp = DiscreteDGP(np.arange(2.0)[:, None], [0.5, 0.5], [0.25, 0.75], [0.0, 0.0])
        got = balancing_score_error(dgp, lookup_phi([1.0, 1.0]))
        assert got == pytest.approx(0.5)  # sqrt(0.5*0.25 + 0.5*0.25)

    def test_monotone_transform_of_ratio_is_balancing(self):
        rng = np.random.default_rng(2)
        dgp = random_dgp(rng)
        w = true_ratio(dgp)
        phi = lookup_phi(3.0 * w + 1.0)
        assert balancing_score_error(dgp, phi) <= 1e-14


class TestConfoundingBias:
    def test_injective_phi_zero(self):
        assert confounding_bias(three_point_dgp(), lookup_phi([0, 1, 2])) == 0.0

    def test_constant_outcome_model_zero(self):
        dgp = three_point_dgp(m=(4.0, 4.0, 4.0))
        assert confounding_bias(dgp, MERGE_12) == pytest.approx(0.0, abs=1e-14)

    def test_hand_enumerated_value(self):
        dgp = three_point_dgp(m=(0.0, 1.0, 2.0))
        assert confounding_bias(dgp, MERGE_12) == pytest.approx(0.18, abs=1e-12)

    def test_three_forms_agree_on_random_fixtures(self):
        # the cross-check lives inside confounding_bias and raises on failure
        rng = np.random.default_rng(3)
        for _ in range(100):
            dgp = random_dgp(rng)
            phi, _ = random_merge_phi(rng, dgp.k)
            value = confounding_bias(dgp, phi)
            assert np.isfinite(value)


class TestBiasDecomposition:
    def test_true_weights_zero_total(self):
        dgp = three_point_dgp()
        report = bias_decomposition(dgp, MERGE_12, true_ratio(dgp))
        assert report.total_bias == pytest.approx(0.0, abs=1e-12)
        # the true weights match every target expectation, so the term at the
        # representation level vanishes and the other two cancel exactly
        assert report.bias_wrt_representation == pytest.approx(0.0, abs=1e-12)
        assert report.chosen_weights_bias == pytest.approx(
            -report.confounding_bias, abs=1e-12
        )

    def test_uniform_weights_injective_phi(self):
        dgp = three_point_dgp()
        report = bias_decomposition(dgp, lookup_phi([0, 1, 2]), np.ones(3))
        assert report.chosen_weights_bias == pytest.approx(0.0, abs=1e-12)
        assert report.confounding_bias == pytest.approx(0.0, abs=1e-12)
        expected = dgp.p @ dgp.m - dgp.q @ dgp.m
        assert report.total_bias == pytest.approx(expected, abs=1e-12)

    def test_phi_measurable_weights_zero_chosen_bias(self):
        dgp = three_point_dgp()
        w = np.array([1.2, 1.2, 1.0])  # constant on the merged pair
        w = w / (dgp.p @ w)
        report = bias_decomposition(dgp, MERGE_12, w)
        assert report.chosen_weights_bias == pytest.approx(0.0, abs=1e-12)

    def test_terms_sum_on_random_fixtures(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            dgp = random_dgp(rng)
            phi, labels = random_merge_phi(rng, dgp.k)
            w = rng.uniform(0.1, 2.0, size=dgp.k)
            w = w / (dgp.p @ w)
            report = bias_decomposition(dgp, phi, w)
            total = (
                report.bias_wrt_representation
                + report.chosen_weights_bias
                + report.confounding_bias
            )
            assert report.total_bias == pytest.approx(total, abs=1e-10)

    def test_weight_validation(self):
        dgp = three_point_dgp()
        with pytest.raises(ValueError, match="E_P"):
            bias_decomposition(dgp, MERGE_12, np.ones(3) * 2.0)


class TestCorollaryBound:
    def phi_measurable_weights(self, rng, dgp, labels):
        w = rng.uniform(0.1, 2.0, size=dgp.k)
        for lab in np.unique(labels):
            w[labels == lab] = w[labels == lab][0]
        return w / (dgp.p @ w)

    def test_true_weights_injective_phi_both_zero(self):
        dgp = three_point_dgp()
        pair = corollary_bound(dgp, lookup_phi([0, 1, 2]), true_ratio(dgp))
        assert pair.lhs == pytest.approx(0.0, abs=1e-12)
        assert pair.rhs == pytest.approx(0.0, abs=1e-12)

    def test_constant_phi_uniform_weights(self):
        dgp = three_point_dgp()
        uniform = np.ones(3)
        pair = corollary_bound(dgp, lookup_phi([1.0, 1.0, 1.0]), uniform)
        assert pair.lhs == pytest.approx(abs(dgp.p @ dgp.m - dgp.q @ dgp.m), abs=1e-12)
        assert pair.rhs >= pair.lhs - 1e-12

    def test_noise_only_raises_rhs(self):
        quiet = three_point_dgp(noise_sd=0.0)
        noisy = three_point_dgp(noise_sd=2.0)
        w = projected_ratio(quiet, MERGE_12)  # phi-measurable by construction
        a = corollary_bound(quiet, MERGE_12, w)
        b = corollary_bound(noisy, MERGE_12, w)
        assert b.rhs > a.rhs
        assert b.lhs == pytest.approx(a.lhs, abs=1e-12)

    def test_non_measurable_weights_rejected(self):
        dgp = three_point_dgp()
        w = np.array([0.4, 1.9, 1.0])
        w = w / (dgp.p @ w)
        with pytest.raises(ValueError, match="not a function"):
            corollary_bound(dgp, MERGE_12, w)

    def test_holds_on_random_fixtures(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            dgp = random_dgp(rng)
            phi, labels = random_merge_phi(rng, dgp.k)
            w = self.phi_measurable_weights(rng, dgp, labels)
            pair = corollary_bound(dgp, phi, w)
            assert pair.lhs <= pair.rhs + 1e-9

    def test_mmd_variant_reported(self):
        dgp = three_point_dgp()
        pair = corollary_bound(dgp, MERGE_12, projected_ratio(dgp, MERGE_12), kernel=energy_kernel())
        assert pair.mmd_rhs is not None and np.isfinite(pair.mmd_rhs)


class TestJointBiasMetric:
    def family(self, pseudo=(1.0, 2.0)):
        task = WeightingTask(
            index=0,
            source_x=np.zeros((2, 1)),
            target_x=np.zeros((3, 1)),
            source_pseudo_y=np.array(pseudo),
        )
        return TaskFamily((task,), np.array([1.0]))

    def test_zero_when_weighted_mean_matches(self):
        fam = self.family()
        # weighted mean of (1, 2) with weights (1, 1) is 1.5
        assert joint_bias_metric(fam, [np.ones(2)], [np.full(3, 1.5)]) == 0.0

    def test_two_task_hand_value(self):
        t0 = WeightingTask(0, np.zeros((1, 1)), np.zeros((1, 1)), np.array([0.3]))
        t1 = WeightingTask(1, np.zeros((1, 1)), np.zeros((1, 1)), np.array([-0.4]))
        fam = TaskFamily((t0, t1), np.array([0.5, 0.5]))
        got = joint_bias_metric(fam, [np.ones(1), np.ones(1)], [np.zeros(1), np.zeros(1)])
        assert got == pytest.approx(np.sqrt(0.5 * 0.09 + 0.5 * 0.16))

    def test_matches_independent_recomputation(self):
        rng = np.random.default_rng(6)
        tasks, weights, values, p = [], [], [], rng.dirichlet(np.ones(3))
        for i in range(3):
            ns, nt = rng.integers(2, 10), rng.integers(2, 10)
            tasks.append(
                WeightingTask(i, rng.normal(size=(ns, 2)), rng.normal(size=(nt, 2)),
                              rng.normal(size=ns))
            )
            w = rng.uniform(0.1, 2.0, size=ns)
            weights.append(w * ns / w.sum())
            values.append(rng.normal(size=nt))
        fam = TaskFamily(tuple(tasks), p)
        got = joint_bias_metric(fam, weights, values)
        acc = 0.0
        for task, w, mq, prob in zip(tasks, weights, values, p):
            gap = np.sum(w * task.source_pseudo_y) / len(w) - np.sum(mq) / len(mq)
            acc += prob * gap * gap
        assert got == pytest.approx(np.sqrt(acc), abs=1e-12)

    def test_missing_pseudo_outcomes(self):
        task = WeightingTask(0, np.zeros((2, 1)), np.zeros((2, 1)))
        fam = TaskFamily((task,), np.array([1.0]))
        with pytest.raises(ValueError, match="pseudo-outcomes"):
            joint_bias_metric(fam, [np.ones(2)], [np.zeros(2)])


class TestGeneralizedScores:
    def test_ratio_bijection_is_balancing(self):
        rng = np.random.default_rng(7)
        dgp = random_dgp(rng)
        phi = lookup_phi(2.0 * true_ratio(dgp) + 3.0)
        assert check_generalized_score(dgp, phi, "balancing").passed

    def test_outcome_bijection_is_prognostic(self):
        rng = np.random.default_rng(8)
        dgp = random_dgp(rng)
        phi = lookup_phi(-1.5 * dgp.m + 0.5)
        assert check_generalized_score(dgp, phi, "prognostic").passed

    def test_either_score_implies_deconfounding(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            dgp = random_dgp(rng)
            for table in (true_ratio(dgp), dgp.m):
                phi = lookup_phi(table)
                assert check_generalized_score(dgp, phi, "deconfounding").passed

    def test_cancellation_fixture_deconfounds_only(self):
        # merged pairs {0,1} and {2,3}; within-group imbalances cancel in
        # the confounding bias while neither w* nor m is phi-measurable
        dgp = DiscreteDGP(
            support=np.arange(4.0)[:, None],
            p=np.array([0.25, 0.25, 0.25, 0.25]),
            q=np.array([0.35, 0.15, 0.15, 0.35]),
            m=np.array([1.0, 0.0, 2.0, 1.0]),
        )
        phi = lookup_phi([0.0, 0.0, 1.0, 1.0])
        assert check_generalized_score(dgp, phi, "deconfounding").passed
        assert not check_generalized_score(dgp, phi, "balancing").passed
        assert not check_generalized_score(dgp, phi, "prognostic").passed

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="unknown score check"):
            check_generalized_score(three_point_dgp(), MERGE_12, "other")


class TestBiasReportText:
    def test_roundtrip(self):
        dgp = three_point_dgp()
        report = bias_decomposition(dgp, MERGE_12, np.ones(3))
        again = BiasReport.from_text(report.to_text())
        assert again == report


class TestSyntheticDgp:
    def test_no_confounding_unit_ratio(self):
        ds, oracle = make_synthetic_dgp(d=4, n_source=200, confounder_dim=0, seed=0)
        ratio = oracle.density_ratio(ds.covariates, 1)
        np.testing.assert_allclose(ratio, np.ones(200))

    def test_seed_determinism(self):
        a, _ = make_synthetic_dgp(d=5, n_source=100, confounder_dim=2, seed=3)
        b, _ = make_synthetic_dgp(d=5, n_source=100, confounder_dim=2, seed=3)
        assert a.covariates.tobytes() == b.covariates.tobytes()
        assert a.outcome.tobytes() == b.outcome.tobytes()

    def test_confounder_projection_is_balancing_score(self):
        # the ratio depends on the first two coordinates only, so projecting
        # onto them has zero balancing score error; the complement does not
        _, oracle = make_synthetic_dgp(d=6, n_source=100, confounder_dim=2, seed=1)
        ratio = lambda x: oracle.density_ratio(x, 1)
        mean_sq, se = oracle.population_mean(
            lambda x: (ratio(x) - 1.0) ** 2, arm=1, n_draws=50_000, seed=5
        )
        # BSE^2 of the complement projection is Var(w*) > 0 (independence);
        # of the confounder projection it is exactly 0
        assert mean_sq > 3 * se
        conf = oracle.density_ratio(np.random.default_rng(2).normal(size=(50, 6)), 1)
        assert np.all(np.isfinite(conf))

    def test_transport_framing_shapes(self):
        (rct, obs), oracle = make_synthetic_dgp(
            d=4, n_source=60, confounder_dim=2, seed=2, n_target=40, framing="transport"
        )
        assert rct.n == 60 and obs.n == 40
        assert rct.outcome is not None and rct.treatment is not None

    def test_marginal_standard_error_reported(self):
        _, oracle = make_synthetic_dgp(d=3, n_source=50, confounder_dim=1, seed=4)
        assert 0 < oracle.marginal_se < 0.01
        assert 0.3 < oracle.marginal_treated < 0.7
