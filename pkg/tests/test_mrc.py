import numpy as np
import pytest
from oracles import lp_dual_optimum

from evomrc.errors import ConfigError, InputError
from evomrc.features import FeatureMap, identity_embedding
from evomrc.mrc import (
    MrcModel,
    SolverConfig,
    UncertaintySpec,
    build_constraints,
    classify_det,
    classify_prob,
    dump_model,
    error_bound,
    expected_error,
    label_subsets,
    load_model,
    objective,
    phi_of_mu,
    solve,
    solve_batch,
)


def unit_instance(rng, n=30, d=2, labels=2):
    fm = FeatureMap(identity_embedding(d), labels)
    X = rng.normal(size=(n, d))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    y = rng.integers(0, labels, n)
    Phi = fm.phi(X, y)
    tau = Phi.mean(0)
    lam = 0.7 * np.sqrt(Phi.var(0) / n)
    return fm, X, y, tau, lam


class TestConstraints:
    def test_single_instance_rows(self):
        fm = FeatureMap(identity_embedding(1), 2)
        c = build_constraints([[2.0]], fm)
        assert c.n_rows == 3
        np.testing.assert_array_equal(c.h, [1.0, 1.0, 0.5])
        np.testing.assert_array_equal(c.F, [[2, 0], [0, 2], [1, 1]])
        assert phi_of_mu(c.F, c.h, np.zeros(2))[0] == -0.5

    def test_duplicates_collapse(self):
        fm = FeatureMap(identity_embedding(1), 3)
        assert build_constraints([[1.0], [1.0], [2.0]], fm).n_rows == 2 * 7

    def test_subset_order(self):
        np.testing.assert_array_equal(label_subsets(3)[3], [0.5, 0.5, 0])
        assert label_subsets(4).shape == (15, 4)

    def test_label_limit(self):
        with pytest.raises(ConfigError, match="2\\^"):
            label_subsets(13)

    def test_no_anchors(self):
        with pytest.raises(InputError):
            build_constraints(np.zeros((0, 2)), FeatureMap(identity_embedding(2), 2))

    def test_argmax_tie_lowest(self):
        assert phi_of_mu(np.eye(2), np.zeros(2), [1.0, 1.0]) == (1.0, 0)


class TestSolver:
    def test_huge_widths_give_uniform(self, rng):
        fm, X, y, tau, _ = unit_instance(rng, labels=3)
        m = solve(UncertaintySpec(tau, np.full(tau.shape, 1e6)), build_constraints(X, fm))
        np.testing.assert_array_equal(m.mu, 0.0)
        assert m.R == pytest.approx(1 - 1 / 3)
        np.testing.assert_allclose(classify_prob(m, X, fm), 1 / 3)

    @pytest.mark.parametrize("seed", range(4))
    def test_close_to_lp_with_restarts(self, seed):
        fm, X, y, tau, lam = unit_instance(np.random.default_rng(seed))
        c = build_constraints(X, fm)
        opt, _ = lp_dual_optimum(tau, lam, c.F, c.h)
        m = solve(UncertaintySpec(tau, lam), c, SolverConfig(restarts=25))
        assert opt - 1e-9 <= m.R <= opt + 1e-3
        assert m.R == pytest.approx(objective(UncertaintySpec(tau, lam), c.F, c.h, m.mu))

    def test_warm_start_at_optimum(self, rng):
        fm, X, y, tau, lam = unit_instance(rng)
        c = build_constraints(X, fm)
        opt, mu_star = lp_dual_optimum(tau, lam, c.F, c.h)
        m = solve(UncertaintySpec(tau, lam), c, SolverConfig(warm_start=mu_star))
        assert m.R <= opt + 1e-9 and m.iterations == 300

    def test_batch_independent(self, rng):
        items = [unit_instance(rng, n=n) for n in (5, 20, 40)]
        cons = [build_constraints(it[1], it[0]) for it in items]
        taus = np.stack([it[3] for it in items])
        lams = np.stack([it[4] for it in items])
        together = solve_batch(taus, lams, cons, 200)
        for b in range(3):
            alone = solve_batch(taus[b:b + 1], lams[b:b + 1], [cons[b]], 200)[0]
            np.testing.assert_array_equal(alone.mu, together[b].mu)

    def test_negative_widths(self, rng):
        fm, X, y, tau, lam = unit_instance(rng)
        with pytest.raises(InputError):
            solve(UncertaintySpec(tau, -lam), build_constraints(X, fm))

    def test_near_origin_anchors_converge_slowly(self):
        # large optimal mu with anchors of norm <= 0.07: prescribed steps stall
        rng = np.random.default_rng(3)
        fm = FeatureMap(identity_embedding(2), 2)
        X = rng.uniform(-0.05, 0.05, (5, 2))
        Phi = fm.phi(X, rng.integers(0, 2, 5))
        tau, lam = Phi.mean(0), np.full(4, 1e-3)
        c = build_constraints(X, fm)
        opt, mu_star = lp_dual_optimum(tau, lam, c.F, c.h)
        m = solve(UncertaintySpec(tau, lam), c, SolverConfig(restarts=25))
        assert np.abs(mu_star).max() > 10
        assert m.R - opt > 0.01


class TestRules:
    def setup_method(self):
        self.fm = FeatureMap(identity_embedding(1), 2)

    def model(self, mu, phi):
        return MrcModel(np.asarray(mu, float), 0.3, phi, 2)

    def test_prob_example(self):
        P = classify_prob(self.model([2.0, 1.0], 0.0), [1.0], self.fm)
        np.testing.assert_allclose(P, [2 / 3, 1 / 3])

    def test_prob_uniform_fallback(self):
        P = classify_prob(self.model([-1.0, -1.0], 0.0), [[1.0], [2.0]], self.fm)
        np.testing.assert_array_equal(P, 0.5)

    def test_det_ties_to_smallest(self):
        assert classify_det(self.model([1.0, 1.0], 0.0), [1.0], self.fm) == 0
        np.testing.assert_array_equal(classify_det(self.model([1.0, 2.0], 0.0), [[1.0], [-1.0]], self.fm), [1, 0])

    def test_expected_error(self):
        prob, det = expected_error(self.model([2.0, 1.0], 0.0), [[1.0], [1.0]], [0, 1], self.fm)
        assert prob == pytest.approx(0.5) and det == 0.5


class TestBound:
    def test_examples(self):
        m = MrcModel(np.array([2.0, -1.0]), 0.3, 0.0, 2)
        spec = UncertaintySpec(np.array([0.5, 0.5]), np.array([0.1, 0.1]))
        assert error_bound(m, spec).correction is None
        b = error_bound(m, spec, np.array([0.55, 0.8]))
        assert b.correction == pytest.approx(0.2) and b.certified == pytest.approx(0.5)
        assert error_bound(m, spec, spec.tau).certified == 0.3


class TestPersistence:
    def test_roundtrip(self, rng):
        fm, X, y, tau, lam = unit_instance(rng)
        fm = fm.with_bound_from(X)
        m = MrcModel(rng.normal(size=4), 0.31, 0.12, 2, 0.7, 50)
        back, fm2 = load_model(dump_model(m, fm))
        np.testing.assert_array_equal(back.mu, m.mu)
        assert (back.phi_mu, back.R, back.lambda0) == (0.12, 0.31, 0.7) and fm2.describe() == fm.describe()
        np.testing.assert_array_equal(classify_prob(back, X, fm2), classify_prob(m, X, fm))

    def test_rejects_other_versions(self):
        with pytest.raises(InputError):
            load_model('{"format": "evomrc-model", "version": 99}')
        with pytest.raises(InputError):
            load_model('{"format": "nope"}')
