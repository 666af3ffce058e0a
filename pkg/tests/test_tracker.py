import warnings

import numpy as np
import pytest
from oracles import gaussian_conditioning, gls_random_walk, textbook_kalman_rts

from evomrc.errors import ContractError
from evomrc.task_stats import ChangeEstimate, TaskMoments
from evomrc.tracker import (
    TrackedEstimate,
    adapt_dbar,
    backward_step,
    dump_snapshot,
    forward_step,
    initial_estimate,
    kin_backward_step,
    kin_forward_step,
    kin_initial_state,
    kin_smooth_sequence,
    load_snapshot,
    noise_vector,
    predict_step,
    smooth_sequence,
    transition_matrix,
)


def mom(j, tau, s):
    tau = np.atleast_1d(np.asarray(tau, float))
    return TaskMoments(j, np.asarray(1), tau, np.atleast_1d(np.asarray(s, float)))


def fwd(j, tau, s):
    return TrackedEstimate(j, "forward", np.atleast_1d(np.asarray(tau, float)), np.atleast_1d(np.asarray(s, float)), j)


def run_chain(tau, s, d):
    fs = [initial_estimate(mom(1, tau[0], s[0]))]
    for j in range(2, len(tau) + 1):
        fs.append(forward_step(fs[-1], mom(j, tau[j - 1], s[j - 1]), ChangeEstimate(j, np.atleast_1d(d[j - 1]), 1)))
    ch = [ChangeEstimate(j + 1, np.atleast_1d(d[j]), 1) for j in range(len(tau))]
    return fs, ch


class TestForward:
    def test_equal_precision_average(self):
        out = forward_step(fwd(1, 0.0, 1.0), mom(2, 2.0, 1.0), 0.0)
        np.testing.assert_allclose([out.tau_hat[0], out.s_hat[0]], [1.0, 0.5])

    def test_huge_change_returns_sample_mean(self):
        out = forward_step(fwd(1, 0.0, 1.0), mom(2, 2.0, 0.3), 1e12)
        np.testing.assert_allclose(out.tau_hat, [2.0], rtol=1e-11)
        np.testing.assert_allclose(out.s_hat, [0.3], rtol=1e-11)

    def test_three_task_chain_frozen(self):
        # normal-equations solution of the chain, frozen as exact fractions
        fs, ch = run_chain([0.0, 1.0, 3.0], [0.25] * 3, [0.0, 0.25, 0.25])
        np.testing.assert_allclose([f.tau_hat[0] for f in fs], [0.0, 2 / 3, 51 / 24], rtol=1e-14)
        np.testing.assert_allclose([f.s_hat[0] for f in fs], [0.25, 1 / 6, 5 / 32], rtol=1e-14)
        sm = smooth_sequence(fs, ch)
        np.testing.assert_allclose([e.tau_hat[0] for e in sm], [0.625, 1.25, 2.125], rtol=1e-14)
        np.testing.assert_allclose([e.s_hat[0] for e in sm], [0.15625, 0.125, 0.15625], rtol=1e-14)

    def test_index_mismatch(self):
        with pytest.raises(ContractError):
            forward_step(fwd(1, 0.0, 1.0), mom(3, 1.0, 1.0), 0.1)
        with pytest.raises(ContractError):
            forward_step(fwd(1, 0.0, 1.0), mom(2, 1.0, 1.0), ChangeEstimate(5, np.array([0.1]), 1))


class TestPredict:
    def test_inflation(self):
        out = predict_step(fwd(3, 1.0, 0.2), ChangeEstimate(4, np.array([0.05]), 2))
        assert out.task_index == 4 and out.horizon == "predicted" and out.through == 3
        np.testing.assert_allclose([out.tau_hat[0], out.s_hat[0]], [1.0, 0.25])

    def test_zero_change(self):
        np.testing.assert_array_equal(predict_step(fwd(1, 1.0, 0.2), 0.0).s_hat, [0.2])

    def test_chained(self):
        p1 = predict_step(fwd(1, 1.0, 0.2), 0.05)
        p2 = predict_step(TrackedEstimate(2, "forward", p1.tau_hat, p1.s_hat, 1), 0.05)
        np.testing.assert_allclose(p2.s_hat, [0.3])


class TestBackward:
    def test_zero_change_pools(self):
        nxt = TrackedEstimate(3, "smoothed", np.array([2.0]), np.array([0.1]), 5)
        out = backward_step(nxt, fwd(2, 1.0, 0.4), 0.0)
        np.testing.assert_array_equal([out.tau_hat[0], out.s_hat[0]], [2.0, 0.1])

    def test_infinite_change_keeps_forward(self):
        nxt = TrackedEstimate(3, "smoothed", np.array([2.0]), np.array([0.1]), 5)
        out = backward_step(nxt, fwd(2, 1.0, 0.4), 1e15)
        np.testing.assert_allclose([out.tau_hat[0], out.s_hat[0]], [1.0, 0.4], rtol=1e-12)

    def test_smooth_k1_and_b0(self):
        fs, ch = run_chain([0.5], [0.1], [0.0])
        (only,) = smooth_sequence(fs, ch)
        assert only.tau_hat[0] == 0.5 and only.horizon == "smoothed"
        fs, ch = run_chain([0.0, 1.0, 2.0], [0.1] * 3, [0, 0.1, 0.1])
        (last,) = smooth_sequence(fs, ch, b=0)
        np.testing.assert_array_equal(last.tau_hat, fs[-1].tau_hat)

    def test_composition(self):
        fs, ch = run_chain([0.0, 1.0, 2.0, 0.5], [0.1, 0.2, 0.3, 0.1], [0, 0.1, 0.2, 0.05])
        sm = smooth_sequence(fs, ch)
        cur = TrackedEstimate(4, "smoothed", fs[3].tau_hat, fs[3].s_hat, 4)
        for j in (3, 2, 1):
            cur = backward_step(cur, fs[j - 1], ch[j])
            np.testing.assert_array_equal(cur.tau_hat, sm[j - 1].tau_hat)

    def test_b_clamped_with_warning(self):
        fs, ch = run_chain([0.0, 1.0], [0.1, 0.1], [0, 0.1])
        with pytest.warns(RuntimeWarning):
            assert len(smooth_sequence(fs, ch, b=5)) == 2

    def test_matches_gls_vector_chain(self, rng):
        k, m = 5, 3
        tau, s, d = rng.normal(size=(k, m)), rng.uniform(0.05, 1, (k, m)), rng.uniform(0.01, 0.5, (k, m))
        fs, ch = run_chain(list(tau), list(s), list(d))
        sm = smooth_sequence(fs, ch)
        for i in range(m):
            est, var = gls_random_walk(tau[:, i], s[:, i], d[:, i])
            np.testing.assert_allclose([e.tau_hat[i] for e in sm], est, rtol=1e-10)
            np.testing.assert_allclose([e.s_hat[i] for e in sm], var, rtol=1e-10)


class TestKinematic:
    def test_matrices(self):
        np.testing.assert_array_equal(transition_matrix(1, 1.0), [[1, 1], [0, 1]])
        np.testing.assert_array_equal(noise_vector(1, 1.0), [0.5, 1.0])
        np.testing.assert_allclose(transition_matrix(2, 2.0), [[1, 2, 2], [0, 1, 2], [0, 0, 1]])
        np.testing.assert_allclose(noise_vector(2, 2.0), [8 / 6, 2.0, 2.0])

    def test_order_zero_reduces(self, rng):
        k, m, delta = 6, 3, 1.5
        tau, s, db = rng.normal(size=(k, m)), rng.uniform(0.05, 1, (k, m)), rng.uniform(0.01, 0.5, (k, m))
        fs, ch = run_chain(list(tau), list(s), list(delta**2 * db))
        ks = [kin_initial_state(mom(1, tau[0], s[0]), 0)]
        for j in range(2, k + 1):
            ks.append(kin_forward_step(ks[-1], mom(j, tau[j - 1], s[j - 1]), db[j - 1], delta))
        for a, b in zip(fs, ks):
            np.testing.assert_allclose(b.as_estimate().tau_hat, a.tau_hat, rtol=1e-12, atol=1e-14)
            np.testing.assert_allclose(b.as_estimate().s_hat, a.s_hat, rtol=1e-12)
        sm = smooth_sequence(fs, ch)
        ksm = kin_smooth_sequence(ks, list(db), [delta] * k)
        for a, b in zip(sm, ksm):
            np.testing.assert_allclose(b.as_estimate().tau_hat, a.tau_hat, rtol=1e-12, atol=1e-14)
            np.testing.assert_allclose(b.as_estimate().s_hat, a.s_hat, rtol=1e-12)

    def _kin_chain(self, rng, k, p=1, m=1):
        tau, s = rng.normal(size=(k, m)), rng.uniform(0.05, 1, (k, m))
        db, deltas = rng.uniform(0.01, 0.5, (k, m)), rng.uniform(0.5, 2.0, k)
        st = [kin_initial_state(mom(1, tau[0], s[0]), p)]
        for j in range(2, k + 1):
            st.append(kin_forward_step(st[-1], mom(j, tau[j - 1], s[j - 1]), db[j - 1], deltas[j - 1]))
        return tau, s, db, deltas, st

    def test_two_step_against_joint_gaussian(self, rng):
        tau, s, db, deltas, st = self._kin_chain(rng, 3)
        F = [None] + [transition_matrix(1, dl) for dl in deltas[1:]]
        g = [None] + [noise_vector(1, dl) for dl in deltas[1:]]
        P0 = np.diag([s[0, 0], 0.0])
        for upto in (2, 3):
            mean, cov = gaussian_conditioning(tau[:, 0], s[:, 0], F, g, db[:, 0], [tau[0, 0], 0.0], P0, upto)
            np.testing.assert_allclose(st[upto - 1].gamma[0], mean[-1], rtol=1e-9, atol=1e-12)
            np.testing.assert_allclose(st[upto - 1].Sigma[0], cov[-1], rtol=1e-9, atol=1e-12)

    def test_smoother_against_textbook_and_joint_gaussian(self, rng):
        k = 5
        tau, s, db, deltas, st = self._kin_chain(rng, k, p=1)
        sm = kin_smooth_sequence(st, list(db), list(deltas))
        F = [None] + [transition_matrix(1, dl) for dl in deltas[1:]]
        g = [None] + [noise_vector(1, dl) for dl in deltas[1:]]
        Q = [None] + [np.outer(gg, gg) * q for gg, q in zip(g[1:], db[1:, 0])]
        x0, P0 = [tau[0, 0], 0.0], np.diag([s[0, 0], 0.0])
        xf, Pf, xs, Ps = textbook_kalman_rts(tau[:, 0], s[:, 0], F, Q, x0, P0)
        mean, cov = gaussian_conditioning(tau[:, 0], s[:, 0], F, g, db[:, 0], x0, P0)
        for j in range(k):
            np.testing.assert_allclose(st[j].gamma[0], xf[j], rtol=1e-9, atol=1e-12)
            np.testing.assert_allclose(sm[j].gamma[0], xs[j], rtol=1e-9, atol=1e-12)
            np.testing.assert_allclose(sm[j].Sigma[0], Ps[j], rtol=1e-8, atol=1e-12)
            np.testing.assert_allclose(sm[j].gamma[0], mean[j], rtol=1e-8, atol=1e-10)
            np.testing.assert_allclose(sm[j].Sigma[0], cov[j], rtol=1e-7, atol=1e-10)

    def test_backward_at_k_is_identity(self, rng):
        *_, st = self._kin_chain(rng, 3, p=2, m=2)
        sm = kin_smooth_sequence(st, [np.full(2, 0.1)] * 3, b=0)
        np.testing.assert_array_equal(sm[0].gamma, st[-1].gamma)

    def test_singular_innovation_uses_pinv(self):
        cur = kin_initial_state(mom(1, 0.5, 0.0), 1)
        cur = type(cur)(1, "forward", cur.gamma, np.zeros_like(cur.Sigma), 1)
        nxt = type(cur)(2, "smoothed", cur.gamma, cur.Sigma, 2)
        with pytest.warns(RuntimeWarning, match="pseudo-inverse"):
            out = kin_backward_step(nxt, cur, np.zeros(1), 1.0)
        assert np.all(np.isfinite(out.gamma))


class TestAdaptDbar:
    def test_examples(self):
        np.testing.assert_allclose(adapt_dbar([0.7], [2.0], [4.0], 1.0), [0.0])
        np.testing.assert_allclose(adapt_dbar([0.7], [5.0], [1.0], 0.0), [0.7])
        np.testing.assert_allclose(adapt_dbar([0.2], [1.0], [0.4], 0.5), [0.4])


class TestSnapshot:
    def test_roundtrip(self, rng):
        e = TrackedEstimate(4, "smoothed", rng.normal(size=5), rng.uniform(size=5), 9)
        back = load_snapshot(dump_snapshot(e))
        assert (back.task_index, back.horizon, back.through) == (4, "smoothed", 9)
        np.testing.assert_array_equal(back.tau_hat, e.tau_hat)
        st = kin_initial_state(mom(2, rng.normal(size=3), rng.uniform(size=3)), 2)
        back = load_snapshot(dump_snapshot(st))
        np.testing.assert_array_equal(back.Sigma, st.Sigma)
