import csv

import numpy as np
import pytest

from evomrc.datagen import (
    CsvTaskSpec,
    HyperplaneStream,
    Task,
    TaskSequence,
    gen_hyperplane,
    hyperplane_labels,
    ingest_csv,
    random_walk_means,
    rep_rng,
    subsample,
    write_csv,
)
from evomrc.errors import InputError
from evomrc.features import FeatureMap, identity_embedding


def same_sequence(a, b):
    assert a.k == b.k and a.n_labels == b.n_labels
    for s, t in zip(a.tasks, b.tasks):
        np.testing.assert_array_equal(s.X, t.X)
        np.testing.assert_array_equal(s.y, t.y)
        np.testing.assert_array_equal(s.X_test, t.X_test)
        np.testing.assert_array_equal(s.y_test, t.y_test)


class TestHyperplane:
    def test_deterministic(self):
        spec = HyperplaneStream(k=5, seed=3)
        a, _ = gen_hyperplane(spec, rep=2)
        b, _ = gen_hyperplane(spec, rep=2)
        same_sequence(a, b)
        c, _ = gen_hyperplane(spec, rep=3)
        assert not np.array_equal(a.tasks[0].X, c.tasks[0].X)

    def test_rep_streams_independent_of_count(self):
        assert rep_rng(1, 4).random() == rep_rng(1, 4).random()
        assert rep_rng(1, 4).random() != rep_rng(1, 5).random()

    def test_zero_angle_stationary(self):
        _, oracle = gen_hyperplane(HyperplaneStream(angle=0, k=4))
        assert np.all(oracle.weights == oracle.weights[0])

    def test_quarter_turn(self):
        _, oracle = gen_hyperplane(HyperplaneStream(angle=5, k=19))
        np.testing.assert_allclose(oracle.weights[18], [0, 1], atol=1e-15)
        pts = np.array([[0.5, -0.5], [-0.5, 0.5], [0.0, -1.0]])
        np.testing.assert_array_equal(oracle.labels(pts, 1), [0, 1, 0])
        np.testing.assert_array_equal(oracle.labels(pts, 19), [1, 0, 1])

    def test_tie_goes_to_first_label(self):
        np.testing.assert_array_equal(hyperplane_labels([[0.0, 3.0]], np.array([1.0, 0.0])), [0])

    def test_random_walk_zero_step(self):
        _, oracle = gen_hyperplane(HyperplaneStream(mode="random_walk", sigma_w=0, k=6, dim=3))
        assert np.all(oracle.weights == oracle.weights[0])

    def test_label_balance(self):
        seq, _ = gen_hyperplane(HyperplaneStream(k=50, n=100, n_test=0, seed=9))
        y = np.concatenate([t.y for t in seq.tasks])
        assert abs(y.mean() - 0.5) <= 3 * np.sqrt(0.25 / y.size)

    def test_invalid_spec(self):
        with pytest.raises(InputError):
            HyperplaneStream(mode="spin")
        with pytest.raises(InputError):
            HyperplaneStream(dim=1)

    def test_oracle_mean(self):
        seq, oracle = gen_hyperplane(HyperplaneStream(k=2))
        fm = FeatureMap(identity_embedding(2), 2)
        tau = oracle.tau_inf(fm, 1, n_mc=200_000)
        # E[x1 ; x1 >= 0] = 1/4 under the uniform law
        np.testing.assert_allclose(tau, [0.25, 0, -0.25, 0], atol=5e-3)
        assert oracle.tau_inf(fm, 1, n_mc=200_000) is tau


def test_random_walk_means_shape(rng):
    assert random_walk_means(10, 3, 0.1, 0.01, rng).shape == (10, 3)


def write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


class TestCsv:
    def test_fixed_segments(self, tmp_path, rng):
        p = tmp_path / "d.csv"
        write_rows(p, ["a", "b", "label"], [[*rng.normal(size=2), rng.integers(1, 4)] for _ in range(600)])
        seq = ingest_csv(CsvTaskSpec(str(p)))
        assert seq.k == 2 and seq.tasks[0].n == 200 and seq.tasks[0].X_test.shape == (100, 2)
        assert seq.n_labels == 3 and seq.tasks[0].y.min() >= 0

    def test_short_tail_dropped(self, tmp_path):
        p = tmp_path / "d.csv"
        write_rows(p, ["a", "label"], [[i, 1 + i % 2] for i in range(650)])
        with pytest.warns(RuntimeWarning, match="dropped"):
            assert ingest_csv(CsvTaskSpec(str(p))).k == 2
        write_rows(p, ["a", "label"], [[i, 1 + i % 2] for i in range(701)])
        assert ingest_csv(CsvTaskSpec(str(p))).k == 3

    def test_task_column_order(self, tmp_path):
        p = tmp_path / "d.csv"
        rows = [[float(i), 1 + i % 2, "zeta" if i % 3 else "alpha"] for i in range(30)]
        write_rows(p, ["a", "label", "t"], rows)
        seq = ingest_csv(CsvTaskSpec(str(p), task_column="t", test_per_task=2))
        assert seq.k == 2
        assert seq.tasks[0].n + 2 == 10  # "alpha" rows come first (row 0)
        assert 0.0 in np.concatenate([seq.tasks[0].X[:, 0], seq.tasks[0].X_test[:, 0]])

    def test_missing_label_column(self, tmp_path):
        p = tmp_path / "d.csv"
        write_rows(p, ["a", "b"], [[1, 2]])
        with pytest.raises(InputError, match="label"):
            ingest_csv(CsvTaskSpec(str(p)))

    def test_line_numbers(self, tmp_path):
        p = tmp_path / "d.csv"
        write_rows(p, ["a", "label"], [[1, 1], [2, 2], ["oops", 1]])
        with pytest.raises(InputError, match="line 4"):
            ingest_csv(CsvTaskSpec(str(p)))
        write_rows(p, ["a", "label"], [[1, 1], [2, 0]])
        with pytest.raises(InputError, match="line 3"):
            ingest_csv(CsvTaskSpec(str(p)))

    def test_roundtrip(self, tmp_path):
        seq, _ = gen_hyperplane(HyperplaneStream(k=4, n=7, n_test=5, seed=2))
        p = tmp_path / "seq.csv"
        write_csv(seq, str(p))
        same_sequence(ingest_csv(CsvTaskSpec(str(p), task_column="task")), seq)


def test_subsample(rng):
    seq = TaskSequence((Task(np.arange(20.0)[:, None], np.zeros(20, dtype=int)),), 2)
    sub = subsample(seq, 5, rng)
    assert sub.tasks[0].n == 5 and np.all(np.diff(sub.tasks[0].X[:, 0]) > 0)
    with pytest.raises(InputError):
        subsample(seq, 21, rng)
