import csv

import numpy as np
import pytest

from qembed.data import Dataset, gen_synthetic
from qembed.metrics import (
    _count_transitions,
    average_precision,
    evaluate,
    export_diagnostics,
    kmeans_binarize,
    transition_report,
    write_transition_csv,
)
from qembed.network import Model, ModelDims
from qembed.numkit import RandomSource


def brute_force_ap(scores, relevance):
    """Independent oracle: explicit precision-at-rank loop over a stable sort."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    precisions, hits = [], 0
    for rank, idx in enumerate(order, start=1):
        if relevance[idx]:
            hits += 1
            precisions.append(hits / rank)
    return sum(precisions) / len(precisions)


class TestAveragePrecision:
    def test_all_relevant(self):
        assert average_precision([0.3, 0.2, 0.1], [1, 1, 1]) == 1.0

    def test_perfect_ranking(self):
        assert average_precision([0.9, 0.8, 0.1], [1, 1, 0]) == 1.0

    def test_hand_case(self):
        val = average_precision([0.9, 0.8, 0.7], [1, 0, 1])
        assert abs(val - (1.0 + 2.0 / 3.0) / 2.0) < 1e-12
        assert abs(val - 0.8333) < 1e-4

    def test_worst_ranking(self):
        # single relevant item at the bottom of 4
        assert abs(average_precision([0.4, 0.3, 0.2, 0.1], [0, 0, 0, 1]) - 0.25) < 1e-12

    def test_stable_tie_break(self):
        # equal scores keep input order
        assert average_precision([0.5, 0.5], [1, 0]) == 1.0
        assert average_precision([0.5, 0.5], [0, 1]) == 0.5

    def test_matches_brute_force(self):
        gen = np.random.Generator(np.random.PCG64(0))
        for _ in range(1000):
            n = int(gen.integers(1, 9))
            scores = gen.random(n)
            rel = (gen.random(n) > 0.5).astype(int)
            if rel.sum() == 0:
                rel[int(gen.integers(0, n))] = 1
            assert abs(average_precision(scores, rel) - brute_force_ap(scores, rel)) < 1e-12

    def test_rejects_no_relevant(self):
        with pytest.raises(ValueError):
            average_precision([0.5, 0.4], [0, 0])

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ValueError):
            average_precision([0.5, 0.4], [1])


class FakeClassifier:
    def __init__(self, scores):
        self.scores = scores

    def forward(self, x):
        return self.scores


class TestEvaluate:
    def test_known_scores(self):
        clean = np.array([[1, 0], [1, 0], [0, 1], [0, 1]])
        scores = np.array([[0.9, 0.1], [0.8, 0.2], [0.3, 0.7], [0.1, 0.6]])
        ds = Dataset(np.zeros((4, 2)), clean.copy(), clean_labels=clean)
        out = evaluate(FakeClassifier(scores), ds)
        assert out["per_class_ap"] == [1.0, 1.0]
        assert out["map"] == 1.0 and out["accuracy"] == 1.0

    def test_imperfect_scores(self):
        clean = np.array([[1, 0], [0, 1], [1, 0]])
        scores = np.array([[0.9, 0.1], [0.8, 0.2], [0.7, 0.6]])
        ds = Dataset(np.zeros((3, 2)), clean.copy(), clean_labels=clean)
        out = evaluate(FakeClassifier(scores), ds)
        # class 0: relevant at ranks 1, 3 -> (1 + 2/3)/2
        assert abs(out["per_class_ap"][0] - (1.0 + 2.0 / 3.0) / 2.0) < 1e-12
        assert abs(out["accuracy"] - 2.0 / 3.0) < 1e-12

    def test_requires_clean_labels(self):
        ds = Dataset(np.zeros((2, 2)), np.array([[1, 0], [0, 1]]))
        with pytest.raises(ValueError):
            evaluate(FakeClassifier(np.zeros((2, 2))), ds)


class TestKmeansBinarize:
    def test_well_separated(self):
        pts = np.vstack([np.zeros((5, 2)), np.full((5, 2), 10.0)])
        assign = kmeans_binarize(pts, seed=0)
        assert len(set(assign[:5])) == 1 and len(set(assign[5:])) == 1
        assert assign[0] != assign[5]

    def test_identical_points(self):
        assign = kmeans_binarize(np.ones((6, 3)), seed=0)
        assert np.array_equal(assign, np.zeros(6))

    def test_orientation_by_disagreement(self):
        pts = np.vstack([np.zeros((4, 2)), np.full((4, 2), 5.0)])
        dis = np.array([1.0] * 4 + [0.0] * 4)
        assign = kmeans_binarize(pts, seed=0, disagreement=dis)
        # the high-disagreement side must be cluster 1
        assert np.array_equal(assign[:4], np.ones(4))
        assert np.array_equal(assign[4:], np.zeros(4))

    def test_wss_not_worse_than_one_cluster(self):
        src = RandomSource(1)
        pts = src.gaussian((40, 3))
        assign = kmeans_binarize(pts, seed=0)
        wss2 = sum(((pts[assign == c] - pts[assign == c].mean(axis=0)) ** 2).sum()
                   for c in (0, 1) if np.any(assign == c))
        wss1 = ((pts - pts.mean(axis=0)) ** 2).sum()
        assert wss2 <= wss1 + 1e-9

    def test_needs_two_points(self):
        with pytest.raises(ValueError):
            kmeans_binarize(np.zeros((1, 2)), seed=0)


class TestTransitionCounting:
    def test_worked_example(self):
        # latents [A, A, B], noisy [A, B, B], clusters [T, N, T]
        latent = np.array([0, 0, 1])
        noisy = np.array([0, 1, 1])
        clusters = np.array([0, 1, 0])
        trust = _count_transitions(latent[clusters == 0], noisy[clusters == 0], 2)
        non = _count_transitions(latent[clusters == 1], noisy[clusters == 1], 2)
        assert np.array_equal(trust, [[1, 0], [0, 1]])
        assert np.array_equal(non, [[0, 1], [0, 0]])

    def test_totals(self):
        gen = np.random.Generator(np.random.PCG64(2))
        latent = gen.integers(0, 3, 50)
        noisy = gen.integers(0, 3, 50)
        counts = _count_transitions(latent, noisy, 3)
        assert counts.sum() == 50
        assert np.array_equal(counts.sum(axis=1),
                              np.bincount(latent, minlength=3))


def small_model_and_data():
    ds = gen_synthetic(3, 4, per_class=10, spread=1.0, seed=0)
    dims = ModelDims(n_features=4, n_classes=3, d_quality=2,
                     hidden_backbone=(6,), hidden_quality=4,
                     hidden_latent=4, hidden_decoder=4)
    return Model(dims, RandomSource(0)), ds


class TestTransitionReport:
    def test_counts_partition_dataset(self):
        model, ds = small_model_and_data()
        report, record = transition_report(model, ds, seed=1)
        assert report.trustworthy.sum() + report.non_trustworthy.sum() == ds.n_items
        assert report.cluster_assignment.shape == (ds.n_items,)
        assert record.mu.shape == (ds.n_items, 2)

    def test_deterministic(self):
        model, ds = small_model_and_data()
        r1, _ = transition_report(model, ds, seed=1)
        r2, _ = transition_report(model, ds, seed=1)
        assert np.array_equal(r1.trustworthy, r2.trustworthy)
        assert np.array_equal(r1.cluster_assignment, r2.cluster_assignment)


class TestExports:
    def test_csv_shapes_and_reexport(self, tmp_path):
        model, ds = small_model_and_data()
        out = tmp_path / "diag"
        export_diagnostics(model, ds, out, seed=1)
        for name, expected_rows in (("embeddings.csv", ds.n_items),
                                    ("posteriors.csv", ds.n_items),
                                    ("transition_trustworthy.csv", 3),
                                    ("transition_nontrustworthy.csv", 3)):
            with open(out / name) as fh:
                rows = list(csv.reader(fh))
            assert len(rows) == expected_rows + 1, name
        first = {n: (out / n).read_text() for n in
                 ("embeddings.csv", "posteriors.csv")}
        export_diagnostics(model, ds, out, seed=1)
        for n, text in first.items():
            assert (out / n).read_text() == text

    def test_posteriors_in_open_interval(self, tmp_path):
        model, ds = small_model_and_data()
        out = tmp_path / "diag"
        export_diagnostics(model, ds, out, seed=1)
        with open(out / "posteriors.csv") as fh:
            reader = csv.DictReader(fh)
            for row in reader:
                for key, val in row.items():
                    if key.startswith("qz") or key.startswith("yhat"):
                        assert 0.0 < float(val) < 1.0

    def test_transition_csv_format(self, tmp_path):
        counts = np.array([[3, 1], [0, 2]])
        path = tmp_path / "t.csv"
        write_transition_csv(path, counts)
        with open(path) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["latent", "c0", "c1"]
        assert rows[1] == ["c0", "3", "1"]
        assert rows[2] == ["c1", "0", "2"]
