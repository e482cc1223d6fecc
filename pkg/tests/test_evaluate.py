import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from igcl.errors import ParseError, UsageError
from igcl.evaluate import (
    C_GRID,
    EmbeddingTable,
    average_top_checkpoints,
    cluster_accuracy,
    clustering_metrics,
    export_embeddings,
    import_embeddings,
    kfold_probe,
    kmeans,
    linear_probe,
    probe_loss,
)
from igcl.gradcheck import check_gradients
from igcl.rng import make_rng
from igcl.tensor import Tensor


def blobs(rng, n_per, centers, sd=0.3):
    X = np.vstack([c + sd * rng.standard_normal((n_per, len(c))) for c in centers])
    y = np.repeat(np.arange(len(centers)), n_per)
    return EmbeddingTable(np.arange(len(y)), X, y)


class TestEmbeddingIO:
    def test_round_trip_bit_exact(self, tmp_path, rng):
        emb = EmbeddingTable(np.arange(5), rng.standard_normal((5, 3)) * 1e-7, np.array([0, 1, 0, 2, 1]))
        export_embeddings(emb, tmp_path / "e.csv")
        back = import_embeddings(tmp_path / "e.csv")
        assert back.vectors.tobytes() == emb.vectors.tobytes()
        np.testing.assert_array_equal(back.labels, emb.labels)
        np.testing.assert_array_equal(back.ids, emb.ids)

    def test_header(self, tmp_path):
        export_embeddings(EmbeddingTable([0], [[1.0, 2.0]]), tmp_path / "e.csv")
        assert (tmp_path / "e.csv").read_text().splitlines()[0] == "id,v0,v1"

    def test_empty_table(self, tmp_path):
        export_embeddings(EmbeddingTable(np.zeros(0), np.zeros((0, 2))), tmp_path / "e.csv")
        assert (tmp_path / "e.csv").read_text() == "id,v0,v1\n"
        assert len(import_embeddings(tmp_path / "e.csv")) == 0

    def test_karate_rows(self, tmp_path):
        from igcl.graph import karate_club
        g = karate_club()
        export_embeddings(EmbeddingTable(np.arange(34), g.features, g.labels), tmp_path / "k.csv")
        assert len((tmp_path / "k.csv").read_text().splitlines()) == 35

    def test_parse_error_line(self, tmp_path):
        (tmp_path / "e.csv").write_text("id,v0\n0,1.0\n1,abc\n")
        with pytest.raises(ParseError) as info:
            import_embeddings(tmp_path / "e.csv")
        assert info.value.lineno == 3

    def test_ragged(self, tmp_path):
        (tmp_path / "e.csv").write_text("id,v0,v1\n0,1.0\n")
        with pytest.raises(ParseError, match=":2:"):
            import_embeddings(tmp_path / "e.csv")

    def test_duplicate_ids(self):
        with pytest.raises(UsageError):
            EmbeddingTable([1, 1], np.zeros((2, 1)))


class TestProbeLoss:
    @pytest.mark.parametrize("kind", ["logistic", "hinge"])
    def test_gradients(self, rng, kind):
        X = rng.standard_normal((12, 4))
        y = rng.integers(0, 3, 12)
        W = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
        b = Tensor(rng.standard_normal((1, 3)), requires_grad=True)
        assert check_gradients(lambda: probe_loss(X, W, b, y, 3, kind, 0.1), [W, b]) < 1e-5

    def test_logistic_value(self):
        W, b = Tensor(np.zeros((1, 2))), Tensor(np.zeros((1, 2)))
        assert probe_loss(np.ones((3, 1)), W, b, np.array([0, 1, 0]), 2, "logistic", 0).item() == pytest.approx(math.log(2))

    def test_hinge_value(self):
        W, b = Tensor(np.zeros((1, 2))), Tensor(np.zeros((1, 2)))
        assert probe_loss(np.ones((3, 1)), W, b, np.array([0, 1, 0]), 2, "hinge", 0).item() == pytest.approx(2.0)

    def test_unknown_kind(self):
        with pytest.raises(UsageError):
            probe_loss(np.ones((1, 1)), Tensor(np.zeros((1, 2))), Tensor(np.zeros((1, 2))), np.array([0]), 2, "svm", 0)


class TestLinearProbe:
    @pytest.mark.parametrize("kind", ["logistic", "hinge"])
    def test_separable(self, rng, kind):
        emb = blobs(rng, 60, [np.array([-3.0, 0.0]), np.array([3.0, 0.0])])
        p = rng.permutation(len(emb))
        res = linear_probe(emb.subset(p[:60]), emb.subset(p[60:80]), emb.subset(p[80:]), kind, epochs=200, lr=0.05)
        assert res.test_accuracy == 1.0

    def test_constant_test_labels(self, rng):
        emb = blobs(rng, 50, [np.array([-3.0, 0.0]), np.array([3.0, 0.0])])
        res = linear_probe(emb.subset(np.arange(0, 100, 2)), None, emb.subset(np.arange(1, 50, 2)), epochs=100, lr=0.05)
        assert res.test_accuracy == 1.0

    def test_shuffled_labels_near_chance(self, rng):
        accs = []
        for seed in range(3):
            r = make_rng(seed)
            X = r.standard_normal((400, 8))
            y = r.integers(0, 4, 400)
            emb = EmbeddingTable(np.arange(400), X, y)
            res = linear_probe(emb.subset(np.arange(200)), None, emb.subset(np.arange(200, 400)), epochs=100)
            accs.append(res.test_accuracy)
        assert all(abs(a - 0.25) <= 0.15 for a in accs)

    def test_single_class_rejected(self, rng):
        emb = EmbeddingTable(np.arange(4), rng.standard_normal((4, 2)), np.zeros(4, dtype=int))
        with pytest.raises(UsageError):
            linear_probe(emb, None, emb)

    def test_needs_labels(self, rng):
        emb = EmbeddingTable(np.arange(4), rng.standard_normal((4, 2)))
        with pytest.raises(UsageError):
            linear_probe(emb, None, emb)

    def test_history_recorded_per_epoch(self, rng):
        emb = blobs(rng, 20, [np.zeros(2), np.ones(2) * 2])
        res = linear_probe(emb, emb, emb, epochs=17)
        assert len(res.history) == 17


class TestTopCheckpoints:
    def test_identical(self):
        W = np.arange(6.0).reshape(2, 3)
        np.testing.assert_array_equal(average_top_checkpoints([(0.5, W)] * 7, 5), W)

    def test_top_one(self):
        hist = [(0.1, np.zeros(2)), (0.9, np.array([1.0, 2.0])), (0.5, np.ones(2))]
        np.testing.assert_array_equal(average_top_checkpoints(hist, 1), [1.0, 2.0])

    def test_opposites_cancel(self):
        W = np.array([[1.0, -2.0]])
        np.testing.assert_array_equal(average_top_checkpoints([(0.7, W), (0.7, -W)], 2), np.zeros((1, 2)))

    def test_ties_prefer_earlier(self):
        hist = [(0.8, np.array([1.0])), (0.8, np.array([2.0])), (0.8, np.array([3.0]))]
        np.testing.assert_array_equal(average_top_checkpoints(hist, 2), [1.5])

    def test_fewer_than_k_warns(self):
        with pytest.warns(UserWarning):
            out = average_top_checkpoints([(0.1, np.array([2.0])), (0.2, np.array([4.0]))], 5)
        np.testing.assert_array_equal(out, [3.0])

    def test_tuples(self):
        hist = [(1.0, (np.ones(2), np.zeros(1))), (0.5, (np.zeros(2), np.ones(1)))]
        W, b = average_top_checkpoints(hist, 2)
        np.testing.assert_array_equal(W, [0.5, 0.5])
        np.testing.assert_array_equal(b, [0.5])


class TestKfold:
    def test_grid(self):
        assert list(C_GRID) == [1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3]

    def test_perfect_embeddings(self):
        y = np.tile([0, 1, 2], 10)
        emb = EmbeddingTable(np.arange(30), np.eye(3)[y], y)
        res = kfold_probe(emb, k=5, epochs=60)
        assert res["mean"] == 1.0 and res["sd"] == 0.0 and not res["flagged"]

    def test_partition(self):
        y = np.tile([0, 1], 12)
        res = kfold_probe(EmbeddingTable(np.arange(24), np.eye(2)[y], y), k=4, epochs=20, C_grid=[1.0])
        tests = np.sort(np.concatenate([f.test for f in res["folds"]]))
        np.testing.assert_array_equal(tests, np.arange(24))

    def test_order_invariant(self, rng):
        emb = blobs(rng, 15, [np.zeros(3), np.ones(3)], sd=1.0)
        p = rng.permutation(len(emb))
        a = kfold_probe(emb, k=3, epochs=30, C_grid=[0.1, 10.0], seed=4)
        b = kfold_probe(emb.subset(p), k=3, epochs=30, C_grid=[0.1, 10.0], seed=4)
        assert a["mean"] == b["mean"] and a["fold_accuracies"] == b["fold_accuracies"]

    def test_missing_class_flagged(self):
        y = np.array([0] * 9 + [1])
        with pytest.warns(UserWarning):
            res = kfold_probe(EmbeddingTable(np.arange(10), np.eye(2)[y], y), k=10, epochs=10, C_grid=[1.0])
        assert len(res["flagged"]) == 1 and len(res["fold_accuracies"]) == 9


class TestKmeans:
    def test_k_equals_n(self, rng):
        X = rng.standard_normal((6, 2))
        res = kmeans(X, 6, rng=rng)
        assert res.inertia == pytest.approx(0.0, abs=1e-20)
        assert len(np.unique(res.assignments)) == 6

    def test_k_one(self, rng):
        X = rng.standard_normal((20, 3))
        res = kmeans(X, 1, rng=rng)
        np.testing.assert_allclose(res.centroids[0], X.mean(axis=0), rtol=1e-12)
        assert res.inertia == pytest.approx(X.var(axis=0).sum() * 20, rel=1e-12)

    def test_k_too_large(self, rng):
        with pytest.raises(UsageError):
            kmeans(np.zeros((3, 2)), 4, rng=rng)

    def test_separated_blobs_every_seed(self):
        for seed in range(100):
            r = make_rng(seed)
            X = np.vstack([r.standard_normal((20, 2)), r.standard_normal((20, 2)) + [10.0, 0.0]])
            truth = np.repeat([0, 1], 20)
            assert cluster_accuracy(kmeans(X, 2, restarts=1, rng=r).assignments, truth) == 1.0

    def test_deterministic(self, rng):
        X = rng.standard_normal((30, 2))
        a = kmeans(X, 3, rng=make_rng(1)).assignments
        np.testing.assert_array_equal(a, kmeans(X, 3, rng=make_rng(1)).assignments)


class TestClusteringMetrics:
    def test_identity(self):
        t = np.array([0, 0, 1, 1, 2])
        assert clustering_metrics(t, t) == {"acc": 1.0, "nmi": 1.0, "ari": 1.0}

    def test_single_cluster(self):
        m = clustering_metrics(np.zeros(4, dtype=int), np.array([0, 0, 1, 1]))
        assert m["nmi"] == pytest.approx(0.0, abs=1e-12) and m["ari"] == pytest.approx(0.0, abs=1e-12)

    def test_relabel(self):
        m = clustering_metrics(np.array([0, 0, 1, 1]), np.array([1, 1, 0, 0]))
        assert m["acc"] == 1.0 and m["ari"] == 1.0

    def test_empty(self):
        with pytest.raises(UsageError):
            clustering_metrics([], [])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(0, 3), min_size=2, max_size=30), st.permutations([0, 1, 2, 3]), st.integers(0, 99))
    def test_acc_relabel_invariant(self, pred, perm, seed):
        pred = np.array(pred)
        truth = make_rng(seed).integers(0, 3, len(pred))
        relabelled = np.array(perm)[pred]
        assert cluster_accuracy(relabelled, truth) == cluster_accuracy(pred, truth)
