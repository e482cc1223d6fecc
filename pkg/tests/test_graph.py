import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from igcl.errors import ParseError, UsageError
from igcl.graph import (
    Graph,
    GraphSet,
    degree_onehot_features,
    karate_club,
    kfold_indices,
    load_edge_list,
    load_features_csv,
    load_graph,
    load_graphset_manifest,
    normalized_adjacency,
    perturb_graph,
    save_graph,
    split_nodes,
    synth_graph_families,
    synth_sbm,
)
from igcl.rng import make_rng


def path_graph(n):
    return Graph(n, [(i, i + 1) for i in range(n - 1)], np.ones((n, 1)))


def random_graph(rng, n, p=0.3, f=3):
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(len(iu)) < p
    return Graph(n, np.stack([iu[keep], ju[keep]], axis=1), rng.standard_normal((n, f)))


class TestGraphInvariants:
    def test_reversed_duplicates_collapse(self):
        g = Graph(3, [(0, 1), (1, 0), (2, 1)], np.zeros((3, 1)))
        np.testing.assert_array_equal(g.edges, [[0, 1], [1, 2]])

    def test_self_loop_rejected(self):
        with pytest.raises(UsageError):
            Graph(2, [(1, 1)], np.zeros((2, 1)))

    def test_out_of_range_rejected(self):
        with pytest.raises(UsageError):
            Graph(2, [(0, 2)], np.zeros((2, 1)))

    def test_feature_rows_must_match(self):
        with pytest.raises(UsageError):
            Graph(3, [], np.zeros((2, 1)))

    def test_adjacency_symmetric(self, rng):
        A = random_graph(rng, 10).adjacency
        np.testing.assert_array_equal(A, A.T)
        assert np.all(np.diag(A) == 0)


class TestNormalizedAdjacency:
    def test_single_edge(self):
        g = Graph(2, [(0, 1)], np.zeros((2, 1)))
        np.testing.assert_allclose(normalized_adjacency(g), [[0.5, 0.5], [0.5, 0.5]], atol=1e-15)

    def test_isolated_node(self):
        np.testing.assert_array_equal(normalized_adjacency(Graph(1, [], np.zeros((1, 1)))), [[1.0]])

    def test_path_entry(self):
        assert normalized_adjacency(path_graph(3))[0, 1] == pytest.approx(1 / math.sqrt(6), abs=1e-15)

    def test_entrywise_oracle_and_symmetry(self, rng):
        for _ in range(20):
            g = random_graph(rng, int(rng.integers(1, 12)))
            At = g.adjacency + np.eye(g.num_nodes)
            d = At.sum(axis=1)
            brute = np.array([[At[i, j] / math.sqrt(d[i] * d[j]) for j in range(g.num_nodes)]
                              for i in range(g.num_nodes)])
            out = normalized_adjacency(g)
            np.testing.assert_allclose(out, brute, rtol=1e-14, atol=1e-15)
            assert np.max(np.abs(out - out.T)) < 1e-15
            assert np.all(out >= 0)


class TestLoaders:
    def test_dedup(self, tmp_path):
        p = tmp_path / "e.txt"
        p.write_text("0,1\n1,0\n")
        assert len(load_edge_list(p)) == 1

    def test_self_loop_line_number(self, tmp_path):
        p = tmp_path / "e.txt"
        p.write_text("# comment\n0,0\n")
        with pytest.raises(ParseError) as info:
            load_edge_list(p)
        assert info.value.lineno == 2

    def test_out_of_range_line_number(self, tmp_path):
        p = tmp_path / "e.txt"
        p.write_text("0,1\n0,5\n")
        with pytest.raises(ParseError, match=":2:"):
            load_edge_list(p, num_nodes=3)

    def test_non_numeric_token(self, tmp_path):
        p = tmp_path / "e.txt"
        p.write_text("0,x\n")
        with pytest.raises(ParseError, match=":1:"):
            load_edge_list(p)

    def test_ragged_features(self, tmp_path):
        p = tmp_path / "f.csv"
        p.write_text("1.0,2.0\n3.0\n")
        with pytest.raises(ParseError) as info:
            load_features_csv(p)
        assert info.value.lineno == 2

    def test_non_numeric_feature(self, tmp_path):
        p = tmp_path / "f.csv"
        p.write_text("1.0,abc\n")
        with pytest.raises(ParseError, match=":1:"):
            load_features_csv(p)

    def test_karate_counts(self):
        g = karate_club()
        assert g.num_nodes == 34 and g.num_edges == 78
        assert sorted(np.unique(g.labels)) == [0, 1]

    def test_round_trip(self, tmp_path, rng):
        g = synth_sbm([5, 5], 0.8, 0.1, 3, 1.0, 1.0, rng)
        paths = save_graph(g, tmp_path)
        back = load_graph(paths["edges"], paths["features"], paths["labels"])
        assert {tuple(e) for e in back.edges} == {tuple(e) for e in g.edges}
        np.testing.assert_array_equal(back.features, g.features)
        np.testing.assert_array_equal(back.labels, g.labels)

    def test_featureless_graph_gets_degree_features(self, tmp_path):
        (tmp_path / "e.txt").write_text("0,1\n1,2\n")
        g = load_graph(tmp_path / "e.txt")
        np.testing.assert_array_equal(g.features, [[0, 1, 0], [0, 0, 1], [0, 1, 0]])

    def test_manifest(self, tmp_path):
        (tmp_path / "a.txt").write_text("0,1\n")
        (tmp_path / "b.txt").write_text("0,1\n1,2\n0,2\n")
        (tmp_path / "m.json").write_text(
            '{"graphs": [{"edges": "a.txt", "label": 0}, {"edges": "b.txt", "label": 1}]}'
        )
        gs = load_graphset_manifest(tmp_path / "m.json")
        assert len(gs) == 2 and gs.num_nodes == 5
        np.testing.assert_array_equal(gs.labels, [0, 1])
        assert gs.features.shape == (5, 3)  # cap = largest degree in the set

    def test_manifest_must_list_graphs(self, tmp_path):
        (tmp_path / "m.json").write_text("[]")
        with pytest.raises(ParseError):
            load_graphset_manifest(tmp_path / "m.json")


class TestDegreeFeatures:
    def test_isolated_node(self):
        X = degree_onehot_features(Graph(1, [], np.zeros((1, 1))))
        np.testing.assert_array_equal(X, [[1.0, 0.0]])

    def test_cap(self):
        star = Graph(8, [(0, i) for i in range(1, 8)], np.zeros((8, 1)))
        X = degree_onehot_features(star, cap=5)
        assert X.shape == (8, 6) and X[0, 5] == 1.0
        np.testing.assert_array_equal(X.sum(axis=1), np.ones(8))

    def test_bad_cap(self):
        with pytest.raises(UsageError):
            degree_onehot_features(path_graph(3), cap=0)


class TestSynthSbm:
    def test_cliques(self, rng):
        g = synth_sbm([3, 3], 1.0, 0.0, 2, 1.0, 0.0, rng)
        np.testing.assert_array_equal(g.edges, [[0, 1], [0, 2], [1, 2], [3, 4], [3, 5], [4, 5]])

    def test_edgeless(self, rng):
        assert synth_sbm([4, 4], 0.0, 0.0, 2, 1.0, 1.0, rng).num_edges == 0

    def test_empty_block_rejected(self, rng):
        with pytest.raises(UsageError):
            synth_sbm([3, 0], 0.5, 0.1, 2, 1.0, 1.0, rng)

    def test_probability_order(self, rng):
        with pytest.raises(UsageError):
            synth_sbm([3, 3], 0.1, 0.5, 2, 1.0, 1.0, rng)

    def test_edge_count_binomial(self, rng):
        n_in, n_out = 3 * math.comb(50, 2), 3 * 50 * 50
        mean = n_in * 0.10 + n_out * 0.01
        sd = math.sqrt(n_in * 0.10 * 0.90 + n_out * 0.01 * 0.99)
        assert mean == pytest.approx(442.5)
        for seed in range(5):
            g = synth_sbm([50, 50, 50], 0.10, 0.01, 3, 1.0, 1.0, make_rng(seed))
            assert abs(g.num_edges - mean) < 3 * sd

    def test_feature_means(self):
        g = synth_sbm([400, 400], 0.0, 0.0, 2, 2.0, 0.5, make_rng(0))
        np.testing.assert_allclose(g.features[:400].mean(axis=0), [2.0, 0.0], atol=0.1)
        np.testing.assert_allclose(g.features[400:].mean(axis=0), [0.0, 2.0], atol=0.1)

    def test_families(self, rng):
        gs = synth_graph_families(6, 8, rng)
        assert len(gs) == 6 and gs.num_nodes == 48
        np.testing.assert_array_equal(gs.labels, [0, 1, 0, 1, 0, 1])


class TestPerturb:
    def test_identity(self, rng):
        g = karate_club()
        out = perturb_graph(g, 0.0, 0.0, rng)
        np.testing.assert_array_equal(out.edges, g.edges)
        np.testing.assert_array_equal(out.features, g.features)

    def test_drop_all_edges(self, rng):
        assert perturb_graph(karate_club(), 1.0, 0.0, rng).num_edges == 0

    def test_floor_arithmetic(self, rng):
        assert perturb_graph(karate_club(), 0.2, 0.0, rng).num_edges == 63

    def test_node_drop_zeroes_features_and_edges(self, rng):
        g = karate_club()
        out = perturb_graph(g, 0.0, 0.5, rng)
        dropped = np.where(~out.features.any(axis=1))[0]
        assert len(dropped) == 17 and out.num_nodes == 34
        assert not np.isin(out.edges, dropped).any()

    def test_ratio_range(self, rng):
        with pytest.raises(UsageError):
            perturb_graph(karate_club(), 1.5, 0.0, rng)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0, 1), st.floats(0, 1))
    def test_deterministic_and_valid(self, seed, e, v):
        g = karate_club()
        a = perturb_graph(g, e, v, make_rng(seed))
        b = perturb_graph(g, e, v, make_rng(seed))
        np.testing.assert_array_equal(a.edges, b.edges)
        assert len({tuple(x) for x in a.edges}) == a.num_edges
        assert a.edges.size == 0 or (a.edges.min() >= 0 and a.edges.max() < 34)


class TestSplits:
    def test_singleton_folds(self, rng):
        folds = kfold_indices(10, 10, rng)
        assert all(len(f.test) == 1 for f in folds)

    def test_balanced_sizes(self, rng):
        sizes = [len(f.test) for f in kfold_indices(23, 10, rng)]
        assert sizes == [3, 3, 3, 2, 2, 2, 2, 2, 2, 2]

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 60), st.data())
    def test_partition(self, n, data):
        k = data.draw(st.integers(2, n))
        folds = kfold_indices(n, k, make_rng(n))
        tests = np.concatenate([f.test for f in folds])
        np.testing.assert_array_equal(np.sort(tests), np.arange(n))
        for f in folds:
            assert len(np.intersect1d(f.train, f.test)) == 0

    def test_k_bounds(self, rng):
        with pytest.raises(UsageError):
            kfold_indices(3, 4, rng)
        with pytest.raises(UsageError):
            kfold_indices(3, 1, rng)

    def test_split_nodes(self):
        s = split_nodes(100, (0.2, 0.2, 0.6), make_rng(0))
        assert (len(s.train), len(s.val), len(s.test)) == (20, 20, 60)
        t = split_nodes(100, (0.2, 0.2, 0.6), make_rng(0))
        np.testing.assert_array_equal(s.train, t.train)

    def test_split_fraction_sum(self, rng):
        with pytest.raises(UsageError):
            split_nodes(10, (0.5, 0.5, 0.5), rng)


class TestGraphSet:
    def test_offsets_contiguous(self, rng):
        gs = GraphSet([path_graph(3), path_graph(1), path_graph(4)])
        np.testing.assert_array_equal(gs.offsets, [[0, 3], [3, 4], [4, 8]])
        assert gs.adjacency.shape == (8, 8)
        assert gs.adjacency[2, 3] == 0

    def test_subset(self):
        gs = GraphSet([path_graph(2), path_graph(3)])
        assert gs.subset([1]).num_nodes == 3

    def test_empty(self):
        with pytest.raises(UsageError):
            GraphSet([])

    def test_pooling_matrix(self):
        P = GraphSet([path_graph(2), path_graph(3)]).pooling_matrix("mean")
        np.testing.assert_allclose(P.sum(axis=1), [1.0, 1.0])
