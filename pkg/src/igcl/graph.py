"""Graph containers, file formats, synthetic generators and splits."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.linalg import block_diag

from .errors import ParseError, UsageError

__all__ = [
    "Graph",
    "GraphSet",
    "Split",
    "normalized_adjacency",
    "load_edge_list",
    "load_features_csv",
    "load_labels_csv",
    "load_graph",
    "load_graphset_manifest",
    "save_graph",
    "karate_club",
    "degree_onehot_features",
    "synth_sbm",
    "synth_graph_families",
    "perturb_graph",
    "split_nodes",
    "kfold_indices",
]


def _canonical_edges(edges, num_nodes: int) -> np.ndarray:
    arr = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if arr.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    if np.any(arr < 0) or np.any(arr >= num_nodes):
        raise UsageError(f"edge endpoint outside [0, {num_nodes})")
    if np.any(arr[:, 0] == arr[:, 1]):
        raise UsageError("self-loops are not stored; they are added by the normalisation")
    arr = np.sort(arr, axis=1)
    return np.unique(arr, axis=0)


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected simple graph with a dense feature matrix.

    ``edges`` holds each undirected edge once as ``(i, j)`` with ``i < j``,
    sorted lexicographically. ``labels`` is either a per-node integer array or a
    single graph-level class id.
    """

    num_nodes: int
    edges: np.ndarray
    features: np.ndarray
    labels: np.ndarray | int | None = None

    def __post_init__(self):
        object.__setattr__(self, "edges", _canonical_edges(self.edges, self.num_nodes))
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] != self.num_nodes:
            raise UsageError(f"features must have {self.num_nodes} rows, got shape {feats.shape}")
        object.__setattr__(self, "features", feats)
        if self.labels is not None and not np.isscalar(self.labels):
            labels = np.asarray(self.labels, dtype=np.int64)
            if labels.shape != (self.num_nodes,):
                raise UsageError(f"node labels must have length {self.num_nodes}")
            object.__setattr__(self, "labels", labels)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    @cached_property
    def adjacency(self) -> np.ndarray:
        """Symmetric 0/1 adjacency without self-loops."""
        A = np.zeros((self.num_nodes, self.num_nodes))
        if self.num_edges:
            A[self.edges[:, 0], self.edges[:, 1]] = 1.0
            A[self.edges[:, 1], self.edges[:, 0]] = 1.0
        return A

    @cached_property
    def norm_adjacency(self) -> np.ndarray:
        return normalized_adjacency(self)

    @cached_property
    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1).astype(np.int64)

    def with_features(self, features: np.ndarray) -> Graph:
        return Graph(self.num_nodes, self.edges, features, self.labels)

    def permuted(self, perm: Sequence[int]) -> Graph:
        """Relabel nodes so that new node ``perm[i]`` is old node ``i``."""
        perm = np.asarray(perm)
        inv = np.argsort(perm)
        labels = self.labels
        if labels is not None and not np.isscalar(labels):
            labels = labels[inv]
        return Graph(self.num_nodes, perm[self.edges], self.features[inv], labels)


def normalized_adjacency(g: Graph) -> np.ndarray:
    """``D^-1/2 (A + I) D^-1/2`` with ``D`` the degree matrix of ``A + I``."""
    A_tilde = g.adjacency + np.eye(g.num_nodes)
    d_inv_sqrt = 1.0 / np.sqrt(A_tilde.sum(axis=1))
    return d_inv_sqrt[:, None] * A_tilde * d_inv_sqrt[None, :]


@dataclass(frozen=True, eq=False)
class GraphSet:
    """Ordered collection of graphs composed block-diagonally for batching."""

    graphs: tuple[Graph, ...]
    offsets: np.ndarray = field(init=False)

    def __init__(self, graphs: Sequence[Graph]):
        graphs = tuple(graphs)
        if not graphs:
            raise UsageError("a GraphSet needs at least one graph")
        sizes = np.array([g.num_nodes for g in graphs], dtype=np.int64)
        if np.any(sizes == 0):
            raise UsageError("graphs in a GraphSet must have at least one node")
        widths = {g.num_features for g in graphs}
        if len(widths) != 1:
            raise UsageError(f"graphs disagree on feature width: {sorted(widths)}")
        ends = np.cumsum(sizes)
        object.__setattr__(self, "graphs", graphs)
        object.__setattr__(self, "offsets", np.stack([ends - sizes, ends], axis=1))

    def __len__(self) -> int:
        return len(self.graphs)

    def __getitem__(self, idx) -> Graph:
        return self.graphs[idx]

    def subset(self, indices: Sequence[int]) -> GraphSet:
        return GraphSet([self.graphs[i] for i in indices])

    @property
    def num_nodes(self) -> int:
        return int(self.offsets[-1, 1])

    @property
    def labels(self) -> np.ndarray:
        return np.array([-1 if g.labels is None else int(g.labels) for g in self.graphs], dtype=np.int64)

    @cached_property
    def features(self) -> np.ndarray:
        return np.vstack([g.features for g in self.graphs])

    @cached_property
    def adjacency(self) -> np.ndarray:
        return block_diag(*[g.adjacency for g in self.graphs])

    @cached_property
    def norm_adjacency(self) -> np.ndarray:
        return block_diag(*[g.norm_adjacency for g in self.graphs])

    def pooling_matrix(self, mode: str = "mean") -> np.ndarray:
        """``G x N`` matrix whose product with node rows gives per-graph sums or means."""
        if mode not in ("mean", "sum"):
            raise UsageError(f"unknown pooling mode {mode!r}")
        P = np.zeros((len(self.graphs), self.num_nodes))
        for i, (lo, hi) in enumerate(self.offsets):
            P[i, lo:hi] = 1.0 / (hi - lo) if mode == "mean" else 1.0
        return P


@dataclass(frozen=True)
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        parts = [np.asarray(x, dtype=np.int64) for x in (self.train, self.val, self.test)]
        allidx = np.concatenate(parts)
        if len(np.unique(allidx)) != len(allidx):
            raise UsageError("split parts overlap")
        for name, arr in zip(("train", "val", "test"), parts):
            object.__setattr__(self, name, arr)


# -- file formats -----------------------------------------------------------------
def _data_lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if line:
                yield lineno, line


def load_edge_list(path, num_nodes: int | None = None) -> np.ndarray:
    """Read ``src,dst`` lines; reversed duplicates collapse to one undirected edge."""
    pairs = []
    for lineno, line in _data_lines(path):
        tokens = [t.strip() for t in line.split(",")]
        if len(tokens) != 2:
            raise ParseError(path, lineno, f"expected 'src,dst', got {line!r}")
        try:
            i, j = int(tokens[0]), int(tokens[1])
        except ValueError:
            raise ParseError(path, lineno, f"non-integer node id in {line!r}") from None
        if i < 0 or j < 0 or (num_nodes is not None and (i >= num_nodes or j >= num_nodes)):
            raise ParseError(path, lineno, f"node id out of range in {line!r}")
        if i == j:
            raise ParseError(path, lineno, f"self-loop {i},{j} is not allowed")
        pairs.append((min(i, j), max(i, j)))
    if not pairs:
        return np.zeros((0, 2), dtype=np.int64)
    return np.unique(np.array(pairs, dtype=np.int64), axis=0)


def load_features_csv(path) -> np.ndarray:
    rows, width = [], None
    for lineno, line in _data_lines(path):
        try:
            row = [float(t) for t in line.split(",")]
        except ValueError:
            raise ParseError(path, lineno, f"non-numeric token in {line!r}") from None
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise ParseError(path, lineno, f"ragged row: expected {width} values, got {len(row)}")
        rows.append(row)
    if not rows:
        raise ParseError(path, 0, "feature file has no rows")
    return np.array(rows, dtype=np.float64)


def load_labels_csv(path) -> np.ndarray:
    labels = []
    for lineno, line in _data_lines(path):
        try:
            labels.append(int(line.split(",")[-1]))
        except ValueError:
            raise ParseError(path, lineno, f"non-integer label {line!r}") from None
    return np.array(labels, dtype=np.int64)


def load_graph(edges_path, features_path=None, labels_path=None, num_nodes: int | None = None) -> Graph:
    """Assemble a node-level graph; featureless graphs get degree one-hot features."""
    features = load_features_csv(features_path) if features_path else None
    labels = load_labels_csv(labels_path) if labels_path else None
    if num_nodes is None:
        if features is not None:
            num_nodes = features.shape[0]
        elif labels is not None:
            num_nodes = len(labels)
    edges = load_edge_list(edges_path, num_nodes)
    if num_nodes is None:
        num_nodes = int(edges.max()) + 1 if len(edges) else 0
    if features is None:
        features = degree_onehot_features(Graph(num_nodes, edges, np.zeros((num_nodes, 1))))
    return Graph(num_nodes, edges, features, labels)


def load_graphset_manifest(path) -> GraphSet:
    """Load ``{"graphs": [{"edges": ..., "features": ..., "label": int}, ...]}``.

    Paths are relative to the manifest. Entries without features get degree
    one-hot features capped at the largest degree in the whole set.
    """
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    if not isinstance(manifest, dict) or not isinstance(manifest.get("graphs"), list):
        raise ParseError(path, 1, "manifest must be an object with a 'graphs' list")
    base = path.parent
    graphs, featureless = [], []
    for i, entry in enumerate(manifest["graphs"]):
        feats = load_features_csv(base / entry["features"]) if entry.get("features") else None
        n = entry.get("num_nodes", feats.shape[0] if feats is not None else None)
        edges = load_edge_list(base / entry["edges"], n)
        if n is None:
            n = int(edges.max()) + 1 if len(edges) else 1
        if feats is None:
            featureless.append(i)
            feats = np.zeros((n, 1))
        label = entry.get("label")
        graphs.append(Graph(n, edges, feats, None if label is None else int(label)))
    if featureless:
        cap = max(int(graphs[i].degrees.max(initial=0)) for i in featureless)
        for i in featureless:
            graphs[i] = graphs[i].with_features(degree_onehot_features(graphs[i], max(cap, 1)))
    return GraphSet(graphs)


def save_graph(g: Graph, out_dir, prefix: str = "graph") -> dict[str, Path]:
    """Write ``<prefix>_edges.txt``, ``_features.csv`` and (if present) ``_labels.csv``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"edges": out_dir / f"{prefix}_edges.txt", "features": out_dir / f"{prefix}_features.csv"}
    with open(paths["edges"], "w", encoding="utf-8") as fh:
        for i, j in g.edges:
            fh.write(f"{i},{j}\n")
    with open(paths["features"], "w", encoding="utf-8") as fh:
        for row in g.features:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    if g.labels is not None and not np.isscalar(g.labels):
        paths["labels"] = out_dir / f"{prefix}_labels.csv"
        with open(paths["labels"], "w", encoding="utf-8") as fh:
            fh.writelines(f"{int(y)}\n" for y in g.labels)
    return paths


def karate_club(features: str = "degree") -> Graph:
    """Zachary's karate club (34 nodes, 78 edges) with faction labels.

    ``features`` is ``"degree"`` (one-hot, capped at the max degree) or ``"identity"``.
    """
    root = resources.files("igcl") / "data"
    with resources.as_file(root / "karate_edges.txt") as p:
        edges = load_edge_list(p, 34)
    with resources.as_file(root / "karate_labels.txt") as p:
        labels = load_labels_csv(p)
    g = Graph(34, edges, np.zeros((34, 1)), labels)
    if features == "identity":
        return g.with_features(np.eye(34))
    if features != "degree":
        raise UsageError(f"unknown karate feature mode {features!r}")
    return g.with_features(degree_onehot_features(g))


# -- features ---------------------------------------------------------------------
def degree_onehot_features(g: Graph, cap: int | None = None) -> np.ndarray:
    """One-hot of ``min(degree, cap)``; ``cap`` defaults to the max degree (at least 1)."""
    deg = g.degrees
    if cap is None:
        cap = max(int(deg.max(initial=0)), 1)
    if cap < 1:
        raise UsageError(f"degree cap must be >= 1, got {cap}")
    X = np.zeros((g.num_nodes, cap + 1))
    X[np.arange(g.num_nodes), np.minimum(deg, cap)] = 1.0
    return X


# -- generators -------------------------------------------------------------------
def synth_sbm(
    block_sizes: Sequence[int],
    p_in: float,
    p_out: float,
    feature_dim: int,
    feature_shift: float,
    noise_sd: float,
    rng: np.random.Generator,
) -> Graph:
    """Stochastic block model with Gaussian block-mean features.

    Block ``k`` has mean ``feature_shift * e_k`` so any two block means are
    ``feature_shift * sqrt(2)`` apart; every entry gets N(0, noise_sd^2) noise.
    Node labels are block ids.
    """
    sizes = [int(s) for s in block_sizes]
    if not sizes or any(s < 1 for s in sizes):
        raise UsageError("block sizes must be a non-empty list of positive counts")
    if not 0.0 <= p_out <= p_in <= 1.0:
        raise UsageError(f"need 0 <= p_out <= p_in <= 1, got p_in={p_in}, p_out={p_out}")
    if feature_dim < len(sizes):
        raise UsageError(f"feature_dim {feature_dim} is smaller than the number of blocks {len(sizes)}")
    labels = np.repeat(np.arange(len(sizes)), sizes)
    n = len(labels)
    probs = np.where(labels[:, None] == labels[None, :], p_in, p_out)
    draws = rng.random((n, n))
    iu, ju = np.triu_indices(n, k=1)
    keep = draws[iu, ju] < probs[iu, ju]
    edges = np.stack([iu[keep], ju[keep]], axis=1)
    means = np.zeros((n, feature_dim))
    means[np.arange(n), labels] = feature_shift
    features = means + noise_sd * rng.standard_normal((n, feature_dim))
    return Graph(n, edges, features, labels)


def synth_graph_families(
    num_graphs: int,
    num_nodes: int,
    rng: np.random.Generator,
    families: Sequence[tuple[Sequence[float], float, float]] = (((0.5,), 0.6, 0.0), ((0.5, 0.5), 0.9, 0.05)),
) -> GraphSet:
    """Graph classification bed: graphs alternate between SBM families.

    Each family is ``(block_fractions, p_in, p_out)``; the class label is the
    family index. Features are degree one-hot with a cap shared across the set.
    """
    graphs = []
    for i in range(num_graphs):
        label = i % len(families)
        fractions, p_in, p_out = families[label]
        sizes = [max(1, int(round(f * num_nodes))) for f in fractions]
        sizes[-1] = max(1, num_nodes - sum(sizes[:-1]))
        g = synth_sbm(sizes, p_in, p_out, len(sizes), 0.0, 0.0, rng)
        graphs.append(Graph(g.num_nodes, g.edges, np.zeros((g.num_nodes, 1)), label))
    cap = max(1, max(int(g.degrees.max(initial=0)) for g in graphs))
    return GraphSet([g.with_features(degree_onehot_features(g, cap)) for g in graphs])


# -- augmentation -----------------------------------------------------------------
def perturb_graph(g: Graph, edge_drop_ratio: float, node_drop_ratio: float, rng: np.random.Generator) -> Graph:
    """Random edge dropping followed by node dropping.

    Dropped nodes lose their incident edges and have their feature rows zeroed;
    the node count is unchanged so tensors stay aligned with the original graph.
    """
    for name, r in (("edge_drop_ratio", edge_drop_ratio), ("node_drop_ratio", node_drop_ratio)):
        if not 0.0 <= r <= 1.0:
            raise UsageError(f"{name} must lie in [0, 1], got {r}")
    edges = g.edges
    n_drop = int(math.floor(edge_drop_ratio * len(edges)))
    if n_drop:
        keep = np.ones(len(edges), dtype=bool)
        keep[rng.choice(len(edges), size=n_drop, replace=False)] = False
        edges = edges[keep]
    features = g.features
    k_drop = int(math.floor(node_drop_ratio * g.num_nodes))
    if k_drop:
        dropped = rng.choice(g.num_nodes, size=k_drop, replace=False)
        mask = np.zeros(g.num_nodes, dtype=bool)
        mask[dropped] = True
        edges = edges[~(mask[edges[:, 0]] | mask[edges[:, 1]])]
        features = features.copy()
        features[mask] = 0.0
    return Graph(g.num_nodes, edges, features, g.labels)


# -- splits -----------------------------------------------------------------------
def split_nodes(n: int | Graph, fractions: Sequence[float], rng: np.random.Generator) -> Split:
    """Random train/val/test split; when fractions sum to 1 the remainder goes to test."""
    if isinstance(n, Graph):
        n = n.num_nodes
    if len(fractions) != 3 or any(f < 0 for f in fractions) or sum(fractions) > 1.0 + 1e-12:
        raise UsageError(f"fractions must be three non-negative values summing to <= 1, got {fractions}")
    perm = rng.permutation(n)
    n_train = int(math.floor(fractions[0] * n))
    n_val = int(math.floor(fractions[1] * n))
    if abs(sum(fractions) - 1.0) < 1e-12:
        n_test = n - n_train - n_val
    else:
        n_test = int(math.floor(fractions[2] * n))
    return Split(perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:n_train + n_val + n_test])


def kfold_indices(n: int, k: int, rng: np.random.Generator) -> list[Split]:
    """Balanced k-fold partition; the first ``n % k`` folds get one extra index."""
    if k < 2:
        raise UsageError(f"k must be >= 2, got {k}")
    if k > n:
        raise UsageError(f"cannot make {k} folds from {n} items")
    perm = rng.permutation(n)
    sizes = [n // k + (1 if i < n % k else 0) for i in range(k)]
    bounds = np.cumsum([0] + sizes)
    folds = []
    for i in range(k):
        test = perm[bounds[i]:bounds[i + 1]]
        train = np.concatenate([perm[:bounds[i]], perm[bounds[i + 1]:]])
        folds.append(Split(train, np.zeros(0, dtype=np.int64), test))
    return folds
