"""Evaluation of frozen embeddings: linear probes, k-fold CV, clustering."""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from sklearn.metrics import adjusted_rand_score, normalized_mutual_info_score

from .errors import ParseError, UsageError
from .graph import kfold_indices
from .optim import Adam
from .rng import make_rng
from .tensor import (
    Tensor,
    add,
    add_row,
    logsumexp_rows,
    matmul,
    mean,
    mul,
    relu,
    scale,
    square,
    sub,
    sum_all,
    sum_rows,
)

logger = logging.getLogger(__name__)

__all__ = [
    "EmbeddingTable",
    "export_embeddings",
    "import_embeddings",
    "probe_loss",
    "ProbeResult",
    "linear_probe",
    "average_top_checkpoints",
    "kfold_probe",
    "C_GRID",
    "KMeansResult",
    "kmeans",
    "cluster_accuracy",
    "clustering_metrics",
]

C_GRID = tuple(10.0**e for e in range(-3, 4))


@dataclass
class EmbeddingTable:
    ids: np.ndarray
    vectors: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2:
            self.vectors = self.vectors.reshape(len(self.ids), -1)
        if self.vectors.shape[0] != len(self.ids):
            raise UsageError(f"{len(self.ids)} ids but {self.vectors.shape[0]} vectors")
        if len(np.unique(self.ids)) != len(self.ids):
            raise UsageError("embedding ids must be unique")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != self.ids.shape:
                raise UsageError("labels must align with ids")

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def subset(self, index) -> EmbeddingTable:
        index = np.asarray(index, dtype=np.int64)
        labels = None if self.labels is None else self.labels[index]
        return EmbeddingTable(self.ids[index], self.vectors[index], labels)

    def sorted_by_id(self) -> EmbeddingTable:
        return self.subset(np.argsort(self.ids, kind="stable"))


def export_embeddings(emb: EmbeddingTable, path) -> None:
    """CSV ``id[,label],v0..v{D-1}`` with shortest round-trip float formatting."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = ["id"] + (["label"] if emb.labels is not None else []) + [f"v{d}" for d in range(emb.dim)]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(len(emb)):
            head = [str(int(emb.ids[i]))]
            if emb.labels is not None:
                head.append(str(int(emb.labels[i])))
            fh.write(",".join(head + [repr(float(v)) for v in emb.vectors[i]]) + "\n")


def import_embeddings(path) -> EmbeddingTable:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(path, 1, "empty embeddings file") from None
        if not header or header[0] != "id":
            raise ParseError(path, 1, "header must start with 'id'")
        has_label = len(header) > 1 and header[1] == "label"
        width = len(header)
        ids, labels, rows = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise ParseError(path, lineno, f"expected {width} fields, got {len(row)}")
            try:
                ids.append(int(row[0]))
                if has_label:
                    labels.append(int(row[1]))
                rows.append([float(v) for v in row[2 if has_label else 1:]])
            except ValueError as exc:
                raise ParseError(path, lineno, str(exc)) from None
    dim = width - (2 if has_label else 1)
    vectors = np.array(rows, dtype=np.float64).reshape(len(ids), dim)
    return EmbeddingTable(np.array(ids, dtype=np.int64), vectors, np.array(labels) if has_label else None)


# -- linear probe -----------------------------------------------------------------
def probe_loss(X, W: Tensor, b: Tensor, y: np.ndarray, num_classes: int, kind: str, l2: float) -> Tensor:
    """Multinomial logistic or one-vs-rest hinge loss plus ``l2/2 * ||W||^2``."""
    scores = add_row(matmul(X, W), b)
    onehot = np.eye(num_classes)[y]
    if kind == "logistic":
        data = mean(sub(logsumexp_rows(scores), sum_rows(mul(scores, onehot))))
    elif kind == "hinge":
        signs = 2.0 * onehot - 1.0
        margins = relu(sub(np.ones(scores.shape), mul(scores, signs)))
        data = scale(sum_all(margins), 1.0 / scores.rows)
    else:
        raise UsageError(f"unknown probe loss {kind!r}")
    return add(data, scale(sum_all(square(W)), 0.5 * l2)) if l2 else data


@dataclass
class ProbeResult:
    val_accuracy: float
    test_accuracy: float
    weights: tuple[np.ndarray, np.ndarray]
    history: list[tuple[float, tuple[np.ndarray, np.ndarray]]] = field(repr=False, default_factory=list)


def _accuracy(X, W, b, y) -> float:
    if len(y) == 0:
        return float("nan")
    return float(np.mean(np.argmax(X @ W + b, axis=1) == y))


def average_top_checkpoints(history, top_k: int = 5):
    """Elementwise mean of the weights from the ``top_k`` epochs by validation accuracy.

    ``history`` lists ``(val_accuracy, weights)`` in epoch order, ``weights``
    being an array or tuple of arrays. Ties go to the earlier epoch.
    """
    if not history:
        raise UsageError("no checkpoints to average")
    if len(history) < top_k:
        warnings.warn(f"only {len(history)} checkpoints recorded; averaging all of them", stacklevel=2)
        top_k = len(history)
    order = sorted(range(len(history)), key=lambda i: (-history[i][0], i))[:top_k]
    chosen = [history[i][1] for i in order]
    if isinstance(chosen[0], np.ndarray):
        return np.mean(chosen, axis=0)
    return tuple(np.mean([c[j] for c in chosen], axis=0) for j in range(len(chosen[0])))


def linear_probe(
    train: EmbeddingTable,
    val: EmbeddingTable | None,
    test: EmbeddingTable,
    loss_kind: str = "logistic",
    l2: float = 0.0,
    epochs: int = 300,
    lr: float = 0.01,
    top_k: int | None = 5,
    seed: int = 0,
    num_classes: int | None = None,
) -> ProbeResult:
    """Fit a linear classifier on frozen embeddings with Adam.

    Features are standardised with training statistics. With ``top_k`` and a
    validation set, test predictions use the average of the weights from the
    ``top_k`` best validation epochs; otherwise the final weights.
    """
    if train.labels is None or test.labels is None:
        raise UsageError("probe needs labelled embeddings")
    if len(np.unique(train.labels)) < 2:
        raise UsageError("training set has a single class")
    all_labels = [train.labels, test.labels] + ([val.labels] if val is not None else [])
    C = num_classes or int(max(int(y.max()) for y in all_labels if len(y)) + 1)
    mu = train.vectors.mean(axis=0)
    sd = train.vectors.std(axis=0)
    sd[sd == 0] = 1.0
    prep = lambda e: (e.vectors - mu) / sd  # noqa: E731
    Xtr, Xte = prep(train), prep(test)
    Xva = prep(val) if val is not None and len(val) else None
    rng = make_rng(seed)
    W = Tensor(rng.normal(0.0, 0.01, size=(train.dim, C)), requires_grad=True, name="probe.W")
    b = Tensor(np.zeros((1, C)), requires_grad=True, name="probe.b")
    opt = Adam([W, b], lr=lr)
    history = []
    for _ in range(epochs):
        opt.zero_grad()
        probe_loss(Xtr, W, b, train.labels, C, loss_kind, l2).backward()
        opt.step()
        if Xva is not None:
            history.append((_accuracy(Xva, W.data, b.data, val.labels), (W.data.copy(), b.data.copy())))
    if top_k and history:
        Wf, bf = average_top_checkpoints(history, top_k)
    else:
        Wf, bf = W.data.copy(), b.data.copy()
    val_acc = _accuracy(Xva, Wf, bf, val.labels) if Xva is not None else float("nan")
    return ProbeResult(val_acc, _accuracy(Xte, Wf, bf, test.labels), (Wf, bf), history)


def kfold_probe(
    emb: EmbeddingTable,
    k: int = 10,
    C_grid: Sequence[float] = C_GRID,
    seed: int = 0,
    loss_kind: str = "hinge",
    epochs: int = 200,
    lr: float = 0.01,
) -> dict:
    """k-fold cross-validated accuracy with an inner 80/20 selection of ``C`` (``l2 = 1/C``).

    Rows are put in id order first, so fold membership depends only on the ids,
    ``seed`` and ``k``. Folds whose training part lacks a class are excluded
    from the mean and listed under ``flagged``.
    """
    if emb.labels is None:
        raise UsageError("kfold_probe needs labels")
    emb = emb.sorted_by_id()
    n = len(emb)
    classes = np.unique(emb.labels)
    C_count = int(classes.max()) + 1
    rng = make_rng(seed)
    folds = kfold_indices(n, k, rng)
    accs, chosen, flagged = [], [], []
    for i, fold in enumerate(folds):
        train_labels = emb.labels[fold.train]
        if len(np.unique(train_labels)) != len(classes):
            warnings.warn(f"fold {i}: a class is missing from the training folds; excluded", stacklevel=2)
            flagged.append(i)
            continue
        perm = rng.permutation(fold.train)
        cut = int(round(0.8 * len(perm)))
        inner_train, inner_val = perm[:cut], perm[cut:]
        best_C, best_acc = C_grid[0], -1.0
        if len(np.unique(emb.labels[inner_train])) > 1 and len(inner_val):
            for C in C_grid:
                res = linear_probe(emb.subset(inner_train), None, emb.subset(inner_val), loss_kind, 1.0 / C,
                                   epochs, lr, top_k=None, seed=seed, num_classes=C_count)
                if res.test_accuracy > best_acc:
                    best_C, best_acc = C, res.test_accuracy
        res = linear_probe(emb.subset(fold.train), None, emb.subset(fold.test), loss_kind, 1.0 / best_C,
                           epochs, lr, top_k=None, seed=seed, num_classes=C_count)
        accs.append(res.test_accuracy)
        chosen.append(best_C)
    accs_arr = np.array(accs)
    return {
        "mean": float(accs_arr.mean()) if accs else float("nan"),
        "sd": float(accs_arr.std()) if accs else float("nan"),
        "fold_accuracies": accs,
        "chosen_C": chosen,
        "flagged": flagged,
        "folds": folds,
    }


# -- clustering -------------------------------------------------------------------
@dataclass
class KMeansResult:
    assignments: np.ndarray
    centroids: np.ndarray
    inertia: float


def _kmeanspp(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(X)
    centers = [X[rng.integers(n)]]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        idx = int(rng.choice(n, p=d2 / total)) if total > 0 else int(rng.integers(n))
        centers.append(X[idx])
        d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def _sq_dists(X, C):
    return np.maximum((X * X).sum(1)[:, None] - 2.0 * X @ C.T + (C * C).sum(1)[None, :], 0.0)


def kmeans(X, k: int, restarts: int = 10, rng: np.random.Generator | None = None, max_iter: int = 300) -> KMeansResult:
    """Lloyd's algorithm from k-means++ seeds; best of ``restarts`` by inertia."""
    X = np.asarray(getattr(X, "data", X), dtype=np.float64)
    n = len(X)
    if not 1 <= k <= n:
        raise UsageError(f"need 1 <= k <= n, got k={k}, n={n}")
    rng = rng if rng is not None else make_rng(0)
    best = None
    for _ in range(max(1, restarts)):
        C = _kmeanspp(X, k, rng)
        assign = None
        for _ in range(max_iter):
            new_assign = np.argmin(_sq_dists(X, C), axis=1)
            if assign is not None and np.array_equal(new_assign, assign):
                break
            assign = new_assign
            for j in range(k):
                members = X[assign == j]
                if len(members):
                    C[j] = members.mean(axis=0)
                else:
                    # re-seed an empty cluster at the point farthest from its centroid
                    far = int(np.argmax(_sq_dists(X, C)[np.arange(n), assign]))
                    C[j] = X[far]
        inertia = float(((X - C[assign]) ** 2).sum())
        if best is None or inertia < best.inertia:
            best = KMeansResult(assign.copy(), C.copy(), inertia)
    return best


def cluster_accuracy(pred, truth) -> float:
    """Accuracy under the best one-to-one cluster-to-class mapping (Hungarian)."""
    pred, truth = np.asarray(pred), np.asarray(truth)
    _, p = np.unique(pred, return_inverse=True)
    _, t = np.unique(truth, return_inverse=True)
    w = np.zeros((p.max() + 1, t.max() + 1), dtype=np.int64)
    np.add.at(w, (p, t), 1)
    rows, cols = linear_sum_assignment(-w)
    return float(w[rows, cols].sum() / len(pred))


def clustering_metrics(pred, truth) -> dict[str, float]:
    pred, truth = np.asarray(pred), np.asarray(truth)
    if len(pred) == 0:
        raise UsageError("clustering_metrics needs non-empty input")
    if pred.shape != truth.shape:
        raise UsageError("pred and truth must have equal length")
    return {
        "acc": cluster_accuracy(pred, truth),
        "nmi": float(normalized_mutual_info_score(truth, pred, average_method="arithmetic")),
        "ari": float(adjusted_rand_score(truth, pred)),
    }
