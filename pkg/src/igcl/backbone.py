"""GNN backbones (GCN, GIN), graph readout and projection heads."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import ShapeError, UsageError
from .optim import glorot_init
from .tensor import Tensor, add_row, as_tensor, dropout, matmul, relu, scale

logger = logging.getLogger(__name__)

__all__ = [
    "BackboneConfig",
    "ProjectionConfig",
    "gcn_forward",
    "gin_forward",
    "readout",
    "project",
    "Backbone",
    "ProjectionHead",
]


@dataclass
class BackboneConfig:
    kind: Literal["gcn", "gin", "gat"] = "gcn"
    num_layers: int = 2
    emb_dim: int = 128
    hidden_dim: int | None = None  # defaults to emb_dim
    gin_epsilon: float = 0.0
    dropout_p: float = 0.0

    def __post_init__(self):
        if self.kind not in ("gcn", "gin", "gat"):
            raise UsageError(f"unsupported backbone kind {self.kind!r} (choose 'gcn' or 'gin')")
        if self.num_layers < 1:
            raise UsageError("num_layers must be >= 1")
        if self.emb_dim < 1 or (self.hidden_dim is not None and self.hidden_dim < 1):
            raise UsageError("dimensions must be >= 1")
        if not 0.0 <= self.dropout_p < 1.0:
            raise UsageError("dropout_p must lie in [0, 1)")


@dataclass
class ProjectionConfig:
    kind: Literal["linear", "skip", "mlp2"] = "linear"

    def __post_init__(self):
        if self.kind not in ("linear", "skip", "mlp2"):
            raise UsageError(f"unsupported projection kind {self.kind!r}")


def gcn_forward(A_hat, H, W, activate: bool = True) -> Tensor:
    """One propagation step ``A_hat @ H @ W``, optionally followed by ReLU."""
    out = matmul(A_hat, matmul(H, W))
    return relu(out) if activate else out


def _adjacency_of(g) -> np.ndarray:
    return g.adjacency if hasattr(g, "adjacency") else np.asarray(g, dtype=np.float64)


def gin_forward(g, H, mlp_params, eps: float = 0.0, activate: bool = False) -> Tensor:
    """``MLP((1 + eps) * h_i + sum_{j in N(i)} h_j)`` with a two-layer ReLU MLP.

    ``mlp_params`` is ``(W1, b1, W2, b2)``; ``g`` is a Graph, GraphSet or raw adjacency.
    """
    A = _adjacency_of(g)
    H = as_tensor(H)
    if A.shape[0] != H.rows:
        raise ShapeError(f"gin: adjacency is {A.shape} but H has {H.rows} rows")
    W1, b1, W2, b2 = mlp_params
    agg = scale(H, 1.0 + eps) + matmul(A, H)
    hidden = relu(add_row(matmul(agg, W1), b1))
    out = add_row(matmul(hidden, W2), b2)
    return relu(out) if activate else out


def readout(H, offsets, mode: str = "mean") -> Tensor:
    """Per-graph sum or mean of node rows; ``offsets`` is a ``G x 2`` array of ``[start, end)``."""
    H = as_tensor(H)
    offsets = np.asarray(offsets, dtype=np.int64).reshape(-1, 2)
    if mode not in ("sum", "mean"):
        raise UsageError(f"unknown readout mode {mode!r}")
    P = np.zeros((len(offsets), H.rows))
    for i, (lo, hi) in enumerate(offsets):
        if hi <= lo or lo < 0 or hi > H.rows:
            raise UsageError(f"graph {i} has an empty or invalid node range [{lo}, {hi})")
        P[i, lo:hi] = 1.0 / (hi - lo) if mode == "mean" else 1.0
    return matmul(P, H)


def project(H, cfg: ProjectionConfig, params) -> Tensor:
    """linear: ``H W``; skip: ``H W + H``; mlp2: ``ReLU(H W1) W2``."""
    if cfg.kind == "linear":
        return matmul(H, params[0])
    if cfg.kind == "skip":
        return matmul(H, params[0]) + as_tensor(H)
    return matmul(relu(matmul(H, params[0])), params[1])


class Backbone:
    """Stack of GCN or GIN layers; every layer is followed by ReLU.

    Dropout (when configured) is applied to each layer's input during training.
    Attention backbones are not implemented: ``kind="gat"`` (kept so presets
    carry their published backbone) runs GCN layers instead.
    """

    def __init__(self, in_dim: int, cfg: BackboneConfig, rng: np.random.Generator):
        if cfg.kind == "gat":
            logger.warning("GAT backbone is not implemented; using GCN layers")
            cfg = BackboneConfig(**{**cfg.__dict__, "kind": "gcn"})
        self.cfg = cfg
        hidden = cfg.hidden_dim or cfg.emb_dim
        dims = [in_dim] + [hidden] * (cfg.num_layers - 1) + [cfg.emb_dim]
        self.layers: list[tuple[Tensor, ...]] = []
        for i, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
            if cfg.kind == "gcn":
                self.layers.append((glorot_init(d_in, d_out, rng, name=f"gcn{i}.W"),))
            else:
                self.layers.append((
                    glorot_init(d_in, d_out, rng, name=f"gin{i}.W1"),
                    Tensor(np.zeros((1, d_out)), requires_grad=True, name=f"gin{i}.b1"),
                    glorot_init(d_out, d_out, rng, name=f"gin{i}.W2"),
                    Tensor(np.zeros((1, d_out)), requires_grad=True, name=f"gin{i}.b2"),
                ))

    @property
    def params(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer]

    def __call__(self, graph, X, training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        """Node embeddings for ``graph`` (a Graph or GraphSet) with input features ``X``."""
        H = as_tensor(X)
        p = self.cfg.dropout_p
        for layer in self.layers:
            if training and p > 0:
                if rng is None:
                    raise UsageError("dropout during training needs an rng")
                H = dropout(H, p, rng, training=True)
            if self.cfg.kind == "gcn":
                H = gcn_forward(graph.norm_adjacency, H, layer[0], activate=True)
            else:
                H = gin_forward(graph, H, layer, self.cfg.gin_epsilon, activate=True)
        return H


class ProjectionHead:
    def __init__(self, dim: int, cfg: ProjectionConfig, rng: np.random.Generator):
        self.cfg = cfg
        n = 2 if cfg.kind == "mlp2" else 1
        self.params = [glorot_init(dim, dim, rng, name=f"proj.W{i}") for i in range(n)]

    def __call__(self, H) -> Tensor:
        return project(H, self.cfg, self.params)
