"""Training loops: alternating VGAE / backbone updates at node and graph level."""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .backbone import Backbone, ProjectionHead, readout
from .config import TrainConfig
from .errors import NumericError, UsageError
from .evaluate import EmbeddingTable
from .graph import Graph, GraphSet, perturb_graph
from .losses import ContrastiveBatch, explicit_cl_loss, icl_upper, noise_contrast_loss
from .optim import Adam
from .rng import spawn
from .tensor import take_rows
from .vgae import LatentDistribution, Vgae, aggregate_graph

logger = logging.getLogger(__name__)

__all__ = [
    "OBJECTIVES",
    "HistoryRow",
    "TrainResult",
    "build_models",
    "train_node",
    "train_graph",
    "train",
    "write_history_csv",
    "read_history_csv",
]

OBJECTIVES = ("icl", "noise", "explicit")
HISTORY_HEADER = ("epoch", "vgae_loss", "icl_loss", "lr")
STREAMS = ["init", "vgae_init", "vgae", "dropout", "batch", "perturb"]


@dataclass
class HistoryRow:
    epoch: int
    vgae_loss: float
    icl_loss: float
    lr: float


@dataclass
class TrainResult:
    embeddings: EmbeddingTable
    history: list[HistoryRow]
    step_log: list[str] = field(repr=False, default_factory=list)
    latents: LatentDistribution | None = field(repr=False, default=None)
    backbone: Backbone | None = field(repr=False, default=None)
    projection: ProjectionHead | None = field(repr=False, default=None)
    vgae: Vgae | None = field(repr=False, default=None)

    def losses(self, column: str = "icl_loss") -> np.ndarray:
        return np.array([getattr(r, column) for r in self.history])


def build_models(in_dim: int, cfg: TrainConfig, streams) -> tuple[Backbone, ProjectionHead, Vgae, Adam]:
    backbone = Backbone(in_dim, cfg.backbone, streams["init"])
    proj = ProjectionHead(cfg.emb_size, cfg.projection, streams["init"])
    vgae = Vgae(
        in_dim, cfg.vgae_hidden or cfg.emb_size, cfg.emb_size, streams["vgae_init"],
        lr=cfg.vgae_lr, weight_decay=cfg.vgae_weight_decay, pos_weight_on=cfg.pos_weight,
    )
    opt = Adam(backbone.params + proj.params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    return backbone, proj, vgae, opt


def _check_objective(objective: str) -> None:
    if objective not in OBJECTIVES:
        raise UsageError(f"unknown objective {objective!r}; choose from {', '.join(OBJECTIVES)}")


def _uses_vgae(objective: str, latents) -> bool:
    return objective == "icl" and latents is None


def _labels_or_none(labels, n: int):
    if labels is None:
        return None
    labels = np.asarray(labels)
    return labels if labels.shape == (n,) else None


def train_node(
    g: Graph,
    cfg: TrainConfig,
    objective: str = "icl",
    latents: LatentDistribution | None = None,
    edge_drop: float = 0.2,
    node_drop: float = 0.2,
) -> TrainResult:
    """Node-level training.

    Each epoch: (interleaved mode) read the current latents, take ``K`` VGAE
    steps, then embed every node, draw ``b`` distinct nodes uniformly and take
    one backbone/projection step on the contrastive objective over that batch.

    ``objective`` selects the contrastive term: ``"icl"`` (closed-form bound
    against VGAE latents), ``"noise"`` (standard-normal latents, no VGAE) or
    ``"explicit"`` (two perturbed graph views). Passing ``latents`` fixes the
    contrastive targets and skips VGAE training altogether.

    Returns backbone outputs (before projection) for every node.
    """
    if cfg.level != "node":
        raise UsageError(f"train_node needs a node-level config, got level={cfg.level!r}")
    _check_objective(objective)
    N = g.num_nodes
    b = N if cfg.batch_size is None else cfg.batch_size
    if b > N:
        raise UsageError(f"batch size {b} exceeds the number of nodes {N}")
    if b < 2:
        raise UsageError("node-level training needs at least two nodes per batch")
    streams = spawn(cfg.seed, STREAMS)
    backbone, proj, vgae, opt = build_models(g.num_features, cfg, streams)
    step_log: list[str] = []
    train_vgae = _uses_vgae(objective, latents)

    if train_vgae and cfg.vgae_mode == "pretrained":
        for _ in range(cfg.vgae_pretrain_epochs):
            vgae.step(g, streams["vgae"])
            step_log.append("vgae")
        latents = vgae.encode(g)
        train_vgae = False

    history: list[HistoryRow] = []
    for epoch in range(cfg.epochs):
        opt.lr = cfg.lr_at(epoch)
        try:
            vgae_loss = float("nan")
            current = latents
            if train_vgae:
                current = vgae.encode(g)
                vgae_loss = float(np.mean([vgae.step(g, streams["vgae"]) for _ in range(cfg.vgae_inner_steps)]))
                step_log.extend(["vgae"] * cfg.vgae_inner_steps)
            opt.zero_grad()
            idx = np.sort(streams["batch"].choice(N, size=b, replace=False))
            if objective == "explicit":
                views = [perturb_graph(g, edge_drop, node_drop, streams["perturb"]) for _ in range(2)]
                Z1, Z2 = (
                    proj(take_rows(backbone(v, v.features, training=True, rng=streams["dropout"]), idx))
                    for v in views
                )
                loss = explicit_cl_loss(Z1, Z2, cfg.tau)
            else:
                H = backbone(g, g.features, training=True, rng=streams["dropout"])
                Zb = proj(take_rows(H, idx))
                if objective == "noise":
                    loss = noise_contrast_loss(Zb, cfg.tau)
                else:
                    batch = ContrastiveBatch(Zb, current.mu.data[idx], current.sigma[idx], cfg.tau, cfg.normalize)
                    loss = icl_upper(batch)
            loss.backward()
            opt.step()
            step_log.append("theta")
        except NumericError as exc:
            raise NumericError(f"training diverged at epoch {epoch}: {exc}") from exc
        history.append(HistoryRow(epoch, vgae_loss, loss.item(), opt.lr))

    if train_vgae:
        latents = vgae.encode(g)
    H = backbone(g, g.features, training=False).data
    if not np.isfinite(H).all():
        raise NumericError("final embeddings are not finite")
    emb = EmbeddingTable(np.arange(N), H.copy(), _labels_or_none(g.labels, N))
    return TrainResult(emb, history, step_log, latents, backbone, proj, vgae)


def _graph_batches(G: int, size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(G)
    return [np.sort(order[i:i + size]) for i in range(0, G, size)]


def train_graph(
    gs: GraphSet,
    cfg: TrainConfig,
    objective: str = "icl",
    latents: LatentDistribution | None = None,
    edge_drop: float = 0.2,
    node_drop: float = 0.2,
) -> TrainResult:
    """Graph-level training over shuffled mini-batches of whole graphs.

    Per batch: read node latents for the batch's block-diagonal composition and
    mean-aggregate them per graph, take ``K`` VGAE steps on the batch, then one
    backbone/projection step with one contrastive row per graph. A trailing
    batch holding a single graph is skipped with a warning.

    ``latents`` (node-level, aligned with ``gs``) fixes the targets and skips
    VGAE training. History rows average the per-batch losses of each epoch.
    """
    if cfg.level != "graph":
        raise UsageError(f"train_graph needs a graph-level config, got level={cfg.level!r}")
    _check_objective(objective)
    G = len(gs)
    if G < 2:
        raise UsageError("graph-level training needs at least two graphs")
    b = 32 if cfg.batch_size is None else cfg.batch_size
    streams = spawn(cfg.seed, STREAMS)
    backbone, proj, vgae, opt = build_models(gs.features.shape[1], cfg, streams)
    step_log: list[str] = []
    train_vgae = _uses_vgae(objective, latents)

    if train_vgae and cfg.vgae_mode == "pretrained":
        for _ in range(cfg.vgae_pretrain_epochs):
            vgae.step(gs, streams["vgae"])
            step_log.append("vgae")
        latents = vgae.encode(gs)
        train_vgae = False

    history: list[HistoryRow] = []
    for epoch in range(cfg.epochs):
        opt.lr = cfg.lr_at(epoch)
        vgae_losses, icl_losses = [], []
        try:
            for idx in _graph_batches(G, b, streams["batch"]):
                if len(idx) < 2:
                    warnings.warn(f"epoch {epoch}: skipping a batch with a single graph", stacklevel=2)
                    continue
                sub = gs.subset(idx)
                if train_vgae:
                    glat = aggregate_graph(vgae.encode(sub), sub.offsets)
                    vgae_losses.append(np.mean([vgae.step(sub, streams["vgae"]) for _ in range(cfg.vgae_inner_steps)]))
                    step_log.extend(["vgae"] * cfg.vgae_inner_steps)
                elif latents is not None:
                    rows = np.concatenate([np.arange(*gs.offsets[i]) for i in idx])
                    glat = aggregate_graph(latents.rows(rows), sub.offsets)
                opt.zero_grad()
                if objective == "explicit":
                    views = [
                        GraphSet([perturb_graph(g, edge_drop, node_drop, streams["perturb"]) for g in sub.graphs])
                        for _ in range(2)
                    ]
                    Z1, Z2 = (
                        proj(readout(backbone(v, v.features, training=True, rng=streams["dropout"]), v.offsets, cfg.readout))
                        for v in views
                    )
                    loss = explicit_cl_loss(Z1, Z2, cfg.tau)
                else:
                    H = backbone(sub, sub.features, training=True, rng=streams["dropout"])
                    Z = proj(readout(H, sub.offsets, cfg.readout))
                    if objective == "noise":
                        loss = noise_contrast_loss(Z, cfg.tau)
                    else:
                        loss = icl_upper(ContrastiveBatch(Z, glat.mu_g.data, glat.sigma_g, cfg.tau, cfg.normalize))
                loss.backward()
                opt.step()
                step_log.append("theta")
                icl_losses.append(loss.item())
        except NumericError as exc:
            raise NumericError(f"training diverged at epoch {epoch}: {exc}") from exc
        history.append(HistoryRow(
            epoch,
            float(np.mean(vgae_losses)) if vgae_losses else float("nan"),
            float(np.mean(icl_losses)) if icl_losses else float("nan"),
            opt.lr,
        ))

    if train_vgae:
        latents = vgae.encode(gs)
    R = readout(backbone(gs, gs.features, training=False), gs.offsets, cfg.readout).data
    if not np.isfinite(R).all():
        raise NumericError("final embeddings are not finite")
    emb = EmbeddingTable(np.arange(G), R.copy(), gs.labels)
    return TrainResult(emb, history, step_log, latents, backbone, proj, vgae)


def train(data: Graph | GraphSet, cfg: TrainConfig, **kwargs) -> TrainResult:
    """Dispatch on ``cfg.level``."""
    if cfg.level == "node":
        if not isinstance(data, Graph):
            raise UsageError("node-level training needs a single Graph")
        return train_node(data, cfg, **kwargs)
    if not isinstance(data, GraphSet):
        raise UsageError("graph-level training needs a GraphSet")
    return train_graph(data, cfg, **kwargs)


def _fmt(x: float) -> str:
    return "nan" if math.isnan(x) else repr(float(x))


def write_history_csv(history: list[HistoryRow], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(HISTORY_HEADER) + "\n")
        for r in history:
            fh.write(f"{r.epoch},{_fmt(r.vgae_loss)},{_fmt(r.icl_loss)},{_fmt(r.lr)}\n")


def read_history_csv(path) -> list[HistoryRow]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [HistoryRow(int(r["epoch"]), float(r["vgae_loss"]), float(r["icl_loss"]), float(r["lr"])) for r in rows]
