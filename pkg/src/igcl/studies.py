"""Ablation and reconstruction-sensitivity studies."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import spearmanr

from .backbone import BackboneConfig, ProjectionConfig
from .config import TrainConfig
from .errors import UsageError
from .evaluate import EmbeddingTable, kfold_probe, linear_probe
from .graph import Graph, GraphSet, split_nodes, synth_sbm
from .rng import make_rng
from .train import train
from .vgae import LatentDistribution, Vgae, aggregate_graph, recon_metrics

logger = logging.getLogger(__name__)

__all__ = [
    "SBM_BED",
    "sbm_bed",
    "sbm_bed_config",
    "STRATEGIES",
    "ABLATION_HEADER",
    "SENSITIVITY_HEADER",
    "ProbeSettings",
    "evaluate_embeddings",
    "latent_embeddings",
    "AblationRow",
    "ablation_suite",
    "SensitivityRow",
    "SensitivityResult",
    "reconstruction_report",
    "sensitivity_study",
    "write_ablation_csv",
    "write_sensitivity_csv",
]

# Desk-scale node classification bed: three communities whose feature means
# differ by one unit per block against unit noise, so raw features alone are weak.
SBM_BED = dict(block_sizes=(50, 50, 50), p_in=0.10, p_out=0.01, feature_dim=16, feature_shift=1.0, noise_sd=1.0)


def sbm_bed(seed: int = 0) -> Graph:
    return synth_sbm(rng=make_rng(seed), **SBM_BED)


def sbm_bed_config(**overrides) -> TrainConfig:
    """Small node-level configuration used for the SBM bed (2-layer GCN, 32 dims, MLP projection)."""
    base = dict(
        level="node", epochs=100, emb_size=32,
        backbone=BackboneConfig(kind="gcn", num_layers=2, emb_dim=32),
        projection=ProjectionConfig(kind="mlp2"), tau=1.0, lr=1e-3,
    )
    base.update(overrides)
    return TrainConfig(**base)


# ablation table row order
STRATEGIES = ("noise", "vgae_only", "explicit_cl", "icl")
ABLATION_HEADER = ("strategy", "mean", "sd", "n")
SENSITIVITY_HEADER = (
    "seed", "target", "vgae_epoch", "rate", "recon_rate", "accuracy_at_half", "auc", "accuracy", "flagged",
)


@dataclass
class ProbeSettings:
    """How embeddings are scored.

    Node level: logistic probe on a random ``fractions`` split (seeded per run)
    with top-``top_k`` checkpoint averaging. Graph level: k-fold hinge probe.
    """

    fractions: tuple[float, float, float] = (0.2, 0.2, 0.6)
    loss_kind: str = "logistic"
    l2: float = 1e-3
    epochs: int = 200
    lr: float = 0.01
    top_k: int = 5
    folds: int = 10


def evaluate_embeddings(emb: EmbeddingTable, level: str, seed: int, probe: ProbeSettings | None = None) -> float:
    probe = probe or ProbeSettings()
    if level == "graph":
        return kfold_probe(emb, k=probe.folds, seed=seed)["mean"]
    split = split_nodes(len(emb), probe.fractions, make_rng(10_000 + seed))
    res = linear_probe(
        emb.subset(split.train), emb.subset(split.val), emb.subset(split.test),
        probe.loss_kind, probe.l2, probe.epochs, probe.lr, probe.top_k, seed=seed,
    )
    return res.test_accuracy


def latent_embeddings(data: Graph | GraphSet, latents: LatentDistribution) -> EmbeddingTable:
    """VGAE means as embeddings: per node, or mean-aggregated per graph."""
    if isinstance(data, GraphSet):
        mu = aggregate_graph(latents, data.offsets).mu_g.data
        return EmbeddingTable(np.arange(len(data)), mu.copy(), data.labels)
    labels = data.labels if data.labels is not None and np.ndim(data.labels) == 1 else None
    return EmbeddingTable(np.arange(data.num_nodes), latents.mu.data.copy(), labels)


@dataclass
class AblationRow:
    strategy: str
    mean: float
    sd: float
    accuracies: list[float] = field(default_factory=list)


def ablation_suite(
    data: Graph | GraphSet,
    cfg: TrainConfig,
    seeds: Sequence[int] | int = 10,
    probe: ProbeSettings | None = None,
    edge_drop: float = 0.2,
    node_drop: float = 0.2,
) -> list[AblationRow]:
    """Four training strategies under identical seeds and epoch budgets.

    ``noise``: bound with standard-normal latents; ``vgae_only``: the VGAE
    means from the ``icl`` run used directly as embeddings; ``explicit_cl``:
    two perturbed views per step; ``icl``: the full method.
    """
    seeds = list(range(seeds)) if isinstance(seeds, int) else list(seeds)
    if not seeds:
        raise UsageError("ablation needs at least one seed")
    accs: dict[str, list[float]] = {s: [] for s in STRATEGIES}
    for seed in seeds:
        run_cfg = cfg.replace(seed=seed)
        icl = train(data, run_cfg, objective="icl")
        accs["icl"].append(evaluate_embeddings(icl.embeddings, cfg.level, seed, probe))
        accs["vgae_only"].append(evaluate_embeddings(latent_embeddings(data, icl.latents), cfg.level, seed, probe))
        noise = train(data, run_cfg, objective="noise")
        accs["noise"].append(evaluate_embeddings(noise.embeddings, cfg.level, seed, probe))
        explicit = train(data, run_cfg, objective="explicit", edge_drop=edge_drop, node_drop=node_drop)
        accs["explicit_cl"].append(evaluate_embeddings(explicit.embeddings, cfg.level, seed, probe))
        logger.info("ablation seed %d: %s", seed, {k: v[-1] for k, v in accs.items()})
    return [AblationRow(s, float(np.mean(accs[s])), float(np.std(accs[s])), accs[s]) for s in STRATEGIES]


# -- sensitivity to reconstruction quality ---------------------------------------------
def reconstruction_report(data: Graph | GraphSet, latents: LatentDistribution) -> dict[str, float]:
    """``recon_metrics`` for one graph, or their mean over a graph set (edgeless graphs skipped)."""
    if isinstance(data, Graph):
        return recon_metrics(latents, data)
    reports = []
    for g, (lo, hi) in zip(data.graphs, data.offsets):
        r = recon_metrics(latents.rows(np.arange(lo, hi)), g)
        if not r["flagged"]:
            reports.append(r)
    if not reports:
        return {"auc": math.nan, "accuracy_at_half": math.nan, "recon_rate": math.nan, "flagged": True}
    out = {k: float(np.mean([r[k] for r in reports])) for k in ("auc", "accuracy_at_half", "recon_rate")}
    out["flagged"] = False
    return out


@dataclass
class SensitivityRow:
    seed: int
    target: float
    vgae_epoch: int
    rate: float
    recon_rate: float
    accuracy_at_half: float
    auc: float
    accuracy: float
    flagged: bool


@dataclass
class SensitivityResult:
    rows: list[SensitivityRow]
    metric: str
    spearman_per_seed: list[float]

    @property
    def spearman_mean(self) -> float:
        vals = [v for v in self.spearman_per_seed if not math.isnan(v)]
        return float(np.mean(vals)) if vals else math.nan


def sensitivity_study(
    data: Graph | GraphSet,
    cfg: TrainConfig,
    recon_targets: Sequence[float] = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6),
    seeds: Sequence[int] | int = 10,
    metric: str = "accuracy_at_half",
    max_vgae_epochs: int = 500,
    probe: ProbeSettings | None = None,
) -> SensitivityResult:
    """Contrastive training against VGAE snapshots taken at increasing reconstruction quality.

    A fresh VGAE is trained one epoch at a time; the first epoch at which
    ``metric`` reaches each target freezes a snapshot of the latents. Each
    snapshot then drives a contrastive run (latents held fixed) whose
    embeddings are probed. Targets never reached within ``max_vgae_epochs``
    give flagged rows with NaN accuracy.

    ``metric`` is ``"accuracy_at_half"`` (fraction of node pairs, self-pairs
    included, classified correctly at probability 0.5) or ``"recon_rate"``
    (fraction of true edges predicted). Edge recall is close to 1 at
    initialisation for an inner-product decoder over non-negative hidden
    features, so it rarely produces distinct snapshots; see the README.
    """
    if metric not in ("accuracy_at_half", "recon_rate", "auc"):
        raise UsageError(f"unknown reconstruction metric {metric!r}")
    targets = sorted(float(t) for t in recon_targets)
    seeds = list(range(seeds)) if isinstance(seeds, int) else list(seeds)
    in_dim = data.features.shape[1] if isinstance(data, GraphSet) else data.num_features
    rows: list[SensitivityRow] = []
    spearman: list[float] = []
    for seed in seeds:
        vrng = make_rng(20_000 + seed)
        vgae = Vgae(in_dim, cfg.vgae_hidden or cfg.emb_size, cfg.emb_size, make_rng(30_000 + seed),
                    lr=cfg.vgae_lr, weight_decay=cfg.vgae_weight_decay, pos_weight_on=cfg.pos_weight)
        snapshots: dict[float, tuple[int, LatentDistribution, dict]] = {}
        pending = list(targets)
        for epoch in range(max_vgae_epochs + 1):
            if epoch:
                vgae.step(data, vrng)
            latents = vgae.encode(data)
            report = reconstruction_report(data, latents)
            while pending and report[metric] >= pending[0]:
                snapshots[pending.pop(0)] = (epoch, latents, report)
            if not pending:
                break
        seed_rows = []
        for t in targets:
            if t not in snapshots:
                logger.warning("seed %d: %s never reached %.2f within %d VGAE epochs", seed, metric, t, max_vgae_epochs)
                seed_rows.append(SensitivityRow(seed, t, -1, math.nan, math.nan, math.nan, math.nan, math.nan, True))
                continue
            epoch, latents, report = snapshots[t]
            res = train(data, cfg.replace(seed=seed), objective="icl", latents=latents)
            acc = evaluate_embeddings(res.embeddings, cfg.level, seed, probe)
            seed_rows.append(SensitivityRow(
                seed, t, epoch, report[metric], report["recon_rate"], report["accuracy_at_half"],
                report["auc"], acc, False,
            ))
        rows.extend(seed_rows)
        ok = [r for r in seed_rows if not r.flagged]
        rates, accs = [r.rate for r in ok], [r.accuracy for r in ok]
        if len(ok) >= 3 and np.ptp(rates) > 0 and np.ptp(accs) > 0:
            spearman.append(float(spearmanr(rates, accs).statistic))
        else:
            spearman.append(math.nan)
    return SensitivityResult(rows, metric, spearman)


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "nan" if math.isnan(x) else repr(float(x))


def write_ablation_csv(rows: list[AblationRow], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(ABLATION_HEADER) + "\n")
        for r in rows:
            fh.write(f"{r.strategy},{_fmt(r.mean)},{_fmt(r.sd)},{len(r.accuracies)}\n")


def write_sensitivity_csv(result: SensitivityResult, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(SENSITIVITY_HEADER) + "\n")
        for r in result.rows:
            fh.write(",".join(_fmt(getattr(r, k)) for k in SENSITIVITY_HEADER) + "\n")
