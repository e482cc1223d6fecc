"""Self-contained property suite for the contrastive bound and every gradient path.

Each check returns a :class:`CheckResult` carrying the measured quantity, its
threshold and the margin between them (positive margin = pass).
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import kernels
from .backbone import ProjectionConfig, gcn_forward, gin_forward, project, readout
from .evaluate import probe_loss
from .gradcheck import check_gradients
from .graph import GraphSet, normalized_adjacency, synth_sbm
from .losses import (
    ContrastiveBatch,
    cl_loss_mc,
    explicit_cl_loss,
    icl_upper,
    icl_upper_expanded,
    info_nce,
    noise_contrast_loss,
)
from .optim import glorot_init
from .rng import make_rng
from .tensor import Tensor, logsumexp_rows, mean, sigmoid, sum_all
from .vgae import LatentDistribution, VgaeParams, elbo_loss, encode, kl_divergence, sample_latent, total_loss

logger = logging.getLogger(__name__)

__all__ = [
    "CheckResult",
    "random_batch",
    "check_bound_dominance",
    "check_rewrite_equivalence",
    "check_sigma_collapse",
    "check_temperature_limit",
    "gradient_cases",
    "check_gradients_all",
    "check_complexity",
    "check_end_to_end",
    "run_suite",
    "write_report",
]

TWO_ROW_VALUE = math.log1p(math.exp(-1.0))  # -log(e / (e + 1))


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    threshold: float
    margin: float
    seconds: float = 0.0
    detail: dict = field(default_factory=dict)


def random_batch(rng: np.random.Generator, b: int, D: int, tau: float, requires_grad: bool = False) -> ContrastiveBatch:
    """``Z, mu ~ N(0, 1)``, ``log sigma ~ U(-2, 0)``."""
    Z = Tensor(rng.standard_normal((b, D)), requires_grad=requires_grad)
    mu = rng.standard_normal((b, D))
    sigma = np.exp(rng.uniform(-2.0, 0.0, size=(b, D)))
    return ContrastiveBatch(Z, mu, sigma, tau)


def _timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


def check_bound_dominance(num_batches: int = 100, M: int = 100_000, seed: int = 0) -> CheckResult:
    """Closed-form bound against a Monte-Carlo estimate of the expected loss, minus 3 standard errors."""
    def run():
        rng = make_rng(seed)
        margins = []
        for i in range(num_batches):
            b = (4, 8, 16)[i % 3]
            D = (2, 4, 8)[(i // 3) % 3]
            tau = (0.1, 1.0, 5.0)[(i // 9) % 3]
            batch = random_batch(rng, b, D, tau)
            upper = icl_upper(batch).item()
            mc, se = cl_loss_mc(batch, M, rng, return_stderr=True)
            margins.append(upper - (mc.item() - 3.0 * se))
        return np.array(margins)

    margins, secs = _timed(run)
    worst = float(margins.min())
    return CheckResult(
        "bound_dominance", bool(np.all(margins >= 0)), worst, 0.0, worst, secs,
        {"batches": num_batches, "M": M, "passing": int(np.sum(margins >= 0))},
    )


def check_rewrite_equivalence(num_batches: int = 1000, seed: int = 1, tol: float = 1e-12) -> CheckResult:
    """Fused bound against the per-anchor composite form (relative difference)."""
    def run():
        rng = make_rng(seed)
        worst = 0.0
        for _ in range(num_batches):
            b = int(rng.integers(1, 17))
            D = int(rng.integers(1, 9))
            tau = float(np.exp(rng.uniform(np.log(0.1), np.log(10.0))))
            batch = random_batch(rng, b, D, tau)
            a, c = icl_upper(batch).item(), icl_upper_expanded(batch).item()
            worst = max(worst, abs(a - c) / max(abs(a), abs(c), 1e-300) if (a or c) else 0.0)
        return worst

    worst, secs = _timed(run)
    return CheckResult("rewrite_equivalence", worst < tol, worst, tol, tol - worst, secs, {"batches": num_batches})


def check_sigma_collapse(num_batches: int = 100, seed: int = 2, tol: float = 1e-12) -> CheckResult:
    """``sigma = 0`` reduces the bound to InfoNCE with the means as queries."""
    def run():
        rng = make_rng(seed)
        worst = 0.0
        for _ in range(num_batches):
            b, D = int(rng.integers(1, 17)), int(rng.integers(1, 9))
            tau = float(rng.choice([0.1, 1.0, 5.0]))
            Z, mu = rng.standard_normal((b, D)), rng.standard_normal((b, D))
            val = icl_upper(ContrastiveBatch(Z, mu, 0.0, tau)).item()
            worst = max(worst, abs(val - info_nce(Z, mu, tau).item()))
        I2 = np.eye(2)
        two_row = icl_upper(ContrastiveBatch(I2, I2, 0.0, 1.0)).item()
        return worst, two_row

    (worst, two_row), secs = _timed(run)
    two_row_err = abs(two_row - TWO_ROW_VALUE)
    passed = worst < tol and two_row_err < 1e-6
    return CheckResult(
        "sigma_collapse", passed, worst, tol, tol - worst, secs,
        {"two_row_value": two_row, "two_row_expected": TWO_ROW_VALUE, "two_row_error": two_row_err},
    )


def check_temperature_limit(seed: int = 3, tol: float = 1e-5) -> CheckResult:
    """At very large temperature every logit vanishes and the bound tends to ``log b``."""
    def run():
        rng = make_rng(seed)
        worst = 0.0
        for b in (2, 4, 8):
            for _ in range(10):
                val = icl_upper(random_batch(rng, b, 4, 1e6)).item()
                worst = max(worst, abs(val - math.log(b)) / math.log(b))
        return worst

    worst, secs = _timed(run)
    return CheckResult("temperature_limit", worst < tol, worst, tol, tol - worst, secs, {"tau": 1e6})


# -- gradient checks ----------------------------------------------------------------------
GradCase = tuple[str, Callable[[], Tensor], list[Tensor]]


def gradient_cases(rng: np.random.Generator) -> list[GradCase]:
    """One fresh random instance of every differentiable loss and layer in the package."""
    cases: list[GradCase] = []
    g = synth_sbm([4, 3], 0.8, 0.2, 3, 1.0, 0.5, rng)
    A_hat = normalized_adjacency(g)
    N, F, D = g.num_nodes, g.num_features, 3

    params = VgaeParams.init(F, 4, D, rng)
    eps = rng.standard_normal((N, D))

    def elbo():
        dist = encode(g, params)
        return elbo_loss(g, dist, sample_latent(dist, eps=eps))

    cases.append(("elbo", elbo, params.tensors()))

    g2 = synth_sbm([3, 2], 0.9, 0.3, 3, 1.0, 0.5, rng)
    gs = GraphSet([g, g2])
    params2 = VgaeParams.init(F, 4, D, rng)
    eps2 = rng.standard_normal((gs.num_nodes, D))
    cases.append(("elbo_multi_graph", lambda: total_loss(gs, params2, eps=eps2), params2.tensors()))

    mu = Tensor(rng.standard_normal((N, D)), requires_grad=True)
    ls = Tensor(rng.uniform(-1, 0.5, (N, D)), requires_grad=True)
    cases.append(("kl", lambda: kl_divergence(LatentDistribution(mu, ls)), [mu, ls]))

    b = 6
    Zb = Tensor(rng.standard_normal((b, D)), requires_grad=True)
    mub, sigb = rng.standard_normal((b, D)), np.exp(rng.uniform(-2, 0, (b, D)))
    tau = float(rng.choice([0.5, 1.0, 2.0]))
    cases.append(("icl_upper", lambda: icl_upper(ContrastiveBatch(Zb, mub, sigb, tau)), [Zb]))
    cases.append(("icl_upper_expanded", lambda: icl_upper_expanded(ContrastiveBatch(Zb, mub, sigb, tau)), [Zb]))
    Zn = Tensor(rng.standard_normal((b, D)), requires_grad=True)
    cases.append(("icl_upper_normalized", lambda: icl_upper(ContrastiveBatch(Zn, mub, sigb, tau, normalize=True)), [Zn]))
    mc_seed = int(rng.integers(2**31))
    cases.append(("cl_loss_mc", lambda: cl_loss_mc(ContrastiveBatch(Zb, mub, sigb, tau), 64, make_rng(mc_seed)), [Zb]))
    A = Tensor(rng.standard_normal((b, D)), requires_grad=True)
    cases.append(("info_nce", lambda: info_nce(Zb, A, tau), [Zb, A]))
    cases.append(("noise_contrast", lambda: noise_contrast_loss(Zb, tau), [Zb]))
    Z2 = Tensor(rng.standard_normal((b, D)), requires_grad=True)
    cases.append(("explicit_cl", lambda: explicit_cl_loss(Zb, Z2, tau), [Zb, Z2]))

    C = 3
    X = rng.standard_normal((10, D))
    y = rng.integers(0, C, 10)
    W = Tensor(rng.standard_normal((D, C)) * 0.5, requires_grad=True)
    bias = Tensor(rng.standard_normal((1, C)) * 0.1, requires_grad=True)
    cases.append(("probe_logistic", lambda: probe_loss(X, W, bias, y, C, "logistic", 0.1), [W, bias]))
    cases.append(("probe_hinge", lambda: probe_loss(X, W, bias, y, C, "hinge", 0.1), [W, bias]))

    H = Tensor(rng.standard_normal((N, F)), requires_grad=True)
    Wg = glorot_init(F, D, rng)
    cases.append(("gcn_layer", lambda: sum_all(sigmoid(gcn_forward(A_hat, H, Wg, activate=True))), [H, Wg]))
    gin = [glorot_init(F, D, rng), Tensor(rng.standard_normal((1, D)), requires_grad=True),
           glorot_init(D, D, rng), Tensor(rng.standard_normal((1, D)), requires_grad=True)]
    cases.append(("gin_layer", lambda: sum_all(sigmoid(gin_forward(g, H, gin, 0.1, activate=True))), [H, *gin]))
    offsets = np.array([[0, 4], [4, N]])
    for mode in ("mean", "sum"):
        cases.append((f"readout_{mode}", lambda mode=mode: sum_all(sigmoid(readout(H, offsets, mode))), [H]))
    Hp = Tensor(rng.standard_normal((5, D)), requires_grad=True)
    for kind in ("linear", "skip", "mlp2"):
        pw = [glorot_init(D, D, rng) for _ in range(2 if kind == "mlp2" else 1)]
        cases.append((f"projection_{kind}", lambda kind=kind, pw=pw: sum_all(sigmoid(project(Hp, ProjectionConfig(kind), pw))), [Hp, *pw]))
    L = Tensor(rng.standard_normal((4, 5)) * 3, requires_grad=True)
    cases.append(("logsumexp_rows", lambda: mean(logsumexp_rows(L)), [L]))
    return cases


def check_gradients_all(points: int = 10, seed: int = 4, tol: float = 1e-5, h: float = 1e-5) -> CheckResult:
    """Every case in :func:`gradient_cases` at ``points`` independent random instances."""
    def run():
        rng = make_rng(seed)
        worst: dict[str, float] = {}
        for _ in range(points):
            for name, fn, params in gradient_cases(rng):
                worst[name] = max(worst.get(name, 0.0), check_gradients(fn, params, h))
        return worst

    worst, secs = _timed(run)
    top = max(worst.values())
    return CheckResult("gradients", top < tol, top, tol, tol - top, secs, {"per_case": worst, "points": points})


def _linear_r2(x: np.ndarray, y: np.ndarray) -> float:
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    return 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 0.0


def check_complexity(
    Ms=(1, 10, 100, 1000), b: int = 64, D: int = 16, repeats: int = 9, seed: int = 5,
    r2_min: float = 0.99, spread_max: float = 0.20,
) -> CheckResult:
    """Sampled-loss time grows linearly in ``M``; the closed form has no ``M`` to grow with.

    Each time is the fastest of ``repeats`` round-robin runs, which filters
    scheduler noise; the closed form is timed in blocks of 50 calls, being too
    fast to time singly. Its spread is ``(max - min) / min`` over the times measured
    alongside each ``M``.
    """
    rng = make_rng(seed)
    batch = random_batch(rng, b, D, 1.0, requires_grad=True)

    def timed(fn, calls: int = 1) -> float:
        t0 = time.perf_counter()
        for _ in range(calls):
            fn()
        return (time.perf_counter() - t0) / calls

    t_start = time.perf_counter()
    icl_upper(batch)  # warm-up
    mc_runs = [[] for _ in Ms]
    icl_runs = [[] for _ in Ms]
    # round-robin over M so a transient slowdown hits every sweep point alike
    for _ in range(repeats):
        for j, M in enumerate(Ms):
            mc_runs[j].append(timed(lambda: cl_loss_mc(batch, M, make_rng(M))))
            icl_runs[j].append(timed(lambda: icl_upper(batch), calls=50))
    mc_times = [min(t) for t in mc_runs]
    icl_times = [min(t) for t in icl_runs]
    r2 = _linear_r2(np.array(Ms, dtype=float), np.array(mc_times))
    spread = (max(icl_times) - min(icl_times)) / min(icl_times)
    passed = r2 > r2_min and spread < spread_max
    return CheckResult(
        "complexity", passed, r2, r2_min, min(r2 - r2_min, spread_max - spread), time.perf_counter() - t_start,
        {"M": list(Ms), "mc_seconds": mc_times, "icl_seconds": icl_times, "r2": r2,
         "icl_spread": spread, "icl_spread_max": spread_max},
    )


E2E_MIN_ACCURACY = 0.85
E2E_MIN_GAIN = 0.05


def check_end_to_end(seeds: int = 10, min_accuracy: float = E2E_MIN_ACCURACY, min_gain: float = E2E_MIN_GAIN) -> CheckResult:
    """Node pipeline on the SBM bed: probe accuracy of learned embeddings vs raw features.

    Seed ``s`` draws the graph, initialises the models and splits the probe.
    """
    from .evaluate import EmbeddingTable
    from .studies import evaluate_embeddings, sbm_bed, sbm_bed_config
    from .train import train_node

    def run():
        learned, raw = [], []
        for s in range(seeds):
            g = sbm_bed(s)
            res = train_node(g, sbm_bed_config(seed=s))
            learned.append(evaluate_embeddings(res.embeddings, "node", s))
            raw.append(evaluate_embeddings(EmbeddingTable(np.arange(g.num_nodes), g.features, g.labels), "node", s))
        return learned, raw

    (learned, raw), secs = _timed(run)
    acc, raw_acc = float(np.mean(learned)), float(np.mean(raw))
    gain = acc - raw_acc
    margin = min(acc - min_accuracy, gain - min_gain)
    return CheckResult(
        "end_to_end", margin >= 0, acc, min_accuracy, margin, secs,
        {"seeds": seeds, "raw_feature_accuracy": raw_acc, "gain": gain, "min_gain": min_gain,
         "accuracy_per_seed": learned, "raw_accuracy_per_seed": raw},
    )


def run_suite(quick: bool = False, seed: int = 0, e2e: bool = False) -> dict:
    """All checks; ``quick`` uses M=1e4 and 20 batches for the dominance check.

    ``e2e`` adds the SBM node-pipeline run (3 seeds when ``quick``, else 10).
    """
    checks = [
        check_bound_dominance(20 if quick else 100, 10_000 if quick else 100_000, seed),
        check_rewrite_equivalence(100 if quick else 1000, seed + 1),
        check_sigma_collapse(seed=seed + 2),
        check_temperature_limit(seed=seed + 3),
        check_gradients_all(3 if quick else 10, seed=seed + 4),
        check_complexity(seed=seed + 5),
    ]
    if e2e:
        checks.append(check_end_to_end(3 if quick else 10))
    return {
        "backend": kernels.BACKEND,
        "quick": quick,
        "passed": all(c.passed for c in checks),
        "checks": {c.name: asdict(c) for c in checks},
    }


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        return None if not math.isfinite(float(x)) else float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def write_report(report: dict, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n", encoding="utf-8")

