"""Command-line interface.

Exit codes: 0 success, 1 verification failure, 2 usage or configuration
error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__, kernels
from .config import PRESETS, TrainConfig, apply_override, preset, validate_config_dict
from .errors import NumericError, ParseError, UsageError
from .evaluate import EmbeddingTable, clustering_metrics, export_embeddings, import_embeddings, kfold_probe, kmeans
from .graph import (
    Graph,
    GraphSet,
    karate_club,
    load_graph,
    load_graphset_manifest,
    load_labels_csv,
    save_graph,
    synth_graph_families,
    synth_sbm,
)
from .rng import make_rng
from .studies import (
    ProbeSettings,
    ablation_suite,
    evaluate_embeddings,
    sbm_bed,
    sbm_bed_config,
    sensitivity_study,
    write_ablation_csv,
    write_sensitivity_csv,
)
from .train import train, write_history_csv
from .verify import run_suite, write_report

logger = logging.getLogger("igcl")

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# -- helpers ------------------------------------------------------------------------
def _parse_value(text: str):
    """``--set`` values are JSON when they parse as JSON, else plain strings."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent, capture_output=True, text=True, timeout=10,
        )
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() or "unknown"


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def resolve_config(args) -> TrainConfig:
    """Preset or config file (a manifest's ``config`` also works), then ``--set`` and ``--seed``."""
    if getattr(args, "preset", None) and getattr(args, "config", None):
        raise UsageError("give either --preset or --config, not both")
    if getattr(args, "preset", None):
        data = preset(args.preset).to_dict()
    elif getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if isinstance(data, dict) and "config" in data and "manifest_version" in data:
            data = data["config"]
    else:
        data = sbm_bed_config().to_dict()
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        apply_override(data, key.strip(), _parse_value(value))
    if getattr(args, "seed", None) is not None:
        data["seed"] = args.seed
    validate_config_dict(data)
    return TrainConfig.from_dict(data)


def load_data(args, cfg: TrainConfig) -> tuple[Graph | GraphSet, dict]:
    """Graph from files, a graph-set manifest, or a synthetic default matching ``cfg.level``."""
    if args.graphset:
        return load_graphset_manifest(args.graphset), {"graphset": str(args.graphset)}
    if args.edges:
        g = load_graph(args.edges, args.features, args.labels)
        return g, {"edges": str(args.edges), "features": args.features and str(args.features),
                   "labels": args.labels and str(args.labels)}
    if cfg.level == "graph":
        gs = synth_graph_families(args.num_graphs, 8, make_rng(args.data_seed))
        return gs, {"synthetic": "graph_families", "num_graphs": args.num_graphs, "data_seed": args.data_seed}
    if args.synth == "karate":
        return karate_club(), {"synthetic": "karate"}
    return sbm_bed(args.data_seed), {"synthetic": "sbm_bed", "data_seed": args.data_seed}


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", help=f"named preset: {', '.join(PRESETS)}")
    p.add_argument("--config", type=Path, help="JSON config (or a run manifest)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field by dotted path")
    p.add_argument("--seed", type=int)


def _add_data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--edges", type=Path, help="edge list (src,dst per line)")
    p.add_argument("--features", type=Path, help="headerless feature CSV")
    p.add_argument("--labels", type=Path, help="headerless label CSV")
    p.add_argument("--graphset", type=Path, help="graph-set manifest JSON (graph level)")
    p.add_argument("--synth", choices=("sbm", "karate"), default="sbm",
                   help="synthetic node-level data when no files are given (default: SBM bed)")
    p.add_argument("--data-seed", type=int, default=0)
    p.add_argument("--num-graphs", type=int, default=20, help="synthetic graph-level set size")


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# -- commands -------------------------------------------------------------------------
def cmd_train(args) -> int:
    cfg = resolve_config(args)
    data, data_info = load_data(args, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "manifest_version": 1,
        "package_version": __version__,
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "objective": args.objective,
        "data": data_info,
        "git_describe": git_describe(),
        "kernel_backend": kernels.BACKEND,
        "threads": _threads(),
        "started": _now(),
        "finished": None,
        "outputs": {k: str(out / f) for k, f in
                    (("embeddings", "embeddings.csv"), ("history", "history.csv"), ("manifest", "manifest.json"))},
    }
    _write_json(out / "manifest.json", manifest)
    result = train(data, cfg, objective=args.objective)
    export_embeddings(result.embeddings, out / "embeddings.csv")
    write_history_csv(result.history, out / "history.csv")
    manifest["finished"] = _now()
    _write_json(out / "manifest.json", manifest)
    last = result.history[-1]
    print(f"trained {cfg.epochs} epochs; final contrastive loss {last.icl_loss:.6f}; wrote {out}")
    return EXIT_OK


def _labels_for(emb: EmbeddingTable, labels_path) -> EmbeddingTable:
    if labels_path is None:
        if emb.labels is None:
            raise UsageError("embeddings carry no labels; pass --labels")
        return emb
    labels = load_labels_csv(labels_path)
    if int(emb.ids.max(initial=-1)) >= len(labels) or np.any(emb.ids < 0):
        raise UsageError(f"label file has {len(labels)} rows but embedding ids reach {int(emb.ids.max())}")
    return EmbeddingTable(emb.ids, emb.vectors, labels[emb.ids])


def cmd_eval(args) -> int:
    emb = _labels_for(import_embeddings(args.embeddings), args.labels)
    if emb.labels is not None and np.any(emb.labels < 0):
        raise UsageError("labels must be non-negative class ids")
    if args.mode == "probe":
        if len(np.unique(emb.labels)) < 2:
            raise UsageError("probe needs at least two classes")
        acc = evaluate_embeddings(emb, "node", args.seed, ProbeSettings())
        row = {"mode": "probe", "test_accuracy": acc}
    elif args.mode == "kfold":
        res = kfold_probe(emb, k=args.k, seed=args.seed)
        row = {"mode": "kfold", "mean": res["mean"], "sd": res["sd"], "k": args.k, "flagged_folds": len(res["flagged"])}
    else:
        k = args.clusters or len(np.unique(emb.labels))
        km = kmeans(emb.vectors, k, restarts=10, rng=make_rng(args.seed))
        row = {"mode": "cluster", **clustering_metrics(km.assignments, emb.labels), "k": k}
    out = Path(args.out) if args.out else Path(args.embeddings).with_name("metrics.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(",".join(row) + "\n")
        fh.write(",".join(str(v) if isinstance(v, (str, int)) else repr(float(v)) for v in row.values()) + "\n")
    print(", ".join(f"{k}={v}" for k, v in row.items()))
    return EXIT_OK


def cmd_verify(args) -> int:
    report = run_suite(quick=args.quick, seed=args.seed, e2e=args.e2e)
    write_report(report, args.out)
    failed = [name for name, c in report["checks"].items() if not c["passed"]]
    for name, c in report["checks"].items():
        print(f"{'PASS' if c['passed'] else 'FAIL'} {name}: value={c['value']:.3e} threshold={c['threshold']:.3e} "
              f"({c['seconds']:.1f}s)")
    if failed:
        print(f"verification failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = resolve_config(args)
    data, _ = load_data(args, cfg)
    rows = ablation_suite(data, cfg, seeds=args.seeds, edge_drop=args.edge_drop, node_drop=args.node_drop)
    out = Path(args.out)
    write_ablation_csv(rows, out / "ablation.csv")
    for r in rows:
        print(f"{r.strategy:12s} {r.mean:.4f} +- {r.sd:.4f}")
    return EXIT_OK


def cmd_sensitivity(args) -> int:
    cfg = resolve_config(args)
    data, _ = load_data(args, cfg)
    targets = [float(t) for t in args.targets.split(",")]
    res = sensitivity_study(data, cfg, targets, seeds=args.seeds, metric=args.metric, max_vgae_epochs=args.max_vgae_epochs)
    out = Path(args.out)
    write_sensitivity_csv(res, out / "sensitivity.csv")
    _write_json(out / "sensitivity_summary.json", {
        "metric": res.metric,
        "spearman_per_seed": [None if np.isnan(v) else v for v in res.spearman_per_seed],
        "spearman_mean": None if np.isnan(res.spearman_mean) else res.spearman_mean,
    })
    print(f"reached rows: {sum(not r.flagged for r in res.rows)}/{len(res.rows)}; mean Spearman {res.spearman_mean:.4f}")
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.kind == "karate":
        g = karate_club()
    else:
        try:
            blocks = [int(x) for x in args.blocks.split(",")]
        except ValueError:
            raise UsageError(f"--blocks must be comma-separated integers, got {args.blocks!r}") from None
        g = synth_sbm(blocks, args.p_in, args.p_out, args.feature_dim, args.feature_shift, args.noise_sd,
                      make_rng(args.seed))
    paths = save_graph(g, args.out, prefix=args.kind)
    print(f"{args.kind}: {g.num_nodes} nodes, {g.num_edges} edges -> {', '.join(str(p) for p in paths.values())}")
    return EXIT_OK


# -- entry point ------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="igcl", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a backbone and export embeddings")
    _add_config_args(p)
    _add_data_args(p)
    p.add_argument("--objective", choices=("icl", "noise", "explicit"), default="icl")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score an embeddings CSV")
    p.add_argument("embeddings", type=Path)
    p.add_argument("--labels", type=Path, help="headerless label CSV indexed by id (default: label column)")
    p.add_argument("--mode", choices=("probe", "kfold", "cluster"), default="probe")
    p.add_argument("--k", type=int, default=10, help="folds for kfold mode")
    p.add_argument("--clusters", type=int, help="k-means clusters (default: number of classes)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, help="metrics CSV (default: metrics.csv next to the embeddings)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify", help="run the property suite")
    p.add_argument("--quick", action="store_true", help="M=1e4 and 20 batches for bound dominance")
    p.add_argument("--e2e", action="store_true", help="include the SBM end-to-end pipeline check")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("verify_report.json"))
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("ablate", help="compare the four training strategies")
    _add_config_args(p)
    _add_data_args(p)
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--edge-drop", type=float, default=0.2)
    p.add_argument("--node-drop", type=float, default=0.2)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sensitivity", help="accuracy against VGAE reconstruction quality")
    _add_config_args(p)
    _add_data_args(p)
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--targets", default="0.1,0.2,0.3,0.4,0.5,0.6")
    p.add_argument("--metric", choices=("accuracy_at_half", "recon_rate", "auc"), default="accuracy_at_half")
    p.add_argument("--max-vgae-epochs", type=int, default=500)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_sensitivity)

    p = sub.add_parser("synth", help="write a synthetic graph in the loader formats")
    p.add_argument("kind", choices=("sbm", "karate"))
    p.add_argument("--blocks", default="50,50,50")
    p.add_argument("--p-in", type=float, default=0.10)
    p.add_argument("--p-out", type=float, default=0.01)
    p.add_argument("--feature-dim", type=int, default=16)
    p.add_argument("--feature-shift", type=float, default=1.0)
    p.add_argument("--noise-sd", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def _threads() -> int:
    try:
        n = int(os.environ.get("IGCL_THREADS", "1"))
    except ValueError:
        raise UsageError("IGCL_THREADS must be a positive integer") from None
    if n < 1:
        raise UsageError("IGCL_THREADS must be a positive integer")
    return n


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        with threadpool_limits(limits=_threads()):
            return args.func(args)
    except (UsageError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
