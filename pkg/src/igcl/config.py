"""Training configuration, JSON schema and the named hyper-parameter presets."""

from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field
from typing import Any

import jsonschema

from .backbone import BackboneConfig, ProjectionConfig
from .errors import UsageError

__all__ = [
    "TrainConfig",
    "CONFIG_SCHEMA",
    "GRAPH_PRESETS",
    "NODE_PRESETS",
    "PRESETS",
    "preset",
    "validate_config_dict",
    "apply_override",
]


@dataclass
class TrainConfig:
    level: str = "node"
    epochs: int = 100
    vgae_inner_steps: int = 1
    batch_size: int | None = None  # None: every node (node level) / 32 graphs (graph level)
    emb_size: int = 128
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    projection: ProjectionConfig = field(default_factory=ProjectionConfig)
    tau: float = 1.0
    lr: float = 1e-3
    lr_step: float | None = None
    weight_decay: float = 0.0
    vgae_lr: float = 0.01
    vgae_weight_decay: float = 0.0
    vgae_hidden: int | None = None  # defaults to emb_size
    vgae_mode: str = "interleaved"
    vgae_pretrain_epochs: int = 200
    pos_weight: bool = True
    readout: str = "mean"
    normalize: bool = False
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.backbone, dict):
            self.backbone = BackboneConfig(**self.backbone)
        if isinstance(self.projection, dict):
            self.projection = ProjectionConfig(**self.projection)
        # the embedding size drives both the backbone output and the latent width
        self.backbone.emb_dim = self.emb_size
        self.validate()

    def validate(self) -> None:
        if self.level not in ("node", "graph"):
            raise UsageError(f"level must be 'node' or 'graph', got {self.level!r}")
        if self.epochs < 1:
            raise UsageError("epochs must be >= 1")
        if self.vgae_inner_steps < 1:
            raise UsageError("vgae_inner_steps must be >= 1")
        if self.batch_size is not None and self.batch_size < 2:
            raise UsageError("batch_size must be >= 2; the contrastive loss is degenerate for one row")
        if not self.tau > 0:
            raise UsageError("tau must be positive")
        if self.vgae_mode not in ("interleaved", "pretrained"):
            raise UsageError(f"vgae_mode must be 'interleaved' or 'pretrained', got {self.vgae_mode!r}")
        if self.readout not in ("mean", "sum"):
            raise UsageError(f"readout must be 'mean' or 'sum', got {self.readout!r}")
        if self.lr_step is not None and not self.lr_step > 0:
            raise UsageError("lr_step must be positive")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for zero-based ``epoch``."""
        return self.lr * (self.lr_step**epoch if self.lr_step else 1.0)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> TrainConfig:
        validate_config_dict(data)
        return cls(**copy.deepcopy(data))

    def replace(self, **changes) -> TrainConfig:
        data = self.to_dict()
        data.update(changes)
        return TrainConfig(**data)


_POS_NUMBER = {"type": "number", "exclusiveMinimum": 0}
_POS_INT = {"type": "integer", "minimum": 1}

CONFIG_SCHEMA: dict[str, Any] = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "level": {"enum": ["node", "graph"]},
        "epochs": _POS_INT,
        "vgae_inner_steps": _POS_INT,
        "batch_size": {"anyOf": [{"type": "integer", "minimum": 2}, {"type": "null"}]},
        "emb_size": _POS_INT,
        "backbone": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["gcn", "gin", "gat"]},
                "num_layers": _POS_INT,
                "emb_dim": _POS_INT,
                "hidden_dim": {"anyOf": [_POS_INT, {"type": "null"}]},
                "gin_epsilon": {"type": "number"},
                "dropout_p": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
            },
        },
        "projection": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"kind": {"enum": ["linear", "skip", "mlp2"]}},
        },
        "tau": _POS_NUMBER,
        "lr": _POS_NUMBER,
        "lr_step": {"anyOf": [_POS_NUMBER, {"type": "null"}]},
        "weight_decay": {"type": "number", "minimum": 0},
        "vgae_lr": _POS_NUMBER,
        "vgae_weight_decay": {"type": "number", "minimum": 0},
        "vgae_hidden": {"anyOf": [_POS_INT, {"type": "null"}]},
        "vgae_mode": {"enum": ["interleaved", "pretrained"]},
        "vgae_pretrain_epochs": {"type": "integer", "minimum": 0},
        "pos_weight": {"type": "boolean"},
        "readout": {"enum": ["mean", "sum"]},
        "normalize": {"type": "boolean"},
        "seed": {"type": "integer", "minimum": 0},
    },
}


def validate_config_dict(data: dict[str, Any]) -> None:
    """Raise :class:`UsageError` naming the offending field path on a schema violation."""
    try:
        jsonschema.validate(data, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise UsageError(f"config field {where}: {exc.message}") from None


def apply_override(data: dict[str, Any], dotted: str, value: Any) -> None:
    """Set ``data['a']['b'] = value`` for ``dotted == 'a.b'``, creating objects as needed."""
    keys = dotted.split(".")
    node = data
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise UsageError(f"cannot override {dotted!r}: {key!r} is not an object")
    node[keys[-1]] = value


# Graph-level rows: projection, num_epochs, num_layers, emb_size, batch_size, lr, l2, tau.
GRAPH_PRESETS: dict[str, dict[str, Any]] = {
    "mutag": dict(projection="skip", epochs=100, num_layers=5, emb_size=256, batch_size=16, lr=5e-4, weight_decay=5e-3, tau=0.01),
    "nci1": dict(projection="linear", epochs=100, num_layers=5, emb_size=256, batch_size=32, lr=1e-4, weight_decay=5e-3, tau=3.54),
    "proteins": dict(projection="linear", epochs=20, num_layers=2, emb_size=256, batch_size=64, lr=1e-4, weight_decay=1e-2, tau=5.0),
    "collab": dict(projection="linear", epochs=20, num_layers=8, emb_size=256, batch_size=128, lr=5e-4, weight_decay=1e-2, tau=1.98),
    "imdb-b": dict(projection="linear", epochs=20, num_layers=2, emb_size=512, batch_size=16, lr=1e-4, weight_decay=5e-3, tau=5.0),
    "imdb-m": dict(projection="skip", epochs=100, num_layers=8, emb_size=128, batch_size=64, lr=5e-4, weight_decay=1e-2, tau=10.0),
}

# Node-level rows: backbone, num_epochs, emb_size, dropout, lr, lr step, l2, tau.
NODE_PRESETS: dict[str, dict[str, Any]] = {
    "cora": dict(backbone="gcn", epochs=300, emb_size=256, dropout=0.5, lr=1e-4, lr_step=None, weight_decay=5e-3, tau=1.0),
    "citeseer": dict(backbone="gat", epochs=300, emb_size=512, dropout=0.5, lr=5e-4, lr_step=0.85, weight_decay=1e-2, tau=5.0),
    "pubmed": dict(backbone="gcn", epochs=1000, emb_size=128, dropout=0.5, lr=1e-4, lr_step=None, weight_decay=1e-4, tau=4.7),
    "photo": dict(backbone="gat", epochs=600, emb_size=256, dropout=0.5, lr=5e-3, lr_step=0.85, weight_decay=5e-3, tau=1.0),
    "computers": dict(backbone="gat", epochs=600, emb_size=256, dropout=0.5, lr=1e-3, lr_step=0.85, weight_decay=5e-3, tau=1.0),
}

PRESETS = sorted([*GRAPH_PRESETS, *NODE_PRESETS])


def preset(name: str, **overrides) -> TrainConfig:
    """Build the :class:`TrainConfig` for a named preset.

    Graph presets use a GIN backbone; node presets use a two-layer backbone
    with a two-layer MLP projection. Fields the tables leave open keep the
    :class:`TrainConfig` defaults.
    """
    key = name.lower()
    if key in GRAPH_PRESETS:
        row = GRAPH_PRESETS[key]
        cfg = TrainConfig(
            level="graph",
            epochs=row["epochs"],
            batch_size=row["batch_size"],
            emb_size=row["emb_size"],
            backbone=BackboneConfig(kind="gin", num_layers=row["num_layers"], emb_dim=row["emb_size"]),
            projection=ProjectionConfig(kind=row["projection"]),
            tau=row["tau"],
            lr=row["lr"],
            weight_decay=row["weight_decay"],
        )
    elif key in NODE_PRESETS:
        row = NODE_PRESETS[key]
        cfg = TrainConfig(
            level="node",
            epochs=row["epochs"],
            emb_size=row["emb_size"],
            backbone=BackboneConfig(kind=row["backbone"], num_layers=2, emb_dim=row["emb_size"], dropout_p=row["dropout"]),
            projection=ProjectionConfig(kind="mlp2"),
            tau=row["tau"],
            lr=row["lr"],
            lr_step=row["lr_step"],
            weight_decay=row["weight_decay"],
        )
    else:
        raise UsageError(f"unknown preset {name!r}; valid presets: {', '.join(PRESETS)}")
    return cfg.replace(**overrides) if overrides else cfg
