"""Implicit graph contrastive learning with VGAE latent augmentations."""

from . import kernels
from .config import TrainConfig, preset
from .errors import DomainError, IGCLError, NumericError, ParseError, ShapeError, UsageError
from .graph import Graph, GraphSet, karate_club, synth_sbm
from .losses import ContrastiveBatch, cl_loss_mc, icl_upper
from .tensor import Tensor

__version__ = "0.1.0"

__all__ = [
    "kernels",
    "TrainConfig",
    "preset",
    "DomainError",
    "IGCLError",
    "NumericError",
    "ParseError",
    "ShapeError",
    "UsageError",
    "Graph",
    "GraphSet",
    "karate_club",
    "synth_sbm",
    "ContrastiveBatch",
    "cl_loss_mc",
    "icl_upper",
    "Tensor",
]
