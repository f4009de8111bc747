"""Evolutionary search for accurate, fast, and small classifier ensembles.

The package composes pretrained classifiers into ensembles (averaging and
voting mergers, early-exit chains, arbitrary nestings) and searches the
ensemble space with a multi-objective evolutionary loop. Everything is
evaluated from cached per-model prediction matrices; no model inference
happens here.
"""

__version__ = "0.1.0"

from .errors import EarnError, GraphValidationError, PoolFormatError
from .pool import ModelPool, ModelRecord, PredictionSet, load_pool, synth_pool, write_pool

__all__ = [
    "__version__",
    "EarnError",
    "GraphValidationError",
    "PoolFormatError",
    "ModelPool",
    "ModelRecord",
    "PredictionSet",
    "load_pool",
    "synth_pool",
    "write_pool",
]
