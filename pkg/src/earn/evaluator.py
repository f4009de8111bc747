"""Graph evaluation from cached predictions: error, latency, size.

All three objectives are minimized and derived purely from pool data:

* error: fraction of misclassified samples on the context's split.
* latency: sum over classifier nodes of activation_fraction x per-batch
  latency on the context's platform. Non-chain nodes always activate on every
  sample; chain stages only on samples that reach them. Duplicate model nodes
  are charged once per node.
* size: parameter counts summed over distinct model ids (a shared model is
  stored once); ``size_per_node=True`` switches to per-node counting.

Evaluation is deterministic and memoized by structural hash. Merger children
are processed in canonical structural order and latency accumulates with
``math.fsum``, so permuting children or re-running with a different thread
count yields bit-identical objective vectors.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass

import numpy as np

from .errors import GraphValidationError
from .graph import (
    Chain,
    Classifier,
    MergeProtocol,
    Merger,
    Node,
    merger_eval_order,
    model_ids,
    structural_hash,
)
from .pool import SPLITS, ModelPool

OBJECTIVE_NAMES = ("error", "latency", "size")

# Error clamp for ensemble weights: keeps log-odds finite on perfect or
# hopeless members.
SAMME_ERR_FLOOR = 1e-6
RENORM_EPSILON = 1e-12


def samme_weight(err: float, n_classes: int) -> float:
    """Multi-class log-odds weight: ln((1-e)/e) + ln(n_classes - 1).

    Negative whenever the member is worse than random guessing.
    """
    if n_classes < 2:
        raise ValueError("n_classes must be >= 2")
    e = min(max(float(err), SAMME_ERR_FLOOR), 1.0 - SAMME_ERR_FLOOR)
    return math.log((1.0 - e) / e) + math.log(n_classes - 1)


@dataclass(frozen=True)
class ObjectiveVector:
    """One evaluation outcome; every component is minimized."""

    error: float
    latency: float
    size: int

    def values(self, names: tuple[str, ...] = OBJECTIVE_NAMES) -> tuple[float, ...]:
        return tuple(float(getattr(self, n)) for n in names)


def normalize_objectives(names) -> tuple[str, ...]:
    requested = tuple(names)
    for n in requested:
        if n not in OBJECTIVE_NAMES:
            raise ValueError(f"unknown objective {n!r}; choose from {OBJECTIVE_NAMES}")
    if not requested:
        raise ValueError("at least one objective is required")
    return tuple(n for n in OBJECTIVE_NAMES if n in requested)


class EvalContext:
    """Pool + split + platform + objective selection, with caches.

    Holds per-model float64 matrices, per-model max activations, a memo table
    of objective vectors keyed by structural hash, and a validation-error
    cache used for ensemble weights. Safe to share across worker threads.
    """

    def __init__(
        self,
        pool: ModelPool,
        split: str = "validation",
        platform: str | None = None,
        objectives=OBJECTIVE_NAMES,
        size_per_node: bool = False,
    ):
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}; expected one of {SPLITS}")
        self.pool = pool
        self.split = split
        if platform is None:
            platform = pool.platforms[0]
        if platform not in pool.platforms:
            raise ValueError(f"platform {platform!r} not in pool platforms {pool.platforms}")
        self.platform = platform
        self.objectives = normalize_objectives(objectives)
        self.size_per_node = size_per_node

        self._lock = threading.RLock()
        self._matrices: dict[tuple[str, str], np.ndarray] = {}
        self._max_act: dict[tuple[str, str], np.ndarray] = {}
        self._labels: dict[str, np.ndarray] = {}
        self._memo: dict[int, ObjectiveVector] = {}
        self._val_err: dict[int, float] = {}

    # -- cached pool views ---------------------------------------------------

    def matrix(self, model_id: str, split: str | None = None) -> np.ndarray:
        split = split or self.split
        key = (model_id, split)
        with self._lock:
            m = self._matrices.get(key)
            if m is None:
                m = self.pool.model(model_id).split(split).probs.astype(np.float64)
                m.setflags(write=False)
                self._matrices[key] = m
            return m

    def max_activation(self, model_id: str, split: str | None = None) -> np.ndarray:
        split = split or self.split
        key = (model_id, split)
        with self._lock:
            v = self._max_act.get(key)
            if v is None:
                v = self.matrix(model_id, split).max(axis=1)
                v.setflags(write=False)
                self._max_act[key] = v
            return v

    def labels(self, split: str | None = None) -> np.ndarray:
        split = split or self.split
        with self._lock:
            lab = self._labels.get(split)
            if lab is None:
                lab = self.pool.models[0].split(split).labels.astype(np.int64)
                lab.setflags(write=False)
                self._labels[split] = lab
            return lab

    def latency_of(self, model_id: str) -> float:
        return self.pool.model(model_id).latencies[self.platform]

    def n_samples(self, split: str | None = None) -> int:
        return int(self.labels(split).shape[0])

    # -- objective projection --------------------------------------------------

    def vector(self, ov: ObjectiveVector) -> tuple[float, ...]:
        """Project onto the enabled objectives, canonical order."""
        return ov.values(self.objectives)

    # -- evaluation ------------------------------------------------------------

    def cached(self, graph_hash: int) -> ObjectiveVector | None:
        with self._lock:
            return self._memo.get(graph_hash)

    def evaluate(self, graph: Node) -> ObjectiveVector:
        return evaluate(graph, self)

    def validation_error(self, node: Node) -> float:
        """Misclassification rate of ``node`` on the validation split,
        memoized by structural hash. Drives ensemble weights."""
        h = structural_hash(node)
        with self._lock:
            if h in self._val_err:
                return self._val_err[h]
        probs, _ = predict(node, self, split="validation")
        preds = probs.argmax(axis=1)
        labels = self.labels("validation")
        err = int(np.sum(preds != labels)) / labels.shape[0]
        with self._lock:
            self._val_err[h] = err
        return err

    def merger_weights(self, children: tuple[Node, ...]) -> tuple[float, ...]:
        """Log-odds weight per child, from validation error."""
        return tuple(
            samme_weight(self.validation_error(c), self.pool.n_classes) for c in children
        )


def refresh_weights(node: Node, ctx: EvalContext) -> Node:
    """Recompute stored weights bottom-up so they track child validation
    errors; unweighted mergers carry no weights. Search operators call this
    after every structural edit."""
    if isinstance(node, Classifier) or isinstance(node, Chain):
        return node
    children = tuple(refresh_weights(c, ctx) for c in node.children)
    if node.protocol.weighted:
        return Merger(node.protocol, children, ctx.merger_weights(children))
    return Merger(node.protocol, children, None)


# ---------------------------------------------------------------------------
# prediction


def _renormalize(acc: np.ndarray) -> np.ndarray:
    sums = acc.sum(axis=1)
    degenerate = np.abs(sums) < RENORM_EPSILON
    if np.any(degenerate):
        acc = acc.copy()
        acc[degenerate] = 1.0 / acc.shape[1]
        sums = np.where(degenerate, 1.0, sums)
    return acc / sums[:, None]


def _predict_chain(chain: Chain, ctx: EvalContext, split: str):
    n = ctx.n_samples(split)
    out = np.empty((n, ctx.pool.n_classes), dtype=np.float64)
    reach = np.ones(n, dtype=bool)
    activations = []
    last = len(chain.stages) - 1
    for i, stage in enumerate(chain.stages):
        activations.append((stage.model_id, reach.copy()))
        matrix = ctx.matrix(stage.model_id, split)
        if i < last:
            # exit here iff max activation strictly exceeds tau_i
            exits = reach & (ctx.max_activation(stage.model_id, split) > chain.thresholds[i])
            out[exits] = matrix[exits]
            reach = reach & ~exits
        else:
            out[reach] = matrix[reach]
    return out, activations


def _predict_merger(merger: Merger, ctx: EvalContext, split: str):
    if merger.protocol.weighted and merger.weights is None:
        raise GraphValidationError(
            [f"protocol {merger.protocol.value} requires weights; run validation first"]
        )
    order = merger_eval_order(merger)
    results = [_predict(merger.children[j], ctx, split) for j in order]
    activations = [a for _, acts in results for a in acts]
    n = results[0][0].shape[0]
    k = len(results)

    proto = merger.protocol
    if proto in (MergeProtocol.AVERAGE, MergeProtocol.WEIGHTED_AVERAGE):
        acc = None
        for pos, (probs, _) in enumerate(results):
            term = probs if proto is MergeProtocol.AVERAGE else merger.weights[order[pos]] * probs
            acc = term.copy() if acc is None else acc + term
        merged = acc / k if proto is MergeProtocol.AVERAGE else _renormalize(acc)
    elif proto in (MergeProtocol.VOTING, MergeProtocol.WEIGHTED_VOTING):
        acc = np.zeros_like(results[0][0])
        rows = np.arange(n)
        for pos, (probs, _) in enumerate(results):
            votes = probs.argmax(axis=1)  # ties to lowest index
            acc[rows, votes] += 1.0 if proto is MergeProtocol.VOTING else merger.weights[order[pos]]
        merged = acc / k if proto is MergeProtocol.VOTING else _renormalize(acc)
    else:  # max variants
        acc = None
        for pos, (probs, _) in enumerate(results):
            term = probs if proto is MergeProtocol.MAX else merger.weights[order[pos]] * probs
            acc = term.copy() if acc is None else np.maximum(acc, term)
        merged = _renormalize(acc)
    return merged, activations


def _predict(node: Node, ctx: EvalContext, split: str):
    if isinstance(node, Classifier):
        n = ctx.n_samples(split)
        return ctx.matrix(node.model_id, split), [(node.model_id, np.ones(n, dtype=bool))]
    if isinstance(node, Chain):
        return _predict_chain(node, ctx, split)
    if isinstance(node, Merger):
        return _predict_merger(node, ctx, split)
    raise TypeError(f"not a graph node: {type(node).__name__}")


def predict(node: Node, ctx: EvalContext, split: str | None = None):
    """Return (probability matrix, activation list) for ``node``.

    The activation list holds one ``(model_id, boolean mask)`` entry per
    classifier node: chain stages in stage order, merger children in canonical
    evaluation order. Masks mark the samples each node actually scores.
    """
    return _predict(node, ctx, split or ctx.split)


# ---------------------------------------------------------------------------
# objectives


def _size(node: Node, ctx: EvalContext) -> int:
    ids = model_ids(node)
    if ctx.size_per_node:
        return sum(ctx.pool.model(i).param_count for i in ids)
    return sum(ctx.pool.model(i).param_count for i in sorted(set(ids)))


def _evaluate_uncached(graph: Node, ctx: EvalContext) -> ObjectiveVector:
    probs, activations = predict(graph, ctx)
    labels = ctx.labels()
    n = labels.shape[0]
    preds = probs.argmax(axis=1)
    error = int(np.sum(preds != labels)) / n
    latency = math.fsum(
        (int(mask.sum()) / n) * ctx.latency_of(model_id) for model_id, mask in activations
    )
    return ObjectiveVector(error=error, latency=latency, size=_size(graph, ctx))


def evaluate(graph: Node, ctx: EvalContext) -> ObjectiveVector:
    """Objective vector for ``graph``, memoized by structural hash.

    Thresholds are folded to 1e-6 by the hash, so graphs differing only below
    that resolution share one cache entry.
    """
    h = structural_hash(graph)
    hit = ctx.cached(h)
    if hit is not None:
        return hit
    ov = _evaluate_uncached(graph, ctx)
    with ctx._lock:
        ctx._memo[h] = ov
    return ov
