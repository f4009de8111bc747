"""Shared test utilities: independent oracles and random graph generation.

The evaluation oracle walks one sample at a time through the graph, mirroring
the documented arithmetic (canonical child order, fsum latency) without any
of the evaluator's vectorized batching, so agreement is evidence rather than
tautology.
"""

from __future__ import annotations

import math
import random

import numpy as np

from earn.evaluator import EvalContext, ObjectiveVector, RENORM_EPSILON
from earn.graph import (
    Chain,
    Classifier,
    MergeProtocol,
    Merger,
    Node,
    merger_eval_order,
)
from earn.pool import ModelPool, ModelRecord, PredictionSet


def make_pool(
    probs_by_model: dict[str, list],
    labels: list[int],
    *,
    latencies: dict[str, float] | None = None,
    params: dict[str, int] | None = None,
    test_probs: dict[str, list] | None = None,
    test_labels: list[int] | None = None,
    dataset: str = "handmade",
) -> ModelPool:
    """Small hand-built pool; test split defaults to the validation data."""
    val_labels = np.asarray(labels, dtype="<u4")
    tst_labels = np.asarray(test_labels if test_labels is not None else labels, dtype="<u4")
    n_classes = int(np.asarray(next(iter(probs_by_model.values()))).shape[1])
    models = []
    for i, (model_id, probs) in enumerate(probs_by_model.items()):
        val = np.asarray(probs, dtype="<f4")
        tst = np.asarray(
            test_probs[model_id] if test_probs is not None else probs, dtype="<f4"
        )
        lat = float(latencies[model_id]) if latencies else float(i + 1)
        par = int(params[model_id]) if params else 10 ** (i + 3)
        models.append(
            ModelRecord(
                model_id=model_id,
                param_count=par,
                latencies={"cpu": lat},
                validation=PredictionSet(probs=val, labels=val_labels),
                test=PredictionSet(probs=tst, labels=tst_labels),
            )
        )
    return ModelPool(
        dataset_name=dataset, n_classes=n_classes, models=tuple(models), platforms=("cpu",)
    )

# ---------------------------------------------------------------------------
# per-sample evaluation oracle


def _oracle_merge_rows(merger: Merger, rows: list[np.ndarray], order) -> np.ndarray:
    proto = merger.protocol
    k = len(rows)
    n_classes = rows[0].shape[0]

    def renorm(vec: np.ndarray) -> np.ndarray:
        s = vec.sum()
        if abs(s) < RENORM_EPSILON:
            return np.full(n_classes, 1.0 / n_classes)
        return vec / s

    if proto is MergeProtocol.AVERAGE:
        acc = rows[0].copy()
        for r in rows[1:]:
            acc = acc + r
        return acc / k
    if proto is MergeProtocol.WEIGHTED_AVERAGE:
        acc = None
        for pos, r in enumerate(rows):
            term = merger.weights[order[pos]] * r
            acc = term.copy() if acc is None else acc + term
        return renorm(acc)
    if proto in (MergeProtocol.VOTING, MergeProtocol.WEIGHTED_VOTING):
        acc = np.zeros(n_classes)
        for pos, r in enumerate(rows):
            vote = int(np.argmax(r))
            acc[vote] += 1.0 if proto is MergeProtocol.VOTING else merger.weights[order[pos]]
        return acc / k if proto is MergeProtocol.VOTING else renorm(acc)
    acc = None
    for pos, r in enumerate(rows):
        term = r if proto is MergeProtocol.MAX else merger.weights[order[pos]] * r
        acc = term.copy() if acc is None else np.maximum(acc, term)
    return renorm(acc)


def oracle_walk_sample(
    node: Node, i: int, ctx: EvalContext, split: str
) -> tuple[np.ndarray, list[tuple[str, bool]]]:
    """Predict one sample by walking the tree; returns (row, activations)."""
    if isinstance(node, Classifier):
        return ctx.matrix(node.model_id, split)[i], [(node.model_id, True)]
    if isinstance(node, Chain):
        activations = []
        answer = None
        reached = True
        last = len(node.stages) - 1
        for idx, stage in enumerate(node.stages):
            activations.append((stage.model_id, reached))
            if reached:
                row = ctx.matrix(stage.model_id, split)[i]
                if idx == last or row.max() > node.thresholds[idx]:
                    answer = row
                    reached = False
        return answer, activations
    order = merger_eval_order(node)
    rows = []
    activations: list[tuple[str, bool]] = []
    for j in order:
        row, acts = oracle_walk_sample(node.children[j], i, ctx, split)
        rows.append(row)
        activations.extend(acts)
    return _oracle_merge_rows(node, rows, order), activations


def oracle_evaluate(graph: Node, ctx: EvalContext) -> ObjectiveVector:
    """Sample-by-sample reference implementation of the three objectives."""
    split = ctx.split
    labels = ctx.labels(split)
    n = labels.shape[0]
    wrong = 0
    counts: list[int] = []
    names: list[str] = []
    for i in range(n):
        row, activations = oracle_walk_sample(graph, i, ctx, split)
        if int(np.argmax(row)) != int(labels[i]):
            wrong += 1
        if not counts:
            counts = [0] * len(activations)
            names = [model_id for model_id, _ in activations]
        for j, (_model_id, active) in enumerate(activations):
            if active:
                counts[j] += 1
    error = wrong / n
    latency = math.fsum((c / n) * ctx.latency_of(m) for m, c in zip(names, counts))

    ids: list[str] = []

    def collect(node: Node) -> None:
        if isinstance(node, Classifier):
            ids.append(node.model_id)
        elif isinstance(node, Chain):
            for s in node.stages:
                collect(s)
        else:
            for c in node.children:
                collect(c)

    collect(graph)
    if ctx.size_per_node:
        size = sum(ctx.pool.model(m).param_count for m in ids)
    else:
        size = sum(ctx.pool.model(m).param_count for m in sorted(set(ids)))
    return ObjectiveVector(error=error, latency=latency, size=size)


def oracle_activation_fractions(graph: Node, ctx: EvalContext) -> list[tuple[str, float]]:
    """Per classifier node (traversal order): fraction of samples it scores."""
    split = ctx.split
    n = ctx.n_samples(split)
    counts: list[int] = []
    names: list[str] = []
    for i in range(n):
        _row, activations = oracle_walk_sample(graph, i, ctx, split)
        if not counts:
            counts = [0] * len(activations)
            names = [model_id for model_id, _ in activations]
        for j, (_m, active) in enumerate(activations):
            if active:
                counts[j] += 1
    return [(m, c / n) for m, c in zip(names, counts)]


# ---------------------------------------------------------------------------
# dominance oracle (plain O(n^2) front peeling)


def oracle_nondominated_sort(points) -> list[list[int]]:
    n = len(points)
    if n == 0:
        return []

    def dom(a, b) -> bool:
        return all(x <= y for x, y in zip(a, b)) and any(x < y for x, y in zip(a, b))

    dominated_by = [0] * n
    dominates_list: list[list[int]] = [[] for _ in range(n)]
    for i in range(n):
        for j in range(n):
            if i != j and dom(points[i], points[j]):
                dominates_list[i].append(j)
                dominated_by[j] += 1
    fronts = []
    current = [i for i in range(n) if dominated_by[i] == 0]
    while current:
        fronts.append(sorted(current))
        nxt = []
        for i in current:
            for j in dominates_list[i]:
                dominated_by[j] -= 1
                if dominated_by[j] == 0:
                    nxt.append(j)
        current = nxt
    return fronts


# ---------------------------------------------------------------------------
# random graphs


def random_graph(
    rng: random.Random,
    pool: ModelPool,
    ctx: EvalContext | None = None,
    max_depth: int = 4,
) -> Node:
    """Random valid graph within the depth limit.

    Weighted mergers get either computed validation weights (when a context is
    given, 70% of the time) or arbitrary weights in [-1, 3], negative values
    included, to exercise stored-weight evaluation paths.
    """
    ids = pool.model_ids

    def gen(budget: int) -> Node:
        kinds = ["classifier"]
        if budget >= 2:
            kinds += ["chain", "merger"]
        kind = rng.choice(kinds)
        if kind == "classifier":
            return Classifier(rng.choice(ids))
        if kind == "chain":
            k = rng.randint(2, 4)
            stages = tuple(Classifier(rng.choice(ids)) for _ in range(k))
            taus = tuple(round(rng.random(), 6) for _ in range(k - 1))
            return Chain(stages, taus)
        k = rng.randint(2, 3)
        children = tuple(gen(budget - 1) for _ in range(k))
        proto = rng.choice(list(MergeProtocol))
        if proto.weighted:
            if ctx is not None and rng.random() < 0.7:
                weights = ctx.merger_weights(children)
            else:
                weights = tuple(round(rng.uniform(-1.0, 3.0), 6) for _ in children)
            return Merger(proto, children, weights)
        return Merger(proto, children, None)

    return gen(max_depth)
