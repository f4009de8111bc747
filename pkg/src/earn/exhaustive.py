"""Exhaustive ensemble baselines for small pools.

Enumerates fixed families (k-member mergers, two-stage chains over a
threshold grid), evaluates them all, and extracts the exact Pareto front.
Used as the ground-truth oracle the evolutionary search is measured against,
and exposed through the CLI for side-by-side tables.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Iterable, Sequence

from .evaluator import EvalContext, ObjectiveVector
from .graph import Chain, Classifier, MergeProtocol, Merger, Node, serialize
from .moo import non_dominated_indices
from .pool import ModelPool

UNWEIGHTED_PROTOCOLS = (MergeProtocol.AVERAGE, MergeProtocol.VOTING, MergeProtocol.MAX)
WEIGHTED_PROTOCOLS = (
    MergeProtocol.WEIGHTED_AVERAGE,
    MergeProtocol.WEIGHTED_VOTING,
    MergeProtocol.WEIGHTED_MAX,
)


@dataclass(frozen=True)
class EnumRow:
    strategy: str  # bagging | boosting | chain2 | single
    members: tuple[str, ...]
    protocol: str  # empty for chains and singles
    tau: float | None  # set for chains only
    graph: Node
    objectives: ObjectiveVector


def default_tau_grid(step: float = 0.01) -> tuple[float, ...]:
    """Thresholds from 0 inclusive to 1 exclusive: {0, step, 2*step, ...}.

    tau = 1 is excluded (it forwards every sample, duplicating the plain
    last-stage classifier).
    """
    if not 0.0 < step <= 1.0:
        raise ValueError("step must be in (0, 1]")
    taus = []
    i = 0
    while True:
        tau = round(i * step, 10)
        if tau >= 1.0 - 1e-12:
            break
        taus.append(tau)
        i += 1
    return tuple(taus)


def enumerate_singles(pool: ModelPool, ctx: EvalContext) -> list[EnumRow]:
    rows = []
    for model_id in pool.model_ids:
        graph: Node = Classifier(model_id)
        rows.append(
            EnumRow(
                strategy="single",
                members=(model_id,),
                protocol="",
                tau=None,
                graph=graph,
                objectives=ctx.evaluate(graph),
            )
        )
    return rows


def enumerate_mergers(
    pool: ModelPool,
    ctx: EvalContext,
    k: int,
    protocols: Sequence[MergeProtocol],
    strategy: str,
) -> list[EnumRow]:
    """Every k-combination of pool models under each protocol.

    Row count is C(n, k) per protocol. Weighted protocols receive validation
    log-odds weights.
    """
    if not 2 <= k <= len(pool):
        raise ValueError(f"k must be in [2, {len(pool)}]")
    rows = []
    for combo in combinations(pool.model_ids, k):
        children = tuple(Classifier(m) for m in combo)
        for proto in protocols:
            weights = ctx.merger_weights(children) if proto.weighted else None
            graph: Node = Merger(proto, children, weights)
            rows.append(
                EnumRow(
                    strategy=strategy,
                    members=combo,
                    protocol=proto.value,
                    tau=None,
                    graph=graph,
                    objectives=ctx.evaluate(graph),
                )
            )
    return rows


def enumerate_bagging(
    pool: ModelPool,
    ctx: EvalContext,
    k: int = 3,
    protocols: Sequence[MergeProtocol] | None = None,
) -> list[EnumRow]:
    return enumerate_mergers(pool, ctx, k, protocols or UNWEIGHTED_PROTOCOLS, "bagging")


def enumerate_boosting(
    pool: ModelPool,
    ctx: EvalContext,
    k: int = 3,
    protocols: Sequence[MergeProtocol] | None = None,
) -> list[EnumRow]:
    return enumerate_mergers(pool, ctx, k, protocols or WEIGHTED_PROTOCOLS, "boosting")


def enumerate_chains2(
    pool: ModelPool,
    ctx: EvalContext,
    taus: Sequence[float] | None = None,
) -> list[EnumRow]:
    """Two-stage chains for every unordered model pair over a threshold grid.

    The smaller model (fewer parameters, ties by id) always goes first, so a
    pair contributes len(taus) rows: C(n, 2) x 100 with the default grid.
    """
    if len(pool) < 2:
        raise ValueError("chain enumeration needs at least 2 models")
    grid = tuple(taus) if taus is not None else default_tau_grid()
    for tau in grid:
        if not 0.0 <= tau <= 1.0:
            raise ValueError(f"threshold {tau} outside [0, 1]")
    rows = []
    for a, b in combinations(pool.model_ids, 2):
        small, large = sorted((a, b), key=lambda m: (pool.model(m).param_count, m))
        stages = (Classifier(small), Classifier(large))
        for tau in grid:
            graph: Node = Chain(stages, (float(tau),))
            rows.append(
                EnumRow(
                    strategy="chain2",
                    members=(small, large),
                    protocol="",
                    tau=float(tau),
                    graph=graph,
                    objectives=ctx.evaluate(graph),
                )
            )
    return rows


def pareto_filter(rows: Sequence[EnumRow], ctx: EvalContext) -> list[EnumRow]:
    """Exactly the rank-0 front of ``rows`` under the context's objectives."""
    if not rows:
        return []
    keep = non_dominated_indices([ctx.vector(r.objectives) for r in rows])
    return [rows[i] for i in keep]


def write_enumeration_csv(rows: Iterable[EnumRow], path) -> None:
    if isinstance(path, (str, Path)):
        fh = open(path, "w", newline="")
        close = True
    else:
        fh = path
        close = False
    try:
        writer = csv.writer(fh)
        writer.writerow(
            ["strategy", "members", "protocol", "tau", "error", "latency_s", "size_params"]
        )
        for row in rows:
            writer.writerow(
                [
                    row.strategy,
                    "+".join(row.members),
                    row.protocol,
                    "" if row.tau is None else repr(row.tau),
                    repr(row.objectives.error),
                    repr(row.objectives.latency),
                    row.objectives.size,
                ]
            )
    finally:
        if close:
            fh.close()


def read_enumeration_csv(path) -> list[dict]:
    """Rows back as dicts with parsed floats; used when merging into reports."""
    out = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            out.append(
                {
                    "strategy": rec["strategy"],
                    "members": rec["members"],
                    "protocol": rec["protocol"],
                    "tau": float(rec["tau"]) if rec["tau"] else None,
                    "error": float(rec["error"]),
                    "latency_s": float(rec["latency_s"]),
                    "size_params": int(rec["size_params"]),
                }
            )
    return out
