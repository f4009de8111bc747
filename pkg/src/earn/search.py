"""Evolutionary multi-objective search over ensemble graphs.

Standard (mu + lambda) loop with non-dominated sorting: the population starts
as one single-classifier individual per pool model, each generation produces
``offspring_limit`` children by tournament-selected mutation or crossover,
and the ``population_limit`` most fit of parents plus offspring survive
(rank, then crowding). An insertion-ordered Pareto archive collects every
non-dominated evaluation ever seen.

Determinism: one ``random.Random(seed)`` stream drives every decision, and
offspring are generated sequentially before evaluation, so results are
byte-identical for a given seed regardless of the worker thread count.
"""

from __future__ import annotations

import csv
import json
import os
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable

from . import __version__
from .evaluator import EvalContext, ObjectiveVector, refresh_weights
from .graph import (
    Chain,
    Classifier,
    MergeProtocol,
    Merger,
    Node,
    depth,
    node_positions,
    replace_node,
    serialize,
    set_threshold,
    structural_hash,
    to_json_obj,
    trigger_positions,
    validate,
)
from .moo import (
    ParetoArchive,
    crowding_distance,
    fast_nondominated_sort,
    reference_from_points,
)
from .pool import ModelPool

_RETRIES = 10  # resample budget for operators and offspring dedup


@dataclass
class EarnConfig:
    """Search hyperparameters. ``crossover_rate`` is always 1 - mutation_rate."""

    population_limit: int = 500
    offspring_limit: int = 200
    tournament_size: int = 10
    mutation_rate: float = 0.4
    node_mutation_prob: float = 0.6
    iterations: int = 100
    threshold_step: float = 0.1
    initial_threshold: float = 0.5
    max_depth: int = 4
    termination: str = "iterations"  # "iterations" | "hypervolume"
    hv_epsilon: float = 1e-4
    hv_patience: int = 10
    # uniform switching keeps voting/max families reachable from the
    # all-singles initial population (wrap_merge only ever creates average)
    mutate_all_protocols: bool = True
    seed: int = 0

    @property
    def crossover_rate(self) -> float:
        return 1.0 - self.mutation_rate

    def check(self) -> None:
        if self.population_limit < 1:
            raise ValueError("population_limit must be >= 1")
        if self.offspring_limit < 1:
            raise ValueError("offspring_limit must be >= 1")
        if self.tournament_size < 1:
            raise ValueError("tournament_size must be >= 1")
        if not 0.0 <= self.mutation_rate <= 1.0:
            raise ValueError("mutation_rate must be in [0, 1]")
        if not 0.0 <= self.node_mutation_prob <= 1.0:
            raise ValueError("node_mutation_prob must be in [0, 1]")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.threshold_step <= 0.0:
            raise ValueError("threshold_step must be positive")
        if not 0.0 <= self.initial_threshold <= 1.0:
            raise ValueError("initial_threshold must be in [0, 1]")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.termination not in ("iterations", "hypervolume"):
            raise ValueError("termination must be 'iterations' or 'hypervolume'")
        if self.hv_epsilon <= 0.0:
            raise ValueError("hv_epsilon must be positive")
        if self.hv_patience < 1:
            raise ValueError("hv_patience must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "EarnConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**data)
        cfg.check()
        return cfg


@dataclass
class Individual:
    graph: Node
    hash: int
    objectives: ObjectiveVector
    vector: tuple[float, ...]
    rank: int = 0
    crowding: float = 0.0


@dataclass
class GenerationStats:
    generation: int
    offspring: int
    mutations: int
    crossovers: int
    cache_hits: int
    cache_lookups: int
    best_error: float
    archive_size: int
    archive_hypervolume: float


@dataclass
class RunResult:
    population: list[Individual]
    archive: ParetoArchive
    history: list[GenerationStats]
    reference: tuple[float, ...]
    config: EarnConfig
    objectives: tuple[str, ...]
    generations_run: int


# ---------------------------------------------------------------------------
# mutation operators


def _random_model(pool: ModelPool, rng: random.Random) -> Classifier:
    return Classifier(rng.choice(pool.model_ids))


def _op_replace(node: Classifier, pool: ModelPool, rng: random.Random) -> Node:
    others = [m for m in pool.model_ids if m != node.model_id]
    return Classifier(rng.choice(others))


def _op_extend_single(node: Classifier, pool: ModelPool, cfg: EarnConfig, rng: random.Random) -> Node:
    # a lone classifier grows into a two-stage chain
    return Chain((node, _random_model(pool, rng)), (cfg.initial_threshold,))


def _op_wrap_merge(node: Node, pool: ModelPool, rng: random.Random) -> Node:
    # a random protocol keeps every merge family one mutation away
    proto = rng.choice(list(MergeProtocol))
    return Merger(proto, (node, _random_model(pool, rng)))


def _op_extend_chain(chain: Chain, pool: ModelPool, cfg: EarnConfig, rng: random.Random) -> Node:
    return Chain(
        chain.stages + (_random_model(pool, rng),),
        chain.thresholds + (cfg.initial_threshold,),
    )


def _op_add_child(node: Merger, pool: ModelPool, rng: random.Random) -> Node:
    # weights are stale after the append; refresh_weights restores them
    return Merger(node.protocol, node.children + (_random_model(pool, rng),), None)


def _op_switch_protocol(node: Merger, cfg: EarnConfig, rng: random.Random) -> Node:
    if cfg.mutate_all_protocols:
        proto = rng.choice([p for p in MergeProtocol if p is not node.protocol])
    else:
        proto = node.protocol.counterpart
    return Merger(proto, node.children, None)


def _op_bump_trigger(value: float, cfg: EarnConfig, rng: random.Random) -> float:
    delta = cfg.threshold_step if rng.random() < 0.5 else -cfg.threshold_step
    return min(1.0, max(0.0, value + delta))


def _mutation_points(graph: Node) -> list[tuple[tuple, str, str]]:
    """(path, kind, slot) for every mutable point, fixed walk order."""
    points = []
    for path, node, slot in node_positions(graph):
        if isinstance(node, Classifier):
            points.append((path, "classifier", slot))
        elif isinstance(node, Merger):
            points.append((path, "merger", slot))
        elif slot != "stage":  # a whole chain can be folded into a merger
            points.append((path, "chain", slot))
    for path, _value in trigger_positions(graph):
        points.append((path, "trigger", "trigger"))
    return points


def _point_ops(kind: str, slot: str, pool: ModelPool) -> list[str]:
    if kind == "classifier":
        ops = []
        if len(pool) > 1:
            ops.append("replace")
        if slot == "stage":
            ops.append("extend")
        else:  # root or merger child: may grow into a chain or a merger
            ops.extend(["extend", "wrap_merge"])
        return ops
    if kind == "merger":
        return ["add_child", "switch_protocol"]
    if kind == "chain":
        return ["wrap_merge"]
    return ["bump"]


def _apply_op(
    graph: Node,
    point: tuple[tuple, str, str],
    op: str,
    pool: ModelPool,
    cfg: EarnConfig,
    rng: random.Random,
) -> Node:
    path, kind, slot = point
    if kind == "trigger":
        node = graph
        for step, idx in path[:-1]:
            node = node.children[idx] if step == "child" else node.stages[idx]
        current = node.thresholds[path[-1][1]]
        return set_threshold(graph, path, _op_bump_trigger(current, cfg, rng))
    target = graph
    for step, idx in path:
        target = target.children[idx] if step == "child" else target.stages[idx]
    if op == "replace":
        new = _op_replace(target, pool, rng)
    elif op == "extend":
        if slot == "stage":
            # append a trigger/classifier pair to the enclosing chain
            chain_path = path[:-1]
            chain = graph
            for step, idx in chain_path:
                chain = chain.children[idx] if step == "child" else chain.stages[idx]
            return replace_node(graph, chain_path, _op_extend_chain(chain, pool, cfg, rng))
        new = _op_extend_single(target, pool, cfg, rng)
    elif op == "wrap_merge":
        new = _op_wrap_merge(target, pool, rng)
    elif op == "add_child":
        new = _op_add_child(target, pool, rng)
    elif op == "switch_protocol":
        new = _op_switch_protocol(target, cfg, rng)
    else:  # pragma: no cover
        raise ValueError(f"unknown op {op!r}")
    return replace_node(graph, path, new)


def mutate_graph(
    graph: Node,
    pool: ModelPool,
    cfg: EarnConfig,
    ctx: EvalContext,
    rng: random.Random,
) -> Node:
    """Walk all mutable points, mutating each with probability
    ``node_mutation_prob``; retry the walk when nothing changes or the result
    is invalid (e.g. a depth-violating extension). After the retry budget,
    force a single random mutation; if even that cannot produce a fresh valid
    graph, return the input unchanged.
    """
    original_hash = structural_hash(graph)
    for _attempt in range(_RETRIES):
        points = _mutation_points(graph)
        marked = []
        for point in points:
            if rng.random() < cfg.node_mutation_prob:
                ops = _point_ops(point[1], point[2], pool)
                if ops:
                    marked.append((point, rng.choice(ops)))
        if not marked:
            continue
        # deepest-first application keeps shallower pending paths valid
        marked.sort(key=lambda m: (len(m[0][0]), m[0][0]), reverse=True)
        candidate = graph
        for point, op in marked:
            candidate = _apply_op(candidate, point, op, pool, cfg, rng)
        candidate = refresh_weights(candidate, ctx)
        if validate(candidate, pool, cfg.max_depth):
            continue
        if structural_hash(candidate) != original_hash:
            return candidate
    # forced fallback: one random mutation, first one that sticks
    points = _mutation_points(graph)
    rng.shuffle(points)
    for point in points:
        ops = _point_ops(point[1], point[2], pool)
        rng.shuffle(ops)
        for op in ops:
            candidate = refresh_weights(_apply_op(graph, point, op, pool, cfg, rng), ctx)
            if validate(candidate, pool, cfg.max_depth):
                continue
            if structural_hash(candidate) != original_hash:
                return candidate
    return graph


def crossover_graphs(
    g1: Node,
    g2: Node,
    pool: ModelPool,
    cfg: EarnConfig,
    ctx: EvalContext,
    rng: random.Random,
) -> tuple[Node, Node]:
    """Single-point subtree swap between two parents.

    Chain stage slots accept only classifiers; root and merger-child slots
    accept any node. Swaps that break the depth limit are resampled; after
    the retry budget the parents are returned unchanged.
    """
    pos1 = node_positions(g1)
    pos2 = node_positions(g2)
    for _attempt in range(_RETRIES):
        path1, node1, slot1 = pos1[rng.randrange(len(pos1))]
        path2, node2, slot2 = pos2[rng.randrange(len(pos2))]
        if slot1 == "stage" and not isinstance(node2, Classifier):
            continue
        if slot2 == "stage" and not isinstance(node1, Classifier):
            continue
        c1 = replace_node(g1, path1, node2)
        c2 = replace_node(g2, path2, node1)
        if depth(c1) > cfg.max_depth or depth(c2) > cfg.max_depth:
            continue
        return refresh_weights(c1, ctx), refresh_weights(c2, ctx)
    return g1, g2


# ---------------------------------------------------------------------------
# fitness and selection


def assign_fitness(population: list[Individual]) -> None:
    """Non-dominated rank plus per-front crowding, in place."""
    if not population:
        return
    fronts = fast_nondominated_sort([ind.vector for ind in population])
    for rank, front in enumerate(fronts):
        dists = crowding_distance([population[i].vector for i in front])
        for i, d in zip(front, dists):
            population[i].rank = rank
            population[i].crowding = d


def tournament_select(
    population: list[Individual], k: int, rng: random.Random
) -> Individual:
    """Best of k uniform draws (with replacement): lowest rank, then highest
    crowding. Exact ties keep the earliest draw; a value-based tie-break
    would collapse every tournament onto one individual whenever a front
    shares its crowding (e.g. the all-boundary initial population).
    """
    best = None
    for _ in range(k):
        ind = population[rng.randrange(len(population))]
        if best is None or (ind.rank, -ind.crowding) < (best.rank, -best.crowding):
            best = ind
    return best


def _survivors(combined: list[Individual], limit: int) -> list[Individual]:
    """Rank-and-crowding truncation over the unique genomes of P u O.

    Duplicate hashes are dropped before ranking: copies carry no information,
    and since duplicates share crowding, copies of boundary points would all
    inherit infinite crowding and flood the next generation. The population
    may therefore sit below ``limit`` once a small search space is exhausted.
    """
    seen: set[int] = set()
    unique: list[Individual] = []
    for ind in combined:
        if ind.hash not in seen:
            seen.add(ind.hash)
            unique.append(ind)
    assign_fitness(unique)
    order = sorted(range(len(unique)), key=lambda i: (unique[i].rank, -unique[i].crowding))
    return [unique[i] for i in order[:limit]]


# ---------------------------------------------------------------------------
# run loop


def initialize(pool: ModelPool, ctx: EvalContext) -> list[Individual]:
    """One single-classifier individual per pool model, evaluated."""
    population = []
    for model_id in pool.model_ids:
        graph: Node = Classifier(model_id)
        ov = ctx.evaluate(graph)
        population.append(
            Individual(
                graph=graph,
                hash=structural_hash(graph),
                objectives=ov,
                vector=ctx.vector(ov),
            )
        )
    assign_fitness(population)
    return population


def _make_offspring(
    population: list[Individual],
    pool: ModelPool,
    cfg: EarnConfig,
    ctx: EvalContext,
    rng: random.Random,
) -> tuple[list[tuple[Node, int]], int, int]:
    """Sequentially generate exactly ``offspring_limit`` genomes.

    Duplicates (by structural hash, against parents and siblings) are
    regenerated up to the retry budget, then accepted as-is.
    """
    specs: list[tuple[Node, int]] = []
    seen = {ind.hash for ind in population}
    mutations = 0
    crossovers = 0
    limit = cfg.offspring_limit

    def fresh(h: int) -> bool:
        # a genome already evaluated in any generation adds nothing new
        return h not in seen and ctx.cached(h) is None

    while len(specs) < limit:
        if rng.random() < cfg.mutation_rate:
            child = None
            child_hash = 0
            for _ in range(_RETRIES):
                parent = tournament_select(population, cfg.tournament_size, rng)
                child = mutate_graph(parent.graph, pool, cfg, ctx, rng)
                child_hash = structural_hash(child)
                if fresh(child_hash):
                    break
            specs.append((child, child_hash))
            seen.add(child_hash)
            mutations += 1
        else:
            c1 = c2 = None
            h1 = h2 = 0
            for _ in range(_RETRIES):
                p1 = tournament_select(population, cfg.tournament_size, rng)
                p2 = tournament_select(population, cfg.tournament_size, rng)
                c1, c2 = crossover_graphs(p1.graph, p2.graph, pool, cfg, ctx, rng)
                h1, h2 = structural_hash(c1), structural_hash(c2)
                if fresh(h1) and fresh(h2) and h1 != h2:
                    break
            specs.append((c1, h1))
            seen.add(h1)
            if len(specs) < limit:  # a crossover pair may overshoot by one
                specs.append((c2, h2))
                seen.add(h2)
            crossovers += 1
    return specs, mutations, crossovers


def run(
    pool: ModelPool,
    cfg: EarnConfig,
    ctx: EvalContext | None = None,
    jobs: int = 1,
    progress: Callable[[GenerationStats], None] | None = None,
) -> RunResult:
    """Execute the search and return population, archive, and history.

    The hypervolume reference point is frozen from the initial population
    (componentwise worst times 1.1). Termination is either a fixed iteration
    count (default; evaluates exactly iterations x offspring_limit offspring)
    or hypervolume stagnation with the iteration count as a hard cap.
    """
    cfg.check()
    if ctx is None:
        ctx = EvalContext(pool)
    rng = random.Random(cfg.seed)

    population = initialize(pool, ctx)
    archive = ParetoArchive()
    best_error = min(ind.objectives.error for ind in population)
    for ind in population:
        archive.insert(ind.hash, ind.vector, payload=ind)
    reference = reference_from_points([ind.vector for ind in population])

    history = [
        GenerationStats(
            generation=0,
            offspring=0,
            mutations=0,
            crossovers=0,
            cache_hits=0,
            cache_lookups=0,
            best_error=best_error,
            archive_size=len(archive),
            archive_hypervolume=archive.hypervolume(reference),
        )
    ]
    if progress:
        progress(history[0])

    executor = ThreadPoolExecutor(max_workers=jobs) if jobs > 1 else None
    stagnant = 0
    generations_run = 0
    try:
        for gen in range(1, cfg.iterations + 1):
            specs, mutations, crossovers = _make_offspring(population, pool, cfg, ctx, rng)

            unique: dict[int, Node] = {}
            for graph, h in specs:
                unique.setdefault(h, graph)
            missing = [(h, g) for h, g in unique.items() if ctx.cached(h) is None]
            lookups = len(specs)
            hits = lookups - len(missing)
            if executor is not None and len(missing) > 1:
                list(executor.map(lambda item: ctx.evaluate(item[1]), missing))
            else:
                for _h, graph in missing:
                    ctx.evaluate(graph)

            offspring = []
            for graph, h in specs:
                ov = ctx.cached(h)
                ind = Individual(graph=graph, hash=h, objectives=ov, vector=ctx.vector(ov))
                offspring.append(ind)
                if ov.error < best_error:
                    best_error = ov.error
            for ind in offspring:
                archive.insert(ind.hash, ind.vector, payload=ind)

            population = _survivors(population + offspring, cfg.population_limit)
            hv = archive.hypervolume(reference)
            stats = GenerationStats(
                generation=gen,
                offspring=len(specs),
                mutations=mutations,
                crossovers=crossovers,
                cache_hits=hits,
                cache_lookups=lookups,
                best_error=best_error,
                archive_size=len(archive),
                archive_hypervolume=hv,
            )
            history.append(stats)
            generations_run = gen
            if progress:
                progress(stats)

            if cfg.termination == "hypervolume":
                prev = history[-2].archive_hypervolume
                if prev > 0.0:
                    improvement = (hv - prev) / prev
                elif hv > 0.0:
                    improvement = float("inf")
                else:
                    improvement = 0.0
                stagnant = stagnant + 1 if improvement < cfg.hv_epsilon else 0
                if stagnant >= cfg.hv_patience:
                    break
    finally:
        if executor is not None:
            executor.shutdown()

    return RunResult(
        population=population,
        archive=archive,
        history=history,
        reference=reference,
        config=replace(cfg),
        objectives=ctx.objectives,
        generations_run=generations_run,
    )


# ---------------------------------------------------------------------------
# run artifacts


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _entry_objectives(ind: Individual) -> dict:
    return {
        "error": ind.objectives.error,
        "latency_s": ind.objectives.latency,
        "size_params": ind.objectives.size,
    }


def _sorted_archive(result: RunResult) -> list[Individual]:
    entries = [e.payload for e in result.archive.entries]
    entries.sort(
        key=lambda ind: (ind.objectives.error, ind.objectives.latency, ind.objectives.size,
                         serialize(ind.graph))
    )
    return entries


def write_archive_json(result: RunResult, path: str | Path) -> None:
    entries = [
        {
            "hash": ind.hash,
            "objectives": _entry_objectives(ind),
            "vector": list(ind.vector),
            "graph": to_json_obj(ind.graph),
        }
        for ind in _sorted_archive(result)
    ]
    _atomic_write_text(Path(path), json.dumps(entries, indent=2) + "\n")


def write_archive_csv(result: RunResult, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["error", "latency_s", "size_params", "graph_json"])
        for ind in _sorted_archive(result):
            writer.writerow(
                [repr(ind.objectives.error), repr(ind.objectives.latency),
                 ind.objectives.size, serialize(ind.graph)]
            )


def write_history_csv(result: RunResult, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["generation", "offspring", "mutations", "crossovers", "cache_hits",
             "cache_lookups", "best_error", "archive_size", "archive_hypervolume"]
        )
        for row in result.history:
            writer.writerow(
                [row.generation, row.offspring, row.mutations, row.crossovers,
                 row.cache_hits, row.cache_lookups, repr(row.best_error),
                 row.archive_size, repr(row.archive_hypervolume)]
            )


def write_population_json(result: RunResult, path: str | Path) -> None:
    entries = []
    for ind in result.population:
        entries.append(
            {
                "hash": ind.hash,
                "rank": ind.rank,
                "crowding": None if ind.crowding == float("inf") else ind.crowding,
                "objectives": _entry_objectives(ind),
                "graph": to_json_obj(ind.graph),
            }
        )
    _atomic_write_text(Path(path), json.dumps(entries, indent=2) + "\n")


def write_run_manifest(
    path: str | Path,
    *,
    pool_path: str | Path,
    out_dir: str | Path,
    cfg: EarnConfig,
    ctx: EvalContext,
    jobs: int,
) -> None:
    """Reproducibility record, written atomically before the run starts."""
    payload = {
        "tool": "earn",
        "version": __version__,
        "created_utc": datetime.now(timezone.utc).isoformat(),
        "pool": str(Path(pool_path).resolve()),
        "output_dir": str(Path(out_dir).resolve()),
        "jobs": jobs,
        "context": {
            "split": ctx.split,
            "platform": ctx.platform,
            "objectives": list(ctx.objectives),
            "size_per_node": ctx.size_per_node,
        },
        "config": cfg.to_dict(),
    }
    _atomic_write_text(Path(path), json.dumps(payload, indent=2) + "\n")


def write_run_outputs(result: RunResult, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_archive_json(result, out / "archive.json")
    write_archive_csv(result, out / "archive.csv")
    write_history_csv(result, out / "history.csv")
    write_population_json(result, out / "population.json")
