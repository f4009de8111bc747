"""Ensemble genomes: rooted trees of classifiers, early-exit chains, mergers.

A graph is just its root node; the JSON form mirrors the node structure:

    {"kind": "classifier", "model": "m00"}
    {"kind": "chain", "stages": [...], "thresholds": [0.6]}
    {"kind": "merger", "protocol": "average", "children": [...]}

Weighted merger protocols carry an optional ``weights`` list aligned with
``children``. Structural identity is order-insensitive for merger children
and order-sensitive for chain stages; thresholds and weights are compared
after rounding to 1e-6.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterator, Union

from .errors import GraphValidationError
from .pool import ModelPool

DEFAULT_MAX_DEPTH = 4
_QUANTUM = 1e-6


class MergeProtocol(str, Enum):
    AVERAGE = "average"
    VOTING = "voting"
    MAX = "max"
    WEIGHTED_AVERAGE = "weighted_average"
    WEIGHTED_VOTING = "weighted_voting"
    WEIGHTED_MAX = "weighted_max"

    @property
    def weighted(self) -> bool:
        return self.value.startswith("weighted_")

    @property
    def counterpart(self) -> "MergeProtocol":
        """The weighted twin of an unweighted protocol and vice versa."""
        if self.weighted:
            return MergeProtocol(self.value.removeprefix("weighted_"))
        return MergeProtocol(f"weighted_{self.value}")


@dataclass(frozen=True)
class Classifier:
    model_id: str


@dataclass(frozen=True)
class Chain:
    """Early-exit cascade: stage i answers when its max activation exceeds tau_i.

    ``thresholds`` has one entry per stage except the last; a sample is
    forwarded from stage i to stage i+1 iff tau_i >= max(h_i(x)), so tau = 0
    always answers at the stage itself and tau = 1 always forwards.
    """

    stages: tuple[Classifier, ...]
    thresholds: tuple[float, ...]


@dataclass(frozen=True)
class Merger:
    protocol: MergeProtocol
    children: tuple["Node", ...]
    weights: tuple[float, ...] | None = None


Node = Union[Classifier, Chain, Merger]
# A graph is its root node.
EnsembleGraph = Node

# A path addresses a slot in the tree as steps from the root:
#   ("child", i)   i-th child of a merger
#   ("stage", i)   i-th stage of a chain
#   ("trigger", i) i-th threshold of a chain
Path = tuple[tuple[str, int], ...]


def format_path(path: Path) -> str:
    out = "root"
    for step, idx in path:
        if step == "child":
            out += f".children[{idx}]"
        elif step == "stage":
            out += f".stages[{idx}]"
        else:
            out += f".thresholds[{idx}]"
    return out


def depth(node: Node) -> int:
    if isinstance(node, Classifier):
        return 1
    if isinstance(node, Chain):
        return 1 + max(depth(s) for s in node.stages)
    return 1 + max(depth(c) for c in node.children)


def iter_nodes(node: Node) -> Iterator[Node]:
    """Pre-order walk over all nodes, chain stages included."""
    yield node
    if isinstance(node, Chain):
        for s in node.stages:
            yield from iter_nodes(s)
    elif isinstance(node, Merger):
        for c in node.children:
            yield from iter_nodes(c)


def model_ids(node: Node) -> list[str]:
    """Model ids of every classifier node, in traversal order (with repeats)."""
    return [n.model_id for n in iter_nodes(node) if isinstance(n, Classifier)]


def node_positions(node: Node, _path: Path = (), _slot: str = "root") -> list[tuple[Path, Node, str]]:
    """All node slots: (path, node, slot) with slot in root|child|stage.

    Stage slots accept only Classifier nodes; root and child slots accept any
    node. Used for mutation targeting and crossover point selection.
    """
    out = [(_path, node, _slot)]
    if isinstance(node, Chain):
        for i, s in enumerate(node.stages):
            out.extend(node_positions(s, _path + (("stage", i),), "stage"))
    elif isinstance(node, Merger):
        for i, c in enumerate(node.children):
            out.extend(node_positions(c, _path + (("child", i),), "child"))
    return out


def trigger_positions(node: Node, _path: Path = ()) -> list[tuple[Path, float]]:
    """All chain thresholds: (path ending in a trigger step, current value)."""
    out: list[tuple[Path, float]] = []
    if isinstance(node, Chain):
        for i, t in enumerate(node.thresholds):
            out.append((_path + (("trigger", i),), t))
        for i, s in enumerate(node.stages):
            out.extend(trigger_positions(s, _path + (("stage", i),)))
    elif isinstance(node, Merger):
        for i, c in enumerate(node.children):
            out.extend(trigger_positions(c, _path + (("child", i),)))
    return out


def get_node(root: Node, path: Path) -> Node:
    node = root
    for step, idx in path:
        if step == "child":
            node = node.children[idx]
        elif step == "stage":
            node = node.stages[idx]
        else:
            raise ValueError("path addresses a trigger, not a node")
    return node


def _rebuild(node: Node, path: Path, leaf_fn: Callable) -> Node:
    if not path:
        return leaf_fn(node)
    (step, idx), rest = path[0], path[1:]
    if step == "child":
        assert isinstance(node, Merger)
        children = list(node.children)
        children[idx] = _rebuild(children[idx], rest, leaf_fn)
        return Merger(node.protocol, tuple(children), node.weights)
    if step == "stage":
        assert isinstance(node, Chain)
        stages = list(node.stages)
        stages[idx] = _rebuild(stages[idx], rest, leaf_fn)
        return Chain(tuple(stages), node.thresholds)
    assert step == "trigger" and isinstance(node, Chain) and not rest
    thresholds = list(node.thresholds)
    thresholds[idx] = leaf_fn(thresholds[idx])
    return Chain(node.stages, tuple(thresholds))


def replace_node(root: Node, path: Path, new_node: Node) -> Node:
    """Return a copy of ``root`` with the node at ``path`` replaced."""
    return _rebuild(root, path, lambda _old: new_node)


def set_threshold(root: Node, path: Path, value: float) -> Node:
    """Return a copy of ``root`` with the trigger at ``path`` set to ``value``."""
    if not path or path[-1][0] != "trigger":
        raise ValueError("path must end in a trigger step")
    return _rebuild(root, path, lambda _old: value)


# ---------------------------------------------------------------------------
# validation


def validate(
    graph: Node, pool: ModelPool | None = None, max_depth: int = DEFAULT_MAX_DEPTH
) -> list[str]:
    """Collect structural violations; empty list means the graph is valid."""
    violations: list[str] = []

    def visit(node: Node, path: Path) -> None:
        where = format_path(path)
        if isinstance(node, Classifier):
            if not isinstance(node.model_id, str) or not node.model_id:
                violations.append(f"{where}: model id must be a non-empty string")
            elif pool is not None and node.model_id not in pool:
                violations.append(f"{where}: unknown model {node.model_id!r}")
        elif isinstance(node, Chain):
            if len(node.stages) < 2:
                violations.append(f"{where}: chain needs at least 2 stages")
            if len(node.thresholds) != max(len(node.stages) - 1, 0):
                violations.append(
                    f"{where}: {len(node.thresholds)} thresholds for {len(node.stages)} stages"
                )
            for i, t in enumerate(node.thresholds):
                if not (isinstance(t, (int, float)) and 0.0 <= float(t) <= 1.0):
                    violations.append(f"{format_path(path + (('trigger', i),))}: threshold {t!r} outside [0, 1]")
            for i, s in enumerate(node.stages):
                if not isinstance(s, Classifier):
                    violations.append(
                        f"{format_path(path + (('stage', i),))}: chain stages must be classifiers"
                    )
                else:
                    visit(s, path + (("stage", i),))
        elif isinstance(node, Merger):
            if len(node.children) < 2:
                violations.append(f"{where}: merger needs at least 2 children")
            if not isinstance(node.protocol, MergeProtocol):
                violations.append(f"{where}: unknown merge protocol {node.protocol!r}")
            else:
                if node.weights is not None:
                    if not node.protocol.weighted:
                        violations.append(
                            f"{where}: protocol {node.protocol.value} does not take weights"
                        )
                    elif len(node.weights) != len(node.children):
                        violations.append(
                            f"{where}: {len(node.weights)} weights for {len(node.children)} children"
                        )
                elif node.protocol.weighted:
                    violations.append(
                        f"{where}: protocol {node.protocol.value} requires weights"
                    )
            for i, c in enumerate(node.children):
                visit(c, path + (("child", i),))
        else:
            violations.append(f"{where}: unknown node type {type(node).__name__}")

    visit(graph, ())
    d = depth(graph)
    if d > max_depth:
        violations.append(f"root: depth {d} exceeds limit {max_depth}")
    return violations


def ensure_valid(
    graph: Node, pool: ModelPool | None = None, max_depth: int = DEFAULT_MAX_DEPTH
) -> None:
    violations = validate(graph, pool, max_depth)
    if violations:
        raise GraphValidationError(violations)


# ---------------------------------------------------------------------------
# structural hashing


def _quantize(x: float) -> int:
    return round(float(x) / _QUANTUM)


def _canonical_bytes(node: Node) -> bytes:
    if isinstance(node, Classifier):
        ident = node.model_id.encode("utf-8")
        return b"C" + struct.pack("<I", len(ident)) + ident
    if isinstance(node, Chain):
        parts = [b"H", struct.pack("<I", len(node.stages))]
        for s in node.stages:
            sb = _canonical_bytes(s)
            parts.append(struct.pack("<I", len(sb)))
            parts.append(sb)
        parts.append(struct.pack("<I", len(node.thresholds)))
        for t in node.thresholds:
            parts.append(struct.pack("<q", _quantize(t)))
        return b"".join(parts)
    proto = node.protocol.value.encode("utf-8")
    entries: list[bytes] = []
    for i, c in enumerate(node.children):
        cb = _canonical_bytes(c)
        w = struct.pack("<q", _quantize(node.weights[i])) if node.weights is not None else b""
        entries.append(struct.pack("<I", len(cb)) + cb + w)
    entries.sort()  # merger children are an unordered multiset
    return (
        b"M"
        + struct.pack("<I", len(proto))
        + proto
        + struct.pack("<I", len(entries))
        + b"".join(entries)
    )


def structural_hash(graph: Node) -> int:
    """Order-insensitive 64-bit digest of the graph structure."""
    digest = hashlib.blake2b(_canonical_bytes(graph), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def merger_eval_order(merger: Merger) -> tuple[int, ...]:
    """Child indices in canonical order; evaluation follows this order so
    permuted children yield bit-identical merged outputs."""
    keys = []
    for i, c in enumerate(merger.children):
        w = _quantize(merger.weights[i]) if merger.weights is not None else 0
        keys.append((_canonical_bytes(c), w, i))
    keys.sort()
    return tuple(k[2] for k in keys)


# ---------------------------------------------------------------------------
# serialization


def to_json_obj(node: Node) -> dict:
    if isinstance(node, Classifier):
        return {"kind": "classifier", "model": node.model_id}
    if isinstance(node, Chain):
        return {
            "kind": "chain",
            "stages": [to_json_obj(s) for s in node.stages],
            "thresholds": [float(t) for t in node.thresholds],
        }
    if isinstance(node, Merger):
        obj: dict = {
            "kind": "merger",
            "protocol": node.protocol.value,
            "children": [to_json_obj(c) for c in node.children],
        }
        if node.weights is not None:
            obj["weights"] = [float(w) for w in node.weights]
        return obj
    raise TypeError(f"not a graph node: {type(node).__name__}")


def serialize(graph: Node) -> str:
    return json.dumps(to_json_obj(graph), separators=(",", ":"))


def _bad(msg: str) -> GraphValidationError:
    return GraphValidationError([msg])


def node_from_json_obj(obj: object) -> Node:
    if not isinstance(obj, dict):
        raise _bad(f"node must be a JSON object, got {type(obj).__name__}")
    kind = obj.get("kind")
    if kind == "classifier":
        model = obj.get("model")
        if not isinstance(model, str):
            raise _bad("classifier node requires a string 'model'")
        return Classifier(model)
    if kind == "chain":
        stages = obj.get("stages")
        thresholds = obj.get("thresholds")
        if not isinstance(stages, list) or not isinstance(thresholds, list):
            raise _bad("chain node requires 'stages' and 'thresholds' lists")
        try:
            taus = tuple(float(t) for t in thresholds)
        except (TypeError, ValueError):
            raise _bad("chain thresholds must be numbers") from None
        return Chain(tuple(node_from_json_obj(s) for s in stages), taus)
    if kind == "merger":
        children = obj.get("children")
        proto = obj.get("protocol")
        if not isinstance(children, list):
            raise _bad("merger node requires a 'children' list")
        try:
            protocol = MergeProtocol(proto)
        except ValueError:
            raise _bad(f"unknown merge protocol {proto!r}") from None
        weights = None
        if "weights" in obj:
            try:
                weights = tuple(float(w) for w in obj["weights"])
            except (TypeError, ValueError):
                raise _bad("merger weights must be numbers") from None
        return Merger(protocol, tuple(node_from_json_obj(c) for c in children), weights)
    raise _bad(f"unknown node kind {kind!r}")


def deserialize(
    text: str, pool: ModelPool | None = None, max_depth: int = DEFAULT_MAX_DEPTH
) -> Node:
    """Parse graph JSON, then validate structure (and model ids when a pool
    is supplied). Raises GraphValidationError on any problem."""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise _bad(f"invalid JSON: {exc}") from exc
    graph = node_from_json_obj(obj)
    ensure_valid(graph, pool, max_depth)
    return graph
