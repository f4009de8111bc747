"""Model pools: cached per-model prediction matrices plus metadata.

A pool is a JSON manifest describing N pretrained classifiers over one
dataset. Each model contributes a probability matrix and a label vector for
two splits (validation, test), stored in small binary files:

prediction file (.eprd):  magic ``EPRD`` | u32 version=1 | u64 n_samples |
                          u32 n_classes | float32 row-major probabilities
label file      (.elbl):  magic ``ELBL`` | u32 version=1 | u64 n_samples |
                          u32 labels

All integers are little-endian. Loading is bit-exact: probabilities are kept
as the float32 values read from disk, never renormalized or reordered.
"""

from __future__ import annotations

import json
import math
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import PoolFormatError

PREDICTION_MAGIC = b"EPRD"
LABEL_MAGIC = b"ELBL"
FORMAT_VERSION = 1
ROW_SUM_TOLERANCE = 1e-4

SPLITS = ("validation", "test")

_PRED_HEADER = struct.Struct("<4sIQI")
_LABEL_HEADER = struct.Struct("<4sIQ")


@dataclass(eq=False)
class PredictionSet:
    """One model's cached outputs on one split."""

    probs: np.ndarray  # float32, shape (n_samples, n_classes)
    labels: np.ndarray  # uint32, shape (n_samples,)

    @property
    def n_samples(self) -> int:
        return int(self.probs.shape[0])

    @property
    def n_classes(self) -> int:
        return int(self.probs.shape[1])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PredictionSet):
            return NotImplemented
        return (
            self.probs.shape == other.probs.shape
            and np.array_equal(self.probs, other.probs)
            and np.array_equal(self.labels, other.labels)
        )

    def __repr__(self) -> str:
        return f"PredictionSet(n_samples={self.n_samples}, n_classes={self.n_classes})"


@dataclass(eq=False)
class ModelRecord:
    """Metadata and cached predictions for one pool member."""

    model_id: str
    param_count: int
    latencies: dict[str, float]  # platform -> seconds per 128-sample batch
    validation: PredictionSet
    test: PredictionSet

    def split(self, name: str) -> PredictionSet:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}; expected one of {SPLITS}")
        return self.validation if name == "validation" else self.test

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ModelRecord):
            return NotImplemented
        return (
            self.model_id == other.model_id
            and self.param_count == other.param_count
            and self.latencies == other.latencies
            and self.validation == other.validation
            and self.test == other.test
        )


@dataclass(eq=False)
class ModelPool:
    dataset_name: str
    n_classes: int
    models: tuple[ModelRecord, ...]
    platforms: tuple[str, ...]
    _by_id: dict[str, ModelRecord] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self._by_id = {m.model_id: m for m in self.models}

    @property
    def model_ids(self) -> tuple[str, ...]:
        return tuple(m.model_id for m in self.models)

    def model(self, model_id: str) -> ModelRecord:
        try:
            return self._by_id[model_id]
        except KeyError:
            raise KeyError(f"model {model_id!r} not in pool") from None

    def __contains__(self, model_id: str) -> bool:
        return model_id in self._by_id

    def __len__(self) -> int:
        return len(self.models)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ModelPool):
            return NotImplemented
        return (
            self.dataset_name == other.dataset_name
            and self.n_classes == other.n_classes
            and self.platforms == other.platforms
            and self.models == other.models
        )


# ---------------------------------------------------------------------------
# binary IO


def write_prediction_file(path: str | Path, probs: np.ndarray) -> None:
    arr = np.ascontiguousarray(probs, dtype="<f4")
    if arr.ndim != 2:
        raise ValueError("probability array must be 2-D")
    with open(path, "wb") as fh:
        fh.write(_PRED_HEADER.pack(PREDICTION_MAGIC, FORMAT_VERSION, arr.shape[0], arr.shape[1]))
        fh.write(arr.tobytes())


def read_prediction_file(path: str | Path) -> np.ndarray:
    path = Path(path)
    with open(path, "rb") as fh:
        header = fh.read(_PRED_HEADER.size)
        if len(header) != _PRED_HEADER.size:
            raise PoolFormatError(f"{path}: truncated prediction header")
        magic, version, n_samples, n_classes = _PRED_HEADER.unpack(header)
        if magic != PREDICTION_MAGIC:
            raise PoolFormatError(f"{path}: bad magic {magic!r}, expected {PREDICTION_MAGIC!r}")
        if version != FORMAT_VERSION:
            raise PoolFormatError(f"{path}: unsupported version {version}")
        payload = fh.read()
    expected = n_samples * n_classes * 4
    if len(payload) != expected:
        raise PoolFormatError(
            f"{path}: payload is {len(payload)} bytes, header implies {expected}"
        )
    return np.frombuffer(payload, dtype="<f4").reshape(n_samples, n_classes)


def write_label_file(path: str | Path, labels: np.ndarray) -> None:
    arr = np.ascontiguousarray(labels, dtype="<u4")
    if arr.ndim != 1:
        raise ValueError("label array must be 1-D")
    with open(path, "wb") as fh:
        fh.write(_LABEL_HEADER.pack(LABEL_MAGIC, FORMAT_VERSION, arr.shape[0]))
        fh.write(arr.tobytes())


def read_label_file(path: str | Path) -> np.ndarray:
    path = Path(path)
    with open(path, "rb") as fh:
        header = fh.read(_LABEL_HEADER.size)
        if len(header) != _LABEL_HEADER.size:
            raise PoolFormatError(f"{path}: truncated label header")
        magic, version, n_samples = _LABEL_HEADER.unpack(header)
        if magic != LABEL_MAGIC:
            raise PoolFormatError(f"{path}: bad magic {magic!r}, expected {LABEL_MAGIC!r}")
        if version != FORMAT_VERSION:
            raise PoolFormatError(f"{path}: unsupported version {version}")
        payload = fh.read()
    if len(payload) != n_samples * 4:
        raise PoolFormatError(
            f"{path}: payload is {len(payload)} bytes, header implies {n_samples * 4}"
        )
    return np.frombuffer(payload, dtype="<u4")


# ---------------------------------------------------------------------------
# consistency checks


def check_prediction_set(ps: PredictionSet, n_classes: int, where: str) -> None:
    """Raise PoolFormatError unless ``ps`` is internally consistent.

    Checks dimensions against the manifest class count, probability range,
    row-sum tolerance, and label range. Row-sum violations are reported with
    the first offending row index.
    """
    if ps.probs.ndim != 2:
        raise PoolFormatError(f"{where}: probability array must be 2-D")
    if ps.n_classes != n_classes:
        raise PoolFormatError(
            f"{where}: file has {ps.n_classes} classes, manifest says {n_classes}"
        )
    if ps.labels.shape != (ps.n_samples,):
        raise PoolFormatError(
            f"{where}: {ps.labels.shape[0]} labels for {ps.n_samples} prediction rows"
        )
    if ps.n_samples == 0:
        raise PoolFormatError(f"{where}: empty split")
    probs64 = ps.probs.astype(np.float64)
    if np.any(probs64 < 0.0) or np.any(probs64 > 1.0):
        row = int(np.argwhere((probs64 < 0.0) | (probs64 > 1.0))[0][0])
        raise PoolFormatError(f"{where}: probability outside [0, 1] at row {row}")
    sums = probs64.sum(axis=1)
    bad = np.abs(sums - 1.0) > ROW_SUM_TOLERANCE
    if np.any(bad):
        row = int(np.flatnonzero(bad)[0])
        raise PoolFormatError(
            f"{where}: row {row} sums to {sums[row]:.6f}, outside 1 ± {ROW_SUM_TOLERANCE}"
        )
    if np.any(ps.labels >= n_classes):
        row = int(np.flatnonzero(ps.labels >= n_classes)[0])
        raise PoolFormatError(
            f"{where}: label {int(ps.labels[row])} at row {row} exceeds n_classes-1"
        )


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise PoolFormatError(message)


# ---------------------------------------------------------------------------
# manifest load / save


def load_pool(manifest_path: str | Path) -> ModelPool:
    """Load and fully validate a pool from its JSON manifest.

    Every model must cover every platform with a positive latency, splits must
    agree on sample counts and label vectors across models, and ids must be
    unique. Paths inside the manifest are resolved relative to it.
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise PoolFormatError(f"pool manifest not found: {manifest_path}")
    try:
        data = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise PoolFormatError(f"{manifest_path}: invalid JSON ({exc})") from exc

    for key in ("dataset", "n_classes", "platforms", "models"):
        _require(key in data, f"{manifest_path}: manifest missing key {key!r}")
    n_classes = data["n_classes"]
    _require(isinstance(n_classes, int) and n_classes >= 2, f"{manifest_path}: n_classes must be an integer >= 2")
    platforms = tuple(data["platforms"])
    _require(len(platforms) >= 1, f"{manifest_path}: at least one platform is required")
    _require(len(set(platforms)) == len(platforms), f"{manifest_path}: duplicate platform names")
    entries = data["models"]
    _require(isinstance(entries, list) and len(entries) >= 1, f"{manifest_path}: pool must list at least one model")

    base = manifest_path.parent
    models: list[ModelRecord] = []
    seen_ids: set[str] = set()
    shared_labels: dict[str, np.ndarray] = {}
    shared_counts: dict[str, int] = {}

    for entry in entries:
        for key in ("id", "params", "latency", "validation", "test"):
            _require(key in entry, f"{manifest_path}: model entry missing key {key!r}")
        model_id = entry["id"]
        _require(isinstance(model_id, str) and model_id != "", f"{manifest_path}: model id must be a non-empty string")
        _require(model_id not in seen_ids, f"{manifest_path}: duplicate model id {model_id!r}")
        seen_ids.add(model_id)

        params = entry["params"]
        _require(
            isinstance(params, int) and params > 0,
            f"model {model_id!r}: params must be a positive integer",
        )
        latency = entry["latency"]
        lat_map: dict[str, float] = {}
        for platform in platforms:
            _require(
                platform in latency,
                f"model {model_id!r}: missing latency for platform {platform!r}",
            )
            value = float(latency[platform])
            _require(
                math.isfinite(value) and value > 0.0,
                f"model {model_id!r}: latency for {platform!r} must be finite and positive",
            )
            lat_map[platform] = value

        splits: dict[str, PredictionSet] = {}
        for split in SPLITS:
            ref = entry[split]
            for key in ("probs_file", "labels_file"):
                _require(key in ref, f"model {model_id!r}: {split} entry missing {key!r}")
            probs = read_prediction_file(base / ref["probs_file"])
            labels = read_label_file(base / ref["labels_file"])
            ps = PredictionSet(probs=probs, labels=labels)
            check_prediction_set(ps, n_classes, f"model {model_id!r} {split}")
            if split in shared_counts:
                _require(
                    ps.n_samples == shared_counts[split],
                    f"model {model_id!r} {split}: {ps.n_samples} samples, "
                    f"other models have {shared_counts[split]}",
                )
                _require(
                    np.array_equal(ps.labels, shared_labels[split]),
                    f"model {model_id!r} {split}: label vector differs from other models",
                )
            else:
                shared_counts[split] = ps.n_samples
                shared_labels[split] = ps.labels
            splits[split] = ps

        models.append(
            ModelRecord(
                model_id=model_id,
                param_count=params,
                latencies=lat_map,
                validation=splits["validation"],
                test=splits["test"],
            )
        )

    return ModelPool(
        dataset_name=str(data["dataset"]),
        n_classes=n_classes,
        models=tuple(models),
        platforms=platforms,
    )


def _safe_stem(model_id: str, index: int) -> str:
    cleaned = re.sub(r"[^A-Za-z0-9._-]+", "_", model_id)
    return f"{index:03d}_{cleaned}"


def write_pool(pool: ModelPool, out_dir: str | Path, manifest_name: str = "pool.json") -> Path:
    """Write a pool to ``out_dir`` and return the manifest path.

    Label files are shared across models (labels are identical per split by
    invariant). ``load_pool(write_pool(p)) == p`` bit-exactly.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    label_files = {split: f"{split}_labels.elbl" for split in SPLITS}
    for split, fname in label_files.items():
        write_label_file(out_dir / fname, pool.models[0].split(split).labels)

    entries = []
    for i, model in enumerate(pool.models):
        entry: dict = {
            "id": model.model_id,
            "params": model.param_count,
            "latency": {p: model.latencies[p] for p in pool.platforms},
        }
        for split in SPLITS:
            probs_file = f"{_safe_stem(model.model_id, i)}_{split}.eprd"
            write_prediction_file(out_dir / probs_file, model.split(split).probs)
            entry[split] = {"probs_file": probs_file, "labels_file": label_files[split]}
        entries.append(entry)

    manifest = {
        "dataset": pool.dataset_name,
        "n_classes": pool.n_classes,
        "platforms": list(pool.platforms),
        "models": entries,
    }
    manifest_path = out_dir / manifest_name
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest_path


# ---------------------------------------------------------------------------
# synthetic pools


def _synth_probs(
    rng: np.random.Generator, labels: np.ndarray, accuracy: float, n_classes: int
) -> np.ndarray:
    """Softmax rows whose argmax equals the label with roughly ``accuracy``.

    The margin between the top activation and the rest is exponential, so a
    sizable fraction of rows is low-confidence; early-exit chains stay
    interesting on these pools.
    """
    n = labels.shape[0]
    correct = rng.random(n) < accuracy
    offsets = rng.integers(1, n_classes, size=n)
    pred = np.where(correct, labels, (labels + offsets) % n_classes)
    z = rng.standard_normal((n, n_classes))
    gap = rng.exponential(1.0, n) + 0.05
    z[np.arange(n), pred] = z.max(axis=1) + gap
    z -= z.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    return p.astype("<f4")


def _balanced_labels(rng: np.random.Generator, n_samples: int, n_classes: int) -> np.ndarray:
    reps = -(-n_samples // n_classes)
    labels = np.tile(np.arange(n_classes, dtype="<u4"), reps)[:n_samples]
    return rng.permutation(labels)


def _generate_pool(
    rng: np.random.Generator, n_models: int, n_samples: int, n_classes: int, seed: int
) -> ModelPool:
    base_acc = np.linspace(0.45, 0.95, n_models) if n_models > 1 else np.array([0.80])
    acc = np.clip(base_acc + rng.normal(0.0, 0.02, n_models), 1.0 / n_classes + 0.02, 0.99)
    log_params = 5.0 + 2.7 * np.linspace(0.0, 1.0, n_models) + rng.normal(0.0, 0.08, n_models)
    params = np.maximum(np.round(10.0**log_params).astype(np.int64), 1)
    cpu_lat = 0.004 * (params / 1e6) ** 0.75 * np.exp(rng.normal(0.0, 0.1, n_models))
    gpu_lat = cpu_lat / rng.uniform(4.0, 12.0, n_models)

    labels = {split: _balanced_labels(rng, n_samples, n_classes) for split in SPLITS}

    models = []
    for i in range(n_models):
        splits = {
            split: PredictionSet(
                probs=_synth_probs(rng, labels[split].astype(np.int64), float(acc[i]), n_classes),
                labels=labels[split],
            )
            for split in SPLITS
        }
        models.append(
            ModelRecord(
                model_id=f"m{i:02d}",
                param_count=int(params[i]),
                latencies={"cpu": float(cpu_lat[i]), "gpu": float(gpu_lat[i])},
                validation=splits["validation"],
                test=splits["test"],
            )
        )
    return ModelPool(
        dataset_name=f"synthetic-{seed}",
        n_classes=n_classes,
        models=tuple(models),
        platforms=("cpu", "gpu"),
    )


def _has_nondominated_pair(pool: ModelPool) -> bool:
    # mutual non-domination on (validation error, params)
    stats = []
    for m in pool.models:
        preds = np.asarray(m.validation.probs).argmax(axis=1)
        err = float(np.mean(preds != m.validation.labels.astype(np.int64)))
        stats.append((err, m.param_count))
    for i in range(len(stats)):
        for j in range(i + 1, len(stats)):
            ei, pi = stats[i]
            ej, pj = stats[j]
            if (ei < ej and pi > pj) or (ej < ei and pj > pi):
                return True
    return False


def synth_pool(n_models: int, n_samples: int, n_classes: int, seed: int) -> ModelPool:
    """Generate a deterministic synthetic pool.

    Model accuracies span a range and correlate with parameter counts, so at
    least two models are mutually non-dominated on (error, size) whenever the
    pool has two or more members. Identical arguments always produce
    bit-identical pools.
    """
    if n_models < 1:
        raise ValueError("n_models must be >= 1")
    if n_classes < 2:
        raise ValueError("n_classes must be >= 2")
    if n_samples < n_classes:
        raise ValueError("n_samples must be >= n_classes")
    for attempt in range(32):
        rng = np.random.default_rng([seed, attempt])
        pool = _generate_pool(rng, n_models, n_samples, n_classes, seed)
        if n_models < 2 or _has_nondominated_pair(pool):
            return pool
    raise RuntimeError("could not synthesize a pool with a non-dominated pair")


# ---------------------------------------------------------------------------
# splitting


def stratified_half_split(
    predictions: PredictionSet, seed: int
) -> tuple[PredictionSet, PredictionSet]:
    """Split one prediction set into two stratified halves.

    Each class present in the labels is shuffled with a seeded generator and
    divided as evenly as possible (the first half receives the extra sample of
    an odd class). Output rows keep ascending original-index order. A class
    with fewer than two samples is an error.
    """
    labels = predictions.labels.astype(np.int64)
    rng = np.random.default_rng(seed)
    first_parts: list[np.ndarray] = []
    second_parts: list[np.ndarray] = []
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        if idx.size < 2:
            raise PoolFormatError(
                f"class {int(cls)} has {idx.size} sample(s); stratified split needs at least 2"
            )
        perm = rng.permutation(idx)
        take = (idx.size + 1) // 2
        first_parts.append(perm[:take])
        second_parts.append(perm[take:])
    first_idx = np.sort(np.concatenate(first_parts))
    second_idx = np.sort(np.concatenate(second_parts))
    return (
        PredictionSet(probs=predictions.probs[first_idx], labels=predictions.labels[first_idx]),
        PredictionSet(probs=predictions.probs[second_idx], labels=predictions.labels[second_idx]),
    )


# ---------------------------------------------------------------------------
# CSV import


def prediction_set_from_csv(
    probs_path: str | Path, labels_path: str | Path, n_classes: int | None = None
) -> PredictionSet:
    """Build a PredictionSet from delimited text files and validate it."""
    probs64 = np.loadtxt(probs_path, delimiter=",", dtype=np.float64, ndmin=2)
    labels64 = np.loadtxt(labels_path, dtype=np.int64, ndmin=1)
    if np.any(labels64 < 0):
        raise PoolFormatError(f"{labels_path}: negative label")
    ps = PredictionSet(probs=probs64.astype("<f4"), labels=labels64.astype("<u4"))
    check_prediction_set(ps, n_classes if n_classes is not None else ps.n_classes, str(probs_path))
    return ps
