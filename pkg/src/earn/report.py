"""Result reporting: baseline comparison table, front CSVs, figures.

The summary mirrors the usual headline comparison: take the most accurate
single model as the reference, then report (A) the most accurate archive
entry, (B) the fastest entry at reference accuracy or better, and (C) the
smallest entry at reference accuracy or better, with speedup and size
reduction relative to the reference. Figures are rendered with matplotlib's
Agg backend so reports work headless.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import EarnError
from .evaluator import EvalContext
from .exhaustive import read_enumeration_csv
from .graph import Classifier, Merger, iter_nodes, node_from_json_obj
from .moo import non_dominated_indices
from .pool import load_pool


@dataclass
class ReportPoint:
    source: str  # single | archive | enumeration
    error: float
    latency: float
    size: int
    detail: str  # model id, graph JSON, or enumeration members


def _load_archive(run_dir: Path) -> list[dict]:
    archive_path = run_dir / "archive.json"
    if not archive_path.is_file():
        raise EarnError(f"{run_dir}: archive.json not found; not a search output directory?")
    try:
        entries = json.loads(archive_path.read_text())
    except json.JSONDecodeError as exc:
        raise EarnError(f"{archive_path}: invalid JSON ({exc})") from exc
    if not isinstance(entries, list) or not entries:
        raise EarnError(f"{archive_path}: expected a non-empty JSON array")
    return entries


def _load_run_context(run_dir: Path) -> dict:
    manifest = run_dir / "run_manifest.json"
    if manifest.is_file():
        try:
            return json.loads(manifest.read_text()).get("context", {})
        except json.JSONDecodeError:
            return {}
    return {}


def _negative_weight_flags(entries: list[dict]) -> list[str]:
    flags = []
    for entry in entries:
        try:
            graph = node_from_json_obj(entry["graph"])
        except Exception:
            continue
        for node in iter_nodes(graph):
            if isinstance(node, Merger) and node.weights and any(w < 0 for w in node.weights):
                flags.append(
                    f"hash {entry.get('hash')}: negative ensemble weight "
                    f"(a member is worse than chance on validation)"
                )
                break
    return flags


def _front_points(points: list[ReportPoint]) -> list[ReportPoint]:
    keep = non_dominated_indices([(p.error, p.latency, float(p.size)) for p in points])
    return [points[i] for i in keep]


def _write_front_csv(points: list[ReportPoint], path: Path) -> None:
    rows = sorted(points, key=lambda p: (p.error, p.latency, p.size, p.detail))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["error", "latency_s", "size_params", "source", "detail"])
        for p in rows:
            writer.writerow([repr(p.error), repr(p.latency), p.size, p.source, p.detail])


_PAIRS = (
    ("error", "latency_s"),
    ("error", "size_params"),
    ("latency_s", "size_params"),
)


def _pair_values(point: ReportPoint, name: str) -> float:
    return {"error": point.error, "latency_s": point.latency, "size_params": float(point.size)}[name]


def _write_pair_fronts(points: list[ReportPoint], out_dir: Path) -> list[Path]:
    written = []
    for x_name, y_name in _PAIRS:
        vectors = [(_pair_values(p, x_name), _pair_values(p, y_name)) for p in points]
        keep = non_dominated_indices(vectors)
        rows = sorted((vectors[i] for i in keep), key=lambda v: (v[0], v[1]))
        path = out_dir / f"front_{x_name.removesuffix('_s').removesuffix('_params')}_{y_name.removesuffix('_s').removesuffix('_params')}.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([x_name, y_name])
            for x, y in rows:
                writer.writerow([repr(x), repr(y)])
        written.append(path)
    return written


def _render_figures(
    points: list[ReportPoint], front: list[ReportPoint], reference: ReportPoint, out_dir: Path
) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    styles = {
        "single": dict(marker="o", color="#777777", label="single models"),
        "archive": dict(marker="x", color="#1f77b4", label="search archive"),
        "enumeration": dict(marker=".", color="#b4b4dc", label="enumeration"),
    }
    written = []
    for x_name, y_name in _PAIRS:
        fig, ax = plt.subplots(figsize=(5.5, 4.0))
        for source, style in styles.items():
            xs = [_pair_values(p, x_name) for p in points if p.source == source]
            ys = [_pair_values(p, y_name) for p in points if p.source == source]
            if xs:
                ax.scatter(xs, ys, s=18, alpha=0.7, **style)
        front_sorted = sorted(
            ((_pair_values(p, x_name), _pair_values(p, y_name)) for p in front),
            key=lambda v: v,
        )
        if front_sorted:
            ax.plot(
                [v[0] for v in front_sorted],
                [v[1] for v in front_sorted],
                color="#d62728",
                linewidth=1.0,
                label="pareto front",
            )
        ax.scatter(
            [_pair_values(reference, x_name)],
            [_pair_values(reference, y_name)],
            marker="*",
            s=140,
            color="#2ca02c",
            label="reference model",
            zorder=5,
        )
        if y_name == "size_params":
            ax.set_yscale("log")
        ax.set_xlabel(x_name)
        ax.set_ylabel(y_name)
        ax.legend(fontsize=8)
        fig.tight_layout()
        stem = f"fig_{x_name.removesuffix('_s').removesuffix('_params')}_{y_name.removesuffix('_s').removesuffix('_params')}.png"
        path = out_dir / stem
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written


def _render_history_figure(run_dir: Path, out_dir: Path) -> Path | None:
    history_path = run_dir / "history.csv"
    if not history_path.is_file():
        return None
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    gens, hvs, errs = [], [], []
    with open(history_path, newline="") as fh:
        for rec in csv.DictReader(fh):
            gens.append(int(rec["generation"]))
            hvs.append(float(rec["archive_hypervolume"]))
            errs.append(float(rec["best_error"]))
    fig, ax = plt.subplots(figsize=(5.5, 3.2))
    ax.plot(gens, hvs, color="#1f77b4", label="archive hypervolume")
    ax.set_xlabel("generation")
    ax.set_ylabel("hypervolume", color="#1f77b4")
    twin = ax.twinx()
    twin.plot(gens, errs, color="#d62728", label="best error")
    twin.set_ylabel("best error", color="#d62728")
    fig.tight_layout()
    path = out_dir / "fig_history.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def generate_report(
    run_dir: str | Path,
    pool_path: str | Path,
    out_dir: str | Path,
    enumeration_csvs: tuple[str | Path, ...] = (),
    figures: bool = True,
    split: str | None = None,
    platform: str | None = None,
) -> Path:
    """Build summary.txt, front CSVs, and figures for one search run.

    ``split``/``platform`` default to the values recorded in the run
    manifest, so single-model baselines are computed under the same
    conditions the archive was. Returns the summary path.
    """
    run_dir = Path(run_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    pool = load_pool(pool_path)
    run_ctx = _load_run_context(run_dir)
    split = split or run_ctx.get("split", "validation")
    platform = platform or run_ctx.get("platform") or pool.platforms[0]
    if platform not in pool.platforms:
        raise EarnError(f"platform {platform!r} not in pool platforms {pool.platforms}")
    ctx = EvalContext(pool, split=split, platform=platform)

    singles = []
    for model_id in pool.model_ids:
        ov = ctx.evaluate(Classifier(model_id))
        singles.append(ReportPoint("single", ov.error, ov.latency, ov.size, model_id))
    reference = min(singles, key=lambda p: (p.error, p.latency, p.size, p.detail))

    entries = _load_archive(run_dir)
    archive_points = [
        ReportPoint(
            "archive",
            float(e["objectives"]["error"]),
            float(e["objectives"]["latency_s"]),
            int(e["objectives"]["size_params"]),
            json.dumps(e["graph"], separators=(",", ":")),
        )
        for e in entries
    ]

    enum_points = []
    for csv_path in enumeration_csvs:
        for rec in read_enumeration_csv(csv_path):
            detail = f"{rec['strategy']}:{rec['members']}"
            if rec["protocol"]:
                detail += f":{rec['protocol']}"
            if rec["tau"] is not None:
                detail += f":tau={rec['tau']}"
            enum_points.append(
                ReportPoint("enumeration", rec["error"], rec["latency_s"], rec["size_params"], detail)
            )

    merged = singles + archive_points + enum_points
    front = _front_points(merged)
    _write_front_csv(front, out_dir / "front.csv")
    _write_pair_fronts(merged, out_dir)

    # headline entries come from the archive alone
    best_acc = min(archive_points, key=lambda p: (p.error, p.latency, p.size, p.detail))
    eligible = [p for p in archive_points if p.error <= reference.error]
    if not eligible:
        # the archive always carries a point at least as accurate as every
        # single model it saw; missing one means foreign inputs
        raise EarnError("archive has no entry at reference accuracy or better")
    fastest = min(eligible, key=lambda p: (p.latency, p.error, p.size, p.detail))
    smallest = min(eligible, key=lambda p: (p.size, p.error, p.latency, p.detail))

    gain_pp = (reference.error - best_acc.error) * 100.0
    speedup = reference.latency / fastest.latency
    reduction = reference.size / smallest.size
    flags = _negative_weight_flags(entries)

    lines = [
        f"pool: {pool.dataset_name} ({len(pool)} models, {pool.n_classes} classes)",
        f"split: {split}   platform: {platform}",
        "",
        f"reference single model: {reference.detail}",
        f"  error={reference.error:.6f} latency_s={reference.latency:.6g} size_params={reference.size}",
        "",
        "A. most accurate ensemble:",
        f"  error={best_acc.error:.6f} (accuracy gain {gain_pp:+.3f} pp)",
        f"  latency_s={best_acc.latency:.6g} size_params={best_acc.size}",
        f"  graph: {best_acc.detail}",
        "",
        "B. fastest at reference accuracy or better:",
        f"  latency_s={fastest.latency:.6g} (speedup {speedup:.2f}x) error={fastest.error:.6f}",
        f"  graph: {fastest.detail}",
        "",
        "C. smallest at reference accuracy or better:",
        f"  size_params={smallest.size} (reduction {reduction:.2f}x) error={smallest.error:.6f}",
        f"  graph: {smallest.detail}",
        "",
        f"archive entries: {len(archive_points)}   merged front size: {len(front)}",
    ]
    if flags:
        lines.append("")
        lines.append("flags:")
        lines.extend(f"  - {f}" for f in flags)
    lines.append("")
    summary_path = out_dir / "summary.txt"
    summary_path.write_text("\n".join(lines))

    if figures:
        _render_figures(merged, front, reference, out_dir)
        _render_history_figure(run_dir, out_dir)
    return summary_path
