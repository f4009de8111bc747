"""Command line interface.

Exit codes: 0 success, 1 usage errors, 2 data errors (bad pools, malformed
graphs, unknown platforms), 3 unexpected internal failures.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import __version__
from .errors import EarnError, GraphValidationError
from .evaluator import EvalContext, OBJECTIVE_NAMES
from .exhaustive import (
    UNWEIGHTED_PROTOCOLS,
    WEIGHTED_PROTOCOLS,
    default_tau_grid,
    enumerate_chains2,
    enumerate_mergers,
    write_enumeration_csv,
)
from .graph import MergeProtocol, deserialize
from .pool import (
    load_pool,
    prediction_set_from_csv,
    read_label_file,
    read_prediction_file,
    stratified_half_split,
    synth_pool,
    write_label_file,
    write_pool,
    write_prediction_file,
    PredictionSet,
    check_prediction_set,
)
from .report import generate_report
from .search import (
    EarnConfig,
    run,
    write_run_manifest,
    write_run_outputs,
)


def _parse_objectives(value: str | None) -> tuple[str, ...]:
    if value is None:
        return OBJECTIVE_NAMES
    names = tuple(n.strip() for n in value.split(",") if n.strip())
    for n in names:
        if n not in OBJECTIVE_NAMES:
            raise click.UsageError(
                f"unknown objective {n!r}; choose from {', '.join(OBJECTIVE_NAMES)}"
            )
    if not names:
        raise click.UsageError("at least one objective is required")
    return names


def _require_platform(pool, platform: str | None) -> str | None:
    if platform is not None and platform not in pool.platforms:
        raise EarnError(
            f"platform {platform!r} not in pool platforms {tuple(pool.platforms)}"
        )
    return platform


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(__version__, prog_name="earn")
def cli() -> None:
    """Compose pretrained classifiers into accurate, fast, small ensembles."""


# ---------------------------------------------------------------------------
# pool commands


@cli.group()
def pool() -> None:
    """Create, validate, and transform prediction pools."""


@pool.command("validate")
@click.argument("manifest", type=click.Path())
def pool_validate(manifest: str) -> None:
    """Load MANIFEST, run all consistency checks, and print per-model stats."""
    p = load_pool(manifest)
    click.echo(
        f"pool OK: dataset={p.dataset_name} models={len(p)} "
        f"classes={p.n_classes} platforms={','.join(p.platforms)}"
    )
    for model in p.models:
        accs = []
        for split in ("validation", "test"):
            ps = model.split(split)
            preds = ps.probs.astype("float64").argmax(axis=1)
            acc = float((preds == ps.labels.astype("int64")).mean())
            accs.append(f"{split}_acc={acc:.4f}")
        lats = " ".join(
            f"latency[{plat}]={model.latencies[plat]:.6g}s" for plat in p.platforms
        )
        click.echo(f"  {model.model_id}: params={model.param_count} {' '.join(accs)} {lats}")


@pool.command("synth")
@click.option("--models", "n_models", type=int, default=8, show_default=True)
@click.option("--samples", "n_samples", type=int, default=1000, show_default=True)
@click.option("--classes", "n_classes", type=int, default=10, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--output", "-o", "out_dir", type=click.Path(), required=True)
def pool_synth(n_models: int, n_samples: int, n_classes: int, seed: int, out_dir: str) -> None:
    """Generate a deterministic synthetic pool for testing and demos."""
    try:
        p = synth_pool(n_models, n_samples, n_classes, seed)
    except ValueError as exc:
        raise click.UsageError(str(exc)) from exc
    manifest = write_pool(p, out_dir)
    click.echo(f"wrote {manifest}")


@pool.command("split")
@click.option("--probs", "probs_file", type=click.Path(), required=True)
@click.option("--labels", "labels_file", type=click.Path(), required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--prefix", default="part", show_default=True)
@click.option("--output", "-o", "out_dir", type=click.Path(), required=True)
def pool_split(probs_file: str, labels_file: str, seed: int, prefix: str, out_dir: str) -> None:
    """Split one prediction/label pair into two stratified halves.

    Writes <prefix>_first.eprd/.elbl and <prefix>_second.eprd/.elbl; classes
    are divided as evenly as possible with a seeded shuffle.
    """
    probs = read_prediction_file(probs_file)
    labels = read_label_file(labels_file)
    ps = PredictionSet(probs=probs, labels=labels)
    check_prediction_set(ps, ps.n_classes, probs_file)
    first, second = stratified_half_split(ps, seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, part in (("first", first), ("second", second)):
        write_prediction_file(out / f"{prefix}_{name}.eprd", part.probs)
        write_label_file(out / f"{prefix}_{name}.elbl", part.labels)
        click.echo(f"wrote {out / f'{prefix}_{name}.eprd'} ({part.n_samples} samples)")


@pool.command("import-csv")
@click.option("--probs", "probs_file", type=click.Path(), required=True)
@click.option("--labels", "labels_file", type=click.Path(), required=True)
@click.option("--classes", "n_classes", type=int, default=None,
              help="Expected class count; defaults to the CSV column count.")
@click.option("--name", default="imported", show_default=True)
@click.option("--output", "-o", "out_dir", type=click.Path(), required=True)
def pool_import_csv(
    probs_file: str, labels_file: str, n_classes: int | None, name: str, out_dir: str
) -> None:
    """Convert delimited text predictions into the binary formats."""
    try:
        ps = prediction_set_from_csv(probs_file, labels_file, n_classes)
    except (ValueError, OSError) as exc:
        raise EarnError(f"could not parse CSV input: {exc}") from exc
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_prediction_file(out / f"{name}.eprd", ps.probs)
    write_label_file(out / f"{name}.elbl", ps.labels)
    click.echo(f"wrote {out / f'{name}.eprd'} and {out / f'{name}.elbl'}")


# ---------------------------------------------------------------------------
# search


def _load_config(
    config_file: str | None, manifest_config: dict | None, overrides: dict
) -> EarnConfig:
    data: dict = {}
    if manifest_config:
        data.update(manifest_config)
    if config_file:
        try:
            file_data = json.loads(Path(config_file).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise EarnError(f"could not read config {config_file}: {exc}") from exc
        if not isinstance(file_data, dict):
            raise EarnError(f"{config_file}: config must be a JSON object")
        data.update(file_data)
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return EarnConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise click.UsageError(str(exc)) from exc


@cli.command()
@click.argument("pool_manifest", type=click.Path(), required=False)
@click.option("--config", "config_file", type=click.Path(), default=None,
              help="JSON file with EarnConfig fields; flags override it.")
@click.option("--from-manifest", "from_manifest", type=click.Path(), default=None,
              help="Re-run an earlier search from its run_manifest.json.")
@click.option("--population", "-M", "population_limit", type=int, default=None)
@click.option("--offspring", "-C", "offspring_limit", type=int, default=None)
@click.option("--tournament", "-K", "tournament_size", type=int, default=None)
@click.option("--mutation-rate", type=float, default=None)
@click.option("--node-mutation-prob", type=float, default=None)
@click.option("--iterations", "-I", type=int, default=None)
@click.option("--threshold-step", type=float, default=None)
@click.option("--initial-threshold", type=float, default=None)
@click.option("--max-depth", type=int, default=None)
@click.option("--termination", type=click.Choice(["iterations", "hypervolume"]), default=None)
@click.option("--hv-epsilon", type=float, default=None)
@click.option("--hv-patience", type=int, default=None)
@click.option("--mutate-all-protocols/--counterpart-protocols", "mutate_all_protocols",
              default=None,
              help="Protocol mutations pick any protocol (default) or only the weighted twin.")
@click.option("--objectives", default=None,
              help="Comma list from error,latency,size (default all three).")
@click.option("--split", type=click.Choice(["validation", "test"]), default=None)
@click.option("--platform", default=None)
@click.option("--size-per-node", is_flag=True, default=False,
              help="Count a model's parameters once per node instead of once per distinct model.")
@click.option("--seed", type=int, default=None)
@click.option("--jobs", type=int, default=1, show_default=True)
@click.option("--output", "-o", "out_dir", type=click.Path(), default="earn-run", show_default=True)
@click.option("--quiet", is_flag=True, default=False)
def search(
    pool_manifest: str | None,
    config_file: str | None,
    from_manifest: str | None,
    mutate_all_protocols: bool | None,
    objectives: str | None,
    split: str | None,
    platform: str | None,
    size_per_node: bool,
    jobs: int,
    out_dir: str,
    quiet: bool,
    **cfg_overrides,
) -> None:
    """Run the evolutionary search and write archive, history, population."""
    if jobs < 1:
        raise click.UsageError("--jobs must be >= 1")

    manifest_cfg = None
    if from_manifest:
        try:
            manifest_data = json.loads(Path(from_manifest).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise EarnError(f"could not read run manifest {from_manifest}: {exc}") from exc
        manifest_cfg = manifest_data.get("config", {})
        context = manifest_data.get("context", {})
        pool_manifest = pool_manifest or manifest_data.get("pool")
        split = split or context.get("split")
        platform = platform or context.get("platform")
        if objectives is None and context.get("objectives"):
            objectives = ",".join(context["objectives"])
        size_per_node = size_per_node or bool(context.get("size_per_node"))
        jobs = manifest_data.get("jobs", jobs)
    if not pool_manifest:
        raise click.UsageError("a pool manifest is required (argument or --from-manifest)")

    if mutate_all_protocols is not None:
        cfg_overrides["mutate_all_protocols"] = mutate_all_protocols
    cfg = _load_config(config_file, manifest_cfg, cfg_overrides)

    p = load_pool(pool_manifest)
    _require_platform(p, platform)
    ctx = EvalContext(
        p,
        split=split or "validation",
        platform=platform,
        objectives=_parse_objectives(objectives),
        size_per_node=size_per_node,
    )

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_run_manifest(
        out / "run_manifest.json", pool_path=pool_manifest, out_dir=out, cfg=cfg, ctx=ctx, jobs=jobs
    )

    progress = None
    if not quiet:
        def progress(stats):  # noqa: ANN001
            click.echo(
                f"gen {stats.generation:>4}  offspring={stats.offspring:<4} "
                f"best_error={stats.best_error:.4f}  archive={stats.archive_size:<4} "
                f"hv={stats.archive_hypervolume:.6g}"
            )

    result = run(p, cfg, ctx, jobs=jobs, progress=progress)
    write_run_outputs(result, out)
    click.echo(
        f"done: {result.generations_run} generations, archive size {len(result.archive)}, "
        f"outputs in {out}"
    )


# ---------------------------------------------------------------------------
# eval


@cli.command("eval")
@click.argument("graph_file", type=click.Path())
@click.option("--pool", "pool_manifest", type=click.Path(), required=True)
@click.option("--split", type=click.Choice(["validation", "test"]), default="validation",
              show_default=True)
@click.option("--platform", default=None)
@click.option("--size-per-node", is_flag=True, default=False)
def eval_cmd(
    graph_file: str, pool_manifest: str, split: str, platform: str | None, size_per_node: bool
) -> None:
    """Evaluate one graph JSON file against a pool; print objectives as JSON."""
    p = load_pool(pool_manifest)
    _require_platform(p, platform)
    try:
        text = Path(graph_file).read_text()
    except OSError as exc:
        raise EarnError(f"could not read graph file: {exc}") from exc
    graph = deserialize(text, p)
    ctx = EvalContext(p, split=split, platform=platform, size_per_node=size_per_node)
    ov = ctx.evaluate(graph)
    click.echo(
        json.dumps(
            {
                "error": ov.error,
                "accuracy": 1.0 - ov.error,
                "latency_s": ov.latency,
                "size_params": ov.size,
                "split": split,
                "platform": ctx.platform,
            },
            indent=2,
        )
    )


# ---------------------------------------------------------------------------
# enumerate


@cli.command("enumerate")
@click.argument("pool_manifest", type=click.Path())
@click.option("--strategy", type=click.Choice(["bagging", "boosting", "chain2"]), required=True)
@click.option("--k", type=int, default=3, show_default=True,
              help="Ensemble size for merger strategies.")
@click.option("--protocols", default=None,
              help="Comma list of merge protocols (defaults per strategy).")
@click.option("--grid-step", type=float, default=0.01, show_default=True,
              help="Threshold grid step for chain2 (taus in [0, 1)).")
@click.option("--split", type=click.Choice(["validation", "test"]), default="validation",
              show_default=True)
@click.option("--platform", default=None)
@click.option("--front-only", is_flag=True, default=False,
              help="Write only the rank-0 front of the enumeration.")
@click.option("--output", "-o", "out_file", type=click.Path(), default=None,
              help="CSV path (default: stdout).")
def enumerate_cmd(
    pool_manifest: str,
    strategy: str,
    k: int,
    protocols: str | None,
    grid_step: float,
    split: str,
    platform: str | None,
    front_only: bool,
    out_file: str | None,
) -> None:
    """Exhaustively evaluate one ensemble family and emit a CSV."""
    p = load_pool(pool_manifest)
    _require_platform(p, platform)
    ctx = EvalContext(p, split=split, platform=platform)

    protos = None
    if protocols is not None:
        try:
            protos = tuple(MergeProtocol(s.strip()) for s in protocols.split(",") if s.strip())
        except ValueError as exc:
            raise click.UsageError(str(exc)) from exc
        if not protos:
            raise click.UsageError("--protocols must name at least one protocol")

    try:
        if strategy == "chain2":
            rows = enumerate_chains2(p, ctx, taus=default_tau_grid(grid_step))
        else:
            default = UNWEIGHTED_PROTOCOLS if strategy == "bagging" else WEIGHTED_PROTOCOLS
            rows = enumerate_mergers(p, ctx, k, protos or default, strategy)
    except ValueError as exc:
        raise click.UsageError(str(exc)) from exc

    if front_only:
        from .exhaustive import pareto_filter

        rows = pareto_filter(rows, ctx)
    if out_file:
        write_enumeration_csv(rows, out_file)
        click.echo(f"wrote {len(rows)} rows to {out_file}", err=True)
    else:
        write_enumeration_csv(rows, sys.stdout)


# ---------------------------------------------------------------------------
# report


@cli.command("report")
@click.argument("run_dir", type=click.Path())
@click.option("--pool", "pool_manifest", type=click.Path(), required=True)
@click.option("--enumeration", "enumeration_csvs", type=click.Path(), multiple=True,
              help="Enumeration CSVs to merge into the front plots (repeatable).")
@click.option("--split", type=click.Choice(["validation", "test"]), default=None)
@click.option("--platform", default=None)
@click.option("--figures/--no-figures", default=True, show_default=True)
@click.option("--output", "-o", "out_dir", type=click.Path(), default=None,
              help="Defaults to RUN_DIR/report.")
def report_cmd(
    run_dir: str,
    pool_manifest: str,
    enumeration_csvs: tuple[str, ...],
    split: str | None,
    platform: str | None,
    figures: bool,
    out_dir: str | None,
) -> None:
    """Summarize a run: baseline table, front CSVs, and figures."""
    out = Path(out_dir) if out_dir else Path(run_dir) / "report"
    summary = generate_report(
        run_dir,
        pool_manifest,
        out,
        enumeration_csvs=enumeration_csvs,
        figures=figures,
        split=split,
        platform=platform,
    )
    click.echo(summary.read_text())
    click.echo(f"report written to {out}")


# ---------------------------------------------------------------------------
# entry point


def main(argv: list[str] | None = None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except GraphValidationError as exc:
        for violation in exc.violations:
            click.echo(f"error: {violation}", err=True)
        return 2
    except EarnError as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    except OSError as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        click.echo(f"internal error: {exc!r}", err=True)
        return 3


if __name__ == "__main__":
    sys.exit(main())
