import csv
import json
import math
from pathlib import Path

import pytest

from earn.cli import main
from earn.pool import load_pool


@pytest.fixture(scope="module")
def pool_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli-pool")
    code = main(
        [
            "pool", "synth",
            "--models", "4",
            "--samples", "200",
            "--classes", "3",
            "--seed", "7",
            "-o", str(out),
        ]
    )
    assert code == 0
    return out


@pytest.fixture(scope="module")
def run_dir(pool_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli-run")
    code = main(
        [
            "search", str(pool_dir / "pool.json"),
            "-M", "30", "-C", "12", "-I", "6",
            "--seed", "11",
            "--quiet",
            "-o", str(out),
        ]
    )
    assert code == 0
    return out


# ---------------------------------------------------------------------------
# pool commands


def test_synth_writes_loadable_pool(pool_dir):
    p = load_pool(pool_dir / "pool.json")
    assert len(p) == 4
    assert p.n_classes == 3
    assert p.models[0].split("validation").n_samples == 200


def test_validate_ok(pool_dir, capsys):
    assert main(["pool", "validate", str(pool_dir / "pool.json")]) == 0
    out = capsys.readouterr().out
    assert "pool OK" in out
    assert out.count("params=") == 4


def test_validate_missing_manifest(tmp_path, capsys):
    assert main(["pool", "validate", str(tmp_path / "nope.json")]) == 2
    assert "error:" in capsys.readouterr().err


def test_validate_corrupt_prediction_file(pool_dir, tmp_path, capsys):
    clone = tmp_path / "pool"
    clone.mkdir()
    for src in pool_dir.iterdir():
        (clone / src.name).write_bytes(src.read_bytes())
    victim = next(clone.glob("*.eprd"))
    data = bytearray(victim.read_bytes())
    data[0] ^= 0xFF  # break the magic
    victim.write_bytes(bytes(data))
    assert main(["pool", "validate", str(clone / "pool.json")]) == 2
    assert "magic" in capsys.readouterr().err


def test_unknown_command_is_usage_error(capsys):
    assert main(["frobnicate"]) == 1
    assert capsys.readouterr().err


def test_missing_required_option_is_usage_error(pool_dir):
    assert main(["enumerate", str(pool_dir / "pool.json")]) == 1


# ---------------------------------------------------------------------------
# search


def test_search_writes_all_artifacts(run_dir):
    for name in (
        "archive.json",
        "archive.csv",
        "history.csv",
        "population.json",
        "run_manifest.json",
    ):
        assert (run_dir / name).is_file(), name


def test_search_history_budget(run_dir):
    with open(run_dir / "history.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 7  # generation 0 plus 6 iterations
    assert sum(int(r["offspring"]) for r in rows) == 6 * 12


def test_search_progress_lines(pool_dir, tmp_path, capsys):
    code = main(
        [
            "search", str(pool_dir / "pool.json"),
            "-M", "10", "-C", "6", "-I", "2",
            "-o", str(tmp_path / "run"),
        ]
    )
    assert code == 0
    out = capsys.readouterr().out
    assert out.count("gen ") == 3
    assert "done:" in out


def test_search_rejects_bad_jobs(pool_dir, tmp_path):
    code = main(
        ["search", str(pool_dir / "pool.json"), "--jobs", "0", "-o", str(tmp_path / "r")]
    )
    assert code == 1


def test_search_requires_pool(tmp_path):
    assert main(["search", "-o", str(tmp_path / "r")]) == 1


def test_search_from_manifest_reproduces_run(run_dir, tmp_path):
    rerun = tmp_path / "rerun"
    code = main(
        [
            "search",
            "--from-manifest", str(run_dir / "run_manifest.json"),
            "--quiet",
            "-o", str(rerun),
        ]
    )
    assert code == 0
    for name in ("archive.csv", "history.csv"):
        assert (rerun / name).read_bytes() == (run_dir / name).read_bytes(), name


def test_search_jobs_flag_keeps_outputs_identical(pool_dir, run_dir, tmp_path):
    jobs_run = tmp_path / "jobs8"
    code = main(
        [
            "search", str(pool_dir / "pool.json"),
            "-M", "30", "-C", "12", "-I", "6",
            "--seed", "11",
            "--jobs", "8",
            "--quiet",
            "-o", str(jobs_run),
        ]
    )
    assert code == 0
    assert (jobs_run / "archive.csv").read_bytes() == (run_dir / "archive.csv").read_bytes()


# ---------------------------------------------------------------------------
# eval


def test_eval_matches_archive_entry(run_dir, pool_dir, tmp_path, capsys):
    entries = json.loads((run_dir / "archive.json").read_text())
    entry = entries[0]
    graph_file = tmp_path / "graph.json"
    graph_file.write_text(json.dumps(entry["graph"]))
    code = main(
        ["eval", str(graph_file), "--pool", str(pool_dir / "pool.json")]
    )
    assert code == 0
    got = json.loads(capsys.readouterr().out)
    assert got["error"] == entry["objectives"]["error"]
    assert got["latency_s"] == entry["objectives"]["latency_s"]
    assert got["size_params"] == entry["objectives"]["size_params"]
    assert got["accuracy"] == pytest.approx(1.0 - got["error"])


def test_eval_unknown_model_is_data_error(pool_dir, tmp_path, capsys):
    graph_file = tmp_path / "bad.json"
    graph_file.write_text(json.dumps({"kind": "classifier", "model": "ghost"}))
    code = main(["eval", str(graph_file), "--pool", str(pool_dir / "pool.json")])
    assert code == 2
    assert "ghost" in capsys.readouterr().err


def test_eval_malformed_json_is_data_error(pool_dir, tmp_path, capsys):
    graph_file = tmp_path / "broken.json"
    graph_file.write_text("{not json")
    code = main(["eval", str(graph_file), "--pool", str(pool_dir / "pool.json")])
    assert code == 2
    assert "error:" in capsys.readouterr().err


def test_eval_test_split_differs_from_validation(run_dir, pool_dir, tmp_path, capsys):
    entries = json.loads((run_dir / "archive.json").read_text())
    graph_file = tmp_path / "graph.json"
    graph_file.write_text(json.dumps(entries[-1]["graph"]))
    assert main(["eval", str(graph_file), "--pool", str(pool_dir / "pool.json")]) == 0
    val = json.loads(capsys.readouterr().out)
    assert (
        main(
            [
                "eval", str(graph_file),
                "--pool", str(pool_dir / "pool.json"),
                "--split", "test",
            ]
        )
        == 0
    )
    test = json.loads(capsys.readouterr().out)
    assert val["split"] == "validation" and test["split"] == "test"
    assert test["size_params"] == val["size_params"]


# ---------------------------------------------------------------------------
# enumerate


def test_enumerate_chain2_to_stdout(pool_dir, capsys):
    code = main(
        [
            "enumerate", str(pool_dir / "pool.json"),
            "--strategy", "chain2",
            "--grid-step", "0.25",
        ]
    )
    assert code == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "strategy,members,protocol,tau,error,latency_s,size_params"
    assert len(lines) == 1 + math.comb(4, 2) * 4


def test_enumerate_bagging_to_file(pool_dir, tmp_path):
    out_file = tmp_path / "bag.csv"
    code = main(
        [
            "enumerate", str(pool_dir / "pool.json"),
            "--strategy", "bagging",
            "--k", "2",
            "-o", str(out_file),
        ]
    )
    assert code == 0
    with open(out_file, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == math.comb(4, 2) * 3
    assert {r["strategy"] for r in rows} == {"bagging"}


def test_enumerate_front_only_is_nondominated_subset(pool_dir, tmp_path):
    full, front = tmp_path / "full.csv", tmp_path / "front.csv"
    base = [
        "enumerate", str(pool_dir / "pool.json"),
        "--strategy", "boosting", "--k", "2",
    ]
    assert main(base + ["-o", str(full)]) == 0
    assert main(base + ["--front-only", "-o", str(front)]) == 0
    with open(full, newline="") as fh:
        full_rows = {tuple(r.values()) for r in csv.DictReader(fh)}
    with open(front, newline="") as fh:
        front_rows = [tuple(r.values()) for r in csv.DictReader(fh)]
    assert 0 < len(front_rows) <= len(full_rows)
    assert set(front_rows) <= full_rows


def test_enumerate_bad_protocol_is_usage_error(pool_dir, capsys):
    code = main(
        [
            "enumerate", str(pool_dir / "pool.json"),
            "--strategy", "bagging",
            "--protocols", "median",
        ]
    )
    assert code == 1


def test_enumerate_bad_k_is_usage_error(pool_dir):
    code = main(
        ["enumerate", str(pool_dir / "pool.json"), "--strategy", "bagging", "--k", "9"]
    )
    assert code == 1


# ---------------------------------------------------------------------------
# report


def test_report_writes_summary_and_figures(run_dir, pool_dir, capsys):
    code = main(
        ["report", str(run_dir), "--pool", str(pool_dir / "pool.json")]
    )
    assert code == 0
    out_dir = run_dir / "report"
    assert (out_dir / "summary.txt").is_file()
    pngs = list(out_dir.glob("*.png"))
    assert pngs, "expected rendered figures"
    fronts = list(out_dir.glob("front_*.csv"))
    assert fronts
    stdout = capsys.readouterr().out
    assert "report written to" in stdout


def test_report_no_figures(run_dir, pool_dir, tmp_path):
    out_dir = tmp_path / "rep"
    code = main(
        [
            "report", str(run_dir),
            "--pool", str(pool_dir / "pool.json"),
            "--no-figures",
            "-o", str(out_dir),
        ]
    )
    assert code == 0
    assert (out_dir / "summary.txt").is_file()
    assert not list(out_dir.glob("*.png"))


def test_report_with_enumeration_overlay(run_dir, pool_dir, tmp_path):
    enum_csv = tmp_path / "chains.csv"
    assert (
        main(
            [
                "enumerate", str(pool_dir / "pool.json"),
                "--strategy", "chain2",
                "--grid-step", "0.2",
                "-o", str(enum_csv),
            ]
        )
        == 0
    )
    out_dir = tmp_path / "rep"
    code = main(
        [
            "report", str(run_dir),
            "--pool", str(pool_dir / "pool.json"),
            "--enumeration", str(enum_csv),
            "-o", str(out_dir),
        ]
    )
    assert code == 0
    assert (out_dir / "summary.txt").is_file()


def test_report_missing_run_dir_is_data_error(pool_dir, tmp_path, capsys):
    code = main(
        ["report", str(tmp_path / "ghost"), "--pool", str(pool_dir / "pool.json")]
    )
    assert code == 2
    assert "error:" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# entry point


def test_help_and_version_exit_zero(capsys):
    assert main(["--help"]) == 0
    assert "Usage" in capsys.readouterr().out
    assert main(["--version"]) == 0
    assert "version" in capsys.readouterr().out
