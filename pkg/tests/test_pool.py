import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from earn.errors import PoolFormatError
from earn.pool import (
    PredictionSet,
    check_prediction_set,
    load_pool,
    prediction_set_from_csv,
    read_label_file,
    read_prediction_file,
    stratified_half_split,
    synth_pool,
    write_label_file,
    write_pool,
    write_prediction_file,
)


def test_prediction_file_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    probs = rng.random((7, 4)).astype("<f4")
    path = tmp_path / "x.eprd"
    write_prediction_file(path, probs)
    back = read_prediction_file(path)
    assert back.dtype == np.dtype("<f4")
    assert np.array_equal(back, probs)


def test_label_file_round_trip(tmp_path):
    labels = np.array([0, 2, 1, 1, 0], dtype="<u4")
    path = tmp_path / "x.elbl"
    write_label_file(path, labels)
    assert np.array_equal(read_label_file(path), labels)


def test_prediction_file_bad_magic(tmp_path):
    path = tmp_path / "x.eprd"
    write_prediction_file(path, np.ones((2, 2), dtype="<f4") / 2)
    raw = bytearray(path.read_bytes())
    raw[0:4] = b"NOPE"
    path.write_bytes(bytes(raw))
    with pytest.raises(PoolFormatError, match="magic"):
        read_prediction_file(path)


def test_prediction_file_bad_version(tmp_path):
    path = tmp_path / "x.eprd"
    write_prediction_file(path, np.ones((2, 2), dtype="<f4") / 2)
    raw = bytearray(path.read_bytes())
    raw[4] = 9
    path.write_bytes(bytes(raw))
    with pytest.raises(PoolFormatError, match="version"):
        read_prediction_file(path)


def test_prediction_file_truncated_payload(tmp_path):
    path = tmp_path / "x.eprd"
    write_prediction_file(path, np.ones((4, 3), dtype="<f4") / 3)
    data = path.read_bytes()
    path.write_bytes(data[:-5])
    with pytest.raises(PoolFormatError, match="payload"):
        read_prediction_file(path)


def test_label_file_bad_magic(tmp_path):
    path = tmp_path / "x.elbl"
    write_label_file(path, np.zeros(3, dtype="<u4"))
    raw = bytearray(path.read_bytes())
    raw[0:4] = b"XXXX"
    path.write_bytes(bytes(raw))
    with pytest.raises(PoolFormatError, match="magic"):
        read_label_file(path)


def test_check_rejects_bad_row_sum_with_row_index():
    probs = np.full((3, 2), 0.5, dtype="<f4")
    probs[1] = [0.9, 0.3]  # sums to 1.2
    ps = PredictionSet(probs=probs, labels=np.zeros(3, dtype="<u4"))
    with pytest.raises(PoolFormatError, match="row 1"):
        check_prediction_set(ps, 2, "model 'm' validation")


def test_check_accepts_row_sum_within_tolerance():
    probs = np.array([[0.5, 0.5 + 5e-5], [0.25, 0.75]], dtype="<f4")
    ps = PredictionSet(probs=probs, labels=np.zeros(2, dtype="<u4"))
    check_prediction_set(ps, 2, "ok")


def test_check_rejects_probability_outside_unit_interval():
    probs = np.array([[1.2, -0.2]], dtype="<f4")
    ps = PredictionSet(probs=probs, labels=np.zeros(1, dtype="<u4"))
    with pytest.raises(PoolFormatError, match=r"outside \[0, 1\]"):
        check_prediction_set(ps, 2, "bad")


def test_check_rejects_label_out_of_range():
    probs = np.full((2, 2), 0.5, dtype="<f4")
    ps = PredictionSet(probs=probs, labels=np.array([0, 5], dtype="<u4"))
    with pytest.raises(PoolFormatError, match="label 5 at row 1"):
        check_prediction_set(ps, 2, "bad")


def test_check_rejects_class_count_mismatch():
    probs = np.full((2, 3), 1 / 3, dtype="<f4")
    ps = PredictionSet(probs=probs, labels=np.zeros(2, dtype="<u4"))
    with pytest.raises(PoolFormatError, match="classes"):
        check_prediction_set(ps, 4, "bad")


def test_write_then_load_round_trips(tmp_path, pool3):
    manifest = write_pool(pool3, tmp_path)
    loaded = load_pool(manifest)
    assert loaded == pool3


def test_load_pool_reports_missing_manifest(tmp_path):
    with pytest.raises(PoolFormatError, match="not found"):
        load_pool(tmp_path / "missing.json")


def test_load_pool_rejects_duplicate_model_id(tmp_path, pool3):
    manifest = write_pool(pool3, tmp_path)
    data = json.loads(manifest.read_text())
    data["models"][1]["id"] = data["models"][0]["id"]
    manifest.write_text(json.dumps(data))
    with pytest.raises(PoolFormatError, match="duplicate model id"):
        load_pool(manifest)


def test_load_pool_rejects_missing_platform_latency(tmp_path, pool3):
    manifest = write_pool(pool3, tmp_path)
    data = json.loads(manifest.read_text())
    del data["models"][0]["latency"]["gpu"]
    manifest.write_text(json.dumps(data))
    with pytest.raises(PoolFormatError, match="missing latency for platform 'gpu'"):
        load_pool(manifest)


def test_load_pool_rejects_nonpositive_latency(tmp_path, pool3):
    manifest = write_pool(pool3, tmp_path)
    data = json.loads(manifest.read_text())
    data["models"][0]["latency"]["cpu"] = 0.0
    manifest.write_text(json.dumps(data))
    with pytest.raises(PoolFormatError, match="finite and positive"):
        load_pool(manifest)


def test_load_pool_rejects_label_mismatch_between_models(tmp_path, pool3):
    manifest = write_pool(pool3, tmp_path)
    data = json.loads(manifest.read_text())
    # give model 1 its own label file with one flipped entry
    labels = read_label_file(tmp_path / data["models"][1]["validation"]["labels_file"])
    labels = labels.copy()
    labels[0] = (labels[0] + 1) % pool3.n_classes
    write_label_file(tmp_path / "other.elbl", labels)
    data["models"][1]["validation"]["labels_file"] = "other.elbl"
    manifest.write_text(json.dumps(data))
    with pytest.raises(PoolFormatError, match="label vector differs"):
        load_pool(manifest)


def test_load_pool_rejects_sample_count_mismatch(tmp_path, pool3):
    manifest = write_pool(pool3, tmp_path)
    data = json.loads(manifest.read_text())
    probs_file = data["models"][1]["validation"]["probs_file"]
    probs = read_prediction_file(tmp_path / probs_file)
    write_prediction_file(tmp_path / probs_file, probs[:-1])
    with pytest.raises(PoolFormatError):
        load_pool(manifest)


def test_load_pool_rejects_manifest_class_mismatch(tmp_path, pool3):
    manifest = write_pool(pool3, tmp_path)
    data = json.loads(manifest.read_text())
    data["n_classes"] = pool3.n_classes + 1
    manifest.write_text(json.dumps(data))
    with pytest.raises(PoolFormatError, match="manifest says"):
        load_pool(manifest)


# ---------------------------------------------------------------------------
# synthetic pools


def test_synth_pool_is_deterministic(tmp_path):
    a = synth_pool(8, 500, 10, seed=1)
    b = synth_pool(8, 500, 10, seed=1)
    assert a == b
    # and byte-identical on disk
    write_pool(a, tmp_path / "a")
    write_pool(b, tmp_path / "b")
    for name in sorted(p.name for p in (tmp_path / "a").iterdir()):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_synth_pool_seeds_differ():
    assert synth_pool(4, 100, 3, seed=1) != synth_pool(4, 100, 3, seed=2)


def test_synth_pool_has_nondominated_pair():
    pool = synth_pool(6, 200, 5, seed=3)
    stats = []
    for m in pool.models:
        preds = m.validation.probs.astype(np.float64).argmax(axis=1)
        err = float(np.mean(preds != m.validation.labels.astype(np.int64)))
        stats.append((err, m.param_count))
    found = any(
        (stats[i][0] < stats[j][0] and stats[i][1] > stats[j][1])
        or (stats[j][0] < stats[i][0] and stats[j][1] > stats[i][1])
        for i in range(len(stats))
        for j in range(i + 1, len(stats))
    )
    assert found


def test_synth_pool_rows_validate():
    pool = synth_pool(3, 64, 4, seed=9)
    for m in pool.models:
        for split in ("validation", "test"):
            check_prediction_set(m.split(split), pool.n_classes, m.model_id)


def test_synth_pool_single_model():
    pool = synth_pool(1, 50, 2, seed=0)
    assert len(pool) == 1


def test_synth_pool_rejects_bad_arguments():
    with pytest.raises(ValueError):
        synth_pool(0, 100, 3, seed=0)
    with pytest.raises(ValueError):
        synth_pool(2, 100, 1, seed=0)
    with pytest.raises(ValueError):
        synth_pool(2, 2, 3, seed=0)


# ---------------------------------------------------------------------------
# stratified split


def _prediction_set(labels):
    labels = np.asarray(labels, dtype="<u4")
    n_classes = int(labels.max()) + 1 if labels.size else 2
    n_classes = max(n_classes, 2)
    rng = np.random.default_rng(7)
    probs = rng.random((labels.shape[0], n_classes))
    probs /= probs.sum(axis=1, keepdims=True)
    return PredictionSet(probs=probs.astype("<f4"), labels=labels)


def test_split_halves_partition_the_input():
    ps = _prediction_set([0, 0, 1, 1, 2, 2, 2, 0, 1, 2])
    first, second = stratified_half_split(ps, seed=4)
    assert first.n_samples + second.n_samples == ps.n_samples
    joined = np.concatenate([first.labels, second.labels])
    assert sorted(joined.tolist()) == sorted(ps.labels.tolist())


def test_split_balances_every_class():
    ps = _prediction_set([0] * 10 + [1] * 7 + [2] * 4)
    first, second = stratified_half_split(ps, seed=0)
    for cls, total in ((0, 10), (1, 7), (2, 4)):
        a = int(np.sum(first.labels == cls))
        b = int(np.sum(second.labels == cls))
        assert a + b == total
        assert a == (total + 1) // 2  # first half gets the odd sample


def test_split_is_deterministic_and_seed_sensitive():
    ps = _prediction_set([0, 1] * 20)
    a1, b1 = stratified_half_split(ps, seed=5)
    a2, b2 = stratified_half_split(ps, seed=5)
    assert a1 == a2 and b1 == b2
    a3, _ = stratified_half_split(ps, seed=6)
    assert a1 != a3  # different shuffle picks different rows


def test_split_keeps_rows_aligned_with_labels():
    ps = _prediction_set([0, 1, 0, 1, 0, 1])
    first, _second = stratified_half_split(ps, seed=1)
    # each output row must be one of the original rows with its own label
    for i in range(first.n_samples):
        matches = np.where((ps.probs == first.probs[i]).all(axis=1))[0]
        assert any(ps.labels[j] == first.labels[i] for j in matches)


def test_split_rejects_class_with_one_sample():
    ps = _prediction_set([0, 0, 1])
    with pytest.raises(PoolFormatError, match="class 1"):
        stratified_half_split(ps, seed=0)


@settings(max_examples=40, deadline=None)
@given(
    counts=st.lists(st.integers(min_value=2, max_value=9), min_size=2, max_size=5),
    seed=st.integers(min_value=0, max_value=2**31 - 1),
)
def test_split_class_counts_property(counts, seed):
    labels = np.concatenate([np.full(c, i) for i, c in enumerate(counts)])
    ps = _prediction_set(labels)
    first, second = stratified_half_split(ps, seed=seed)
    for i, c in enumerate(counts):
        a = int(np.sum(first.labels == i))
        assert a == (c + 1) // 2
        assert a + int(np.sum(second.labels == i)) == c
    # rows keep ascending original order within each half
    for half in (first, second):
        positions = [
            int(np.where((ps.probs == half.probs[i]).all(axis=1))[0][0])
            for i in range(half.n_samples)
        ]
        assert positions == sorted(positions)


# ---------------------------------------------------------------------------
# CSV import


def test_csv_import_round_trip(tmp_path):
    probs = np.array([[0.7, 0.2, 0.1], [0.1, 0.1, 0.8]])
    labels = np.array([0, 2])
    probs_path = tmp_path / "p.csv"
    labels_path = tmp_path / "l.csv"
    np.savetxt(probs_path, probs, delimiter=",")
    np.savetxt(labels_path, labels, fmt="%d")
    ps = prediction_set_from_csv(probs_path, labels_path)
    assert ps.n_samples == 2 and ps.n_classes == 3
    assert np.allclose(ps.probs, probs.astype("<f4"))
    assert np.array_equal(ps.labels, labels.astype("<u4"))


def test_csv_import_rejects_negative_labels(tmp_path):
    np.savetxt(tmp_path / "p.csv", np.full((1, 2), 0.5), delimiter=",")
    (tmp_path / "l.csv").write_text("-1\n")
    with pytest.raises(PoolFormatError, match="negative"):
        prediction_set_from_csv(tmp_path / "p.csv", tmp_path / "l.csv")
