import numpy as np
import pandas as pd
import pytest

from ishm_bench.core import CorruptDatasetError, InvalidParameterError, ShapeMismatchError
from ishm_bench.dataset_io import (
    DATA_FILE,
    MANIFEST_FILE,
    NormStats,
    apply_norm,
    dataset_hash,
    export_csv,
    fnv1a64,
    load,
    norm_stats,
    save,
    split,
)


def test_fnv1a64_known_values():
    """Empty input leaves the offset basis; padding makes short chunks full words"""
    assert fnv1a64([]) == 0xCBF29CE484222325
    assert fnv1a64([b"\x01"]) == fnv1a64([b"\x01\x00\x00\x00\x00\x00\x00\x00"])
    assert fnv1a64([b"a"]) != fnv1a64([b"b"])


def test_save_load_round_trip(tmp_path, stage1_dataset):
    save(stage1_dataset, tmp_path)
    loaded = load(tmp_path)
    assert np.array_equal(loaded.windows(), stage1_dataset.windows())
    assert np.array_equal(loaded.labels(), stage1_dataset.labels())
    assert loaded.meta == stage1_dataset.meta
    for a, b in zip(loaded, stage1_dataset):
        assert a.params == b.params
        assert a.anomaly == b.anomaly
    assert dataset_hash(loaded) == dataset_hash(stage1_dataset)


def test_data_file_layout(tmp_path, stage1_dataset):
    """data.bin is raw little-endian float64 in instance, channel, sample order"""
    save(stage1_dataset, tmp_path)
    raw = np.fromfile(tmp_path / DATA_FILE, dtype="<f8")
    assert raw.size == len(stage1_dataset) * 200
    assert np.array_equal(raw[:200], stage1_dataset.instances[0].data[0])


def test_corrupted_data_is_detected(tmp_path, stage1_dataset):
    save(stage1_dataset, tmp_path)
    path = tmp_path / DATA_FILE
    data = bytearray(path.read_bytes())
    data[123] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(CorruptDatasetError, match="hash"):
        load(tmp_path)


def test_edited_manifest_is_detected(tmp_path, stage1_dataset):
    save(stage1_dataset, tmp_path)
    path = tmp_path / MANIFEST_FILE
    lines = path.read_text().splitlines()
    lines[1] = lines[1].replace('"stage": 1', '"stage": 2')
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(CorruptDatasetError):
        load(tmp_path)


def test_empty_manifest_is_corrupt(tmp_path, stage1_dataset):
    save(stage1_dataset, tmp_path)
    (tmp_path / MANIFEST_FILE).write_text("\n")
    with pytest.raises(CorruptDatasetError, match="empty manifest"):
        load(tmp_path)


def test_truncated_data_file(tmp_path, stage1_dataset):
    save(stage1_dataset, tmp_path)
    path = tmp_path / DATA_FILE
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(ShapeMismatchError):
        load(tmp_path)


def test_missing_files(tmp_path):
    with pytest.raises(FileNotFoundError):
        load(tmp_path)


def test_export_csv(tmp_path, stage3_dataset):
    path = export_csv(stage3_dataset, tmp_path / "instances.csv")
    frame = pd.read_csv(path)
    assert len(frame) == len(stage3_dataset) * 2
    assert list(frame.columns[:3]) == ["instance_id", "label", "channel"]
    assert frame.shape[1] == 3 + 200
    assert np.allclose(frame.iloc[1, 3:].to_numpy(dtype=float), stage3_dataset.instances[0].data[1])


def test_split_is_disjoint_and_deterministic(stage1_dataset):
    train, test = split(stage1_dataset, 0.75, seed=5)
    assert len(train) == 45 and len(test) == 15
    train_ids = {inst.instance_id for inst in train}
    test_ids = {inst.instance_id for inst in test}
    assert not train_ids & test_ids
    assert train_ids | test_ids == set(range(60))
    again, _ = split(stage1_dataset, 0.75, seed=5)
    assert [inst.instance_id for inst in again] == [inst.instance_id for inst in train]


@pytest.mark.parametrize("fraction", [0.0, 1.0, -0.1, 1.5])
def test_split_rejects_bad_fraction(stage1_dataset, fraction):
    with pytest.raises(InvalidParameterError):
        split(stage1_dataset, fraction, seed=1)


def test_norm_stats(stage3_dataset):
    stats = norm_stats(stage3_dataset)
    assert stats.mean.shape == (2,) and stats.std.shape == (2,)
    normalized = np.stack([apply_norm(inst, stats).data for inst in stage3_dataset])
    assert np.allclose(normalized.mean(axis=(0, 2)), 0.0, atol=1e-10)
    assert np.allclose(normalized.std(axis=(0, 2)), 1.0, atol=1e-6)
    assert NormStats.from_dict(stats.to_dict()).mean.tolist() == stats.mean.tolist()


def test_norm_stats_of_empty_split():
    with pytest.raises(InvalidParameterError, match="empty split"):
        norm_stats([])
