import json
import logging
import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .core import (
    AnomalySpec,
    CorruptDatasetError,
    Dataset,
    DatasetMeta,
    InstanceParams,
    InvalidParameterError,
    ShapeMismatchError,
    SignalInstance,
)
from .rng import STREAM_SPLIT, SeededRng, permutation

logger = logging.getLogger(__name__)

DATA_FILE = "data.bin"
MANIFEST_FILE = "manifest.jsonl"
CSV_FILE = "instances.csv"
NORM_EPS = 1e-8

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK_64 = (1 << 64) - 1

PathLike = Union[str, os.PathLike]


def fnv1a64(chunks: Iterable[bytes]) -> int:
    """
    FNV-1a over 64-bit little-endian words.

    Each chunk is zero-padded to a multiple of 8 bytes and folded word by word.
    Corruption guard only, not a cryptographic hash.
    """
    h = _FNV_OFFSET
    for chunk in chunks:
        pad = (-len(chunk)) % 8
        words = np.frombuffer(chunk + b"\x00" * pad, dtype="<u8")
        for word in words.tolist():
            h = ((h ^ word) * _FNV_PRIME) & _MASK_64
    return h


def _record(instance: SignalInstance) -> Dict:
    return {
        "id": instance.instance_id,
        "stage": instance.stage,
        "label": instance.label,
        "anomaly": None if instance.anomaly is None else instance.anomaly.to_dict(),
        "params": instance.params.to_dict(),
    }


def _canonical(record: Dict) -> bytes:
    return json.dumps(record, sort_keys=True, separators=(",", ":")).encode("utf-8")


def content_hash(data_bytes: bytes, records: Sequence[Dict]) -> str:
    digest = fnv1a64([data_bytes, *(_canonical(r) for r in records)])
    return f"{digest:#018x}"


def dataset_hash(dataset: Dataset) -> str:
    """Content hash of a dataset as it would be written by :func:`save`."""
    data = dataset.windows().astype("<f8").tobytes()
    return content_hash(data, [_record(inst) for inst in dataset.instances])


def save(dataset: Dataset, directory: PathLike) -> Path:
    """
    Write ``data.bin`` (little-endian float64, [instance][channel][sample]) and
    ``manifest.jsonl`` (header record followed by one record per instance).

    Returns:
        Path of the manifest file
    """
    out_dir = Path(directory)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        windows = dataset.windows().astype("<f8")
        data_bytes = windows.tobytes()
        records = [_record(inst) for inst in dataset.instances]
        header = {
            "header": True,
            "meta": dataset.meta.to_dict(),
            "shape": list(windows.shape),
            "hash": content_hash(data_bytes, records),
        }

        (out_dir / DATA_FILE).write_bytes(data_bytes)
        manifest_path = out_dir / MANIFEST_FILE
        with open(manifest_path, "w", encoding="utf-8") as f:
            f.write(json.dumps(header) + "\n")
            for record in records:
                f.write(json.dumps(record) + "\n")

        logger.info(f"Saved {len(dataset)} instances to {out_dir} (hash {header['hash']})")
        return manifest_path

    except OSError as e:
        logger.error(f"Error saving dataset to {out_dir}: {str(e)}")
        raise OSError(f"Could not write dataset to {out_dir}: {e}") from e


def load(directory: PathLike) -> Dataset:
    """
    Load a dataset written by :func:`save`.

    Raises:
        FileNotFoundError: If the data or manifest file is missing
        ShapeMismatchError: If the data file does not match the recorded shape
        CorruptDatasetError: If the content hash does not match or the manifest is empty
    """
    in_dir = Path(directory)
    data_path = in_dir / DATA_FILE
    manifest_path = in_dir / MANIFEST_FILE
    for path in (data_path, manifest_path):
        if not path.exists():
            raise FileNotFoundError(f"Missing dataset file: {path}")

    with open(manifest_path, encoding="utf-8") as f:
        lines = [line for line in f if line.strip()]
    if not lines:
        raise CorruptDatasetError(f"{manifest_path}: empty manifest")
    header = json.loads(lines[0])
    records = [json.loads(line) for line in lines[1:]]
    shape = tuple(header["shape"])

    data_bytes = data_path.read_bytes()
    expected = int(np.prod(shape)) * 8
    if len(data_bytes) != expected or len(records) != shape[0]:
        raise ShapeMismatchError(
            f"{data_path}: expected {expected} bytes for shape {shape} and {shape[0]} records, "
            f"found {len(data_bytes)} bytes and {len(records)} records"
        )

    actual = content_hash(data_bytes, records)
    if actual != header["hash"]:
        raise CorruptDatasetError(
            f"{in_dir}: content hash {actual} does not match header {header['hash']}"
        )

    windows = np.frombuffer(data_bytes, dtype="<f8").reshape(shape).astype(np.float64)
    instances = [
        SignalInstance(
            data=windows[i].copy(),
            params=InstanceParams.from_dict(record["params"]),
            stage=int(record["stage"]),
            instance_id=int(record["id"]),
            anomaly=None if record["anomaly"] is None else AnomalySpec.from_dict(record["anomaly"]),
        )
        for i, record in enumerate(records)
    ]
    meta = DatasetMeta(**header["meta"])
    logger.info(f"Loaded {len(instances)} instances from {in_dir}")
    return Dataset(instances=instances, meta=meta)


def export_csv(dataset: Dataset, path: PathLike) -> Path:
    """One row per (instance, channel) with the samples as columns."""
    windows = dataset.windows()
    n, n_channels, n_samples = windows.shape
    frame = pd.DataFrame(
        windows.reshape(n * n_channels, n_samples),
        columns=[f"s{j:03d}" for j in range(n_samples)],
    )
    frame.insert(0, "channel", np.tile(np.arange(n_channels), n))
    frame.insert(0, "label", np.repeat(dataset.labels(), n_channels))
    frame.insert(0, "instance_id", np.repeat([inst.instance_id for inst in dataset], n_channels))
    out = Path(path)
    frame.to_csv(out, index=False)
    logger.info(f"Exported CSV to {out}")
    return out


def split(
    dataset: Union[Dataset, Sequence[SignalInstance]],
    train_fraction: float,
    seed: int,
) -> Tuple[List[SignalInstance], List[SignalInstance]]:
    """
    Deterministic shuffled train/test split.

    Returns:
        (train, test) instance lists; disjoint and together exhaustive
    """
    if not 0.0 < train_fraction < 1.0:
        raise InvalidParameterError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    instances = list(dataset)
    order = permutation(SeededRng(seed, STREAM_SPLIT), len(instances))
    n_train = int(round(train_fraction * len(instances)))
    train = [instances[i] for i in order[:n_train]]
    test = [instances[i] for i in order[n_train:]]
    return train, test


@dataclass(frozen=True)
class NormStats:
    """Per-channel mean and std over a training split. ``std`` already carries the epsilon guard."""
    mean: np.ndarray
    std: np.ndarray

    def to_dict(self) -> Dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, record: Dict) -> "NormStats":
        return cls(mean=np.asarray(record["mean"], dtype=np.float64),
                   std=np.asarray(record["std"], dtype=np.float64))


def norm_stats(train: Iterable[SignalInstance]) -> NormStats:
    instances = list(train)
    if not instances:
        raise InvalidParameterError("Cannot compute normalization stats of an empty split")
    windows = np.stack([inst.data for inst in instances])
    return NormStats(
        mean=windows.mean(axis=(0, 2)),
        std=windows.std(axis=(0, 2)) + NORM_EPS,
    )


def normalize_windows(windows: np.ndarray, stats: NormStats) -> np.ndarray:
    """Z-score an array of shape (..., n_channels, n_samples)."""
    return (windows - stats.mean[:, None]) / stats.std[:, None]


def apply_norm(instance: SignalInstance, stats: NormStats) -> SignalInstance:
    return replace(instance, data=normalize_windows(instance.data, stats))
