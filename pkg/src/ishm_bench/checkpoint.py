import json
import logging
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from .cnn_autoencoder import CnnAEConfig, CnnAutoencoder
from .core import CorruptDatasetError, InvalidConfigError
from .dataset_io import NormStats, PathLike
from .models import AttentionProfile, AttentionTransformer, AttnTransformerConfig, TrainingHistory
from .numerics import parameter

logger = logging.getLogger(__name__)

MODEL_FILE = "model.npz"
PROFILE_FILE = "profile.npz"
CHECKPOINT_VERSION = "ishm-bench-ckpt/1"
_META_KEY = "__meta__"

Model = Union[AttentionTransformer, CnnAutoencoder]

_MODEL_TYPES = {
    AttentionTransformer.kind: (AttentionTransformer, AttnTransformerConfig),
    CnnAutoencoder.kind: (CnnAutoencoder, CnnAEConfig),
}


def save_model(model: Model, directory: PathLike, profile: Optional[AttentionProfile] = None) -> Path:
    """
    Write ``model.npz``: a flat parameter table keyed by name plus a JSON
    ``__meta__`` entry (version tag, model kind, config echo, shapes, norm stats).
    The profile, when given, goes to ``profile.npz`` next to it; otherwise any
    older ``profile.npz`` there is removed.
    """
    out_dir = Path(directory)
    out_dir.mkdir(parents=True, exist_ok=True)
    meta = {
        "version": CHECKPOINT_VERSION,
        "kind": model.kind,
        "config": asdict(model.cfg),
        "n_channels": model.n_channels,
        "n_samples": model.n_samples,
        "stats": model.stats.to_dict() if model.stats is not None else None,
        "history": asdict(model.history) if model.history is not None else None,
    }
    arrays = {name: tensor.data for name, tensor in model.params.items()}
    arrays[_META_KEY] = np.array(json.dumps(meta))
    path = out_dir / MODEL_FILE
    np.savez(path, **arrays)

    if profile is not None:
        np.savez(
            out_dir / PROFILE_FILE,
            mean_rows=profile.mean_rows,
            stats=np.array([profile.recon_mean, profile.recon_std, profile.attn_mean, profile.attn_std]),
            n_reference=np.array(profile.n_reference),
        )
    else:
        (out_dir / PROFILE_FILE).unlink(missing_ok=True)
    logger.info(f"Saved {model.kind} checkpoint to {path}")
    return path


def load_model(directory: PathLike) -> Tuple[Model, Optional[AttentionProfile]]:
    """
    Raises:
        FileNotFoundError: If ``model.npz`` is missing
        CorruptDatasetError: If the checkpoint has no readable metadata
        InvalidConfigError: If the version tag or model kind is unknown
    """
    in_dir = Path(directory)
    path = in_dir / MODEL_FILE
    if not path.exists():
        raise FileNotFoundError(f"Missing checkpoint file: {path}")

    with np.load(path, allow_pickle=False) as archive:
        if _META_KEY not in archive.files:
            raise CorruptDatasetError(f"{path}: checkpoint has no metadata entry")
        meta = json.loads(str(archive[_META_KEY]))
        arrays = {name: archive[name] for name in archive.files if name != _META_KEY}

    if meta.get("version") != CHECKPOINT_VERSION:
        raise InvalidConfigError(f"{path}: unsupported checkpoint version {meta.get('version')!r}")
    if meta["kind"] not in _MODEL_TYPES:
        raise InvalidConfigError(f"{path}: unknown model kind {meta['kind']!r}")

    model_cls, cfg_cls = _MODEL_TYPES[meta["kind"]]
    model = model_cls(
        cfg_cls(**meta["config"]),
        meta["n_channels"],
        meta["n_samples"],
        stats=NormStats.from_dict(meta["stats"]) if meta["stats"] else None,
        params={name: parameter(value, name) for name, value in arrays.items()},
    )
    if meta.get("history"):
        model.history = TrainingHistory(**meta["history"])

    profile = None
    profile_path = in_dir / PROFILE_FILE
    if profile_path.exists():
        with np.load(profile_path, allow_pickle=False) as archive:
            recon_mean, recon_std, attn_mean, attn_std = archive["stats"].tolist()
            profile = AttentionProfile(
                mean_rows=archive["mean_rows"],
                recon_mean=recon_mean,
                recon_std=recon_std,
                attn_mean=attn_mean,
                attn_std=attn_std,
                n_reference=int(archive["n_reference"]),
            )
    logger.info(f"Loaded {model.kind} checkpoint from {path}")
    return model, profile
