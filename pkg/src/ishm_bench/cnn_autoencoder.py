"""
Convolutional autoencoder comparator: a two-layer strided 1-D conv encoder and
a mirrored transposed-conv decoder, scored by reconstruction error.
"""
import logging
from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np

from .core import EmptyTrainingSetError, InvalidConfigError, ShapeMismatchError, SignalInstance
from .dataset_io import NormStats, norm_stats, normalize_windows
from .models import TrainingHistory, _batches, _init_uniform, fit_reconstruction
from .numerics import Tensor, conv1d, conv_transpose1d, parameter, relu, reshape
from .rng import SeededRng

logger = logging.getLogger(__name__)

STREAM_INIT = 0xC44E


@dataclass
class CnnAEConfig:
    hidden_channels: int = 16
    latent_channels: int = 32
    outer_kernel: int = 4
    inner_kernel: int = 3
    stride: int = 2
    epochs: int = 30
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        for name in ("hidden_channels", "latent_channels", "outer_kernel", "inner_kernel",
                     "stride", "epochs", "batch_size"):
            if getattr(self, name) < 1:
                raise InvalidConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.lr <= 0:
            raise InvalidConfigError(f"Learning rate must be positive, got {self.lr}")


def _conv_len(length: int, kernel: int, stride: int) -> int:
    return (length - kernel) // stride + 1


def _deconv_len(length: int, kernel: int, stride: int) -> int:
    return (length - 1) * stride + kernel


class CnnAutoencoder:
    kind = "cnnae"

    def __init__(
        self,
        cfg: CnnAEConfig,
        n_channels: int,
        n_samples: int = 200,
        stats: Optional[NormStats] = None,
        params: Optional[Dict[str, Tensor]] = None,
    ):
        encoded = _conv_len(_conv_len(n_samples, cfg.outer_kernel, cfg.stride), cfg.inner_kernel, cfg.stride)
        restored = _deconv_len(_deconv_len(encoded, cfg.inner_kernel, cfg.stride), cfg.outer_kernel, cfg.stride)
        if encoded < 1 or restored != n_samples:
            raise InvalidConfigError(
                f"Kernels {cfg.outer_kernel}/{cfg.inner_kernel} with stride {cfg.stride} "
                f"do not reconstruct {n_samples} samples (decoder gives {restored})"
            )
        self.cfg = cfg
        self.n_channels = n_channels
        self.n_samples = n_samples
        self.stats = stats
        self.history: Optional[TrainingHistory] = None
        self.params = params if params is not None else self._init_params()

    def _init_params(self) -> Dict[str, Tensor]:
        cfg = self.cfg
        rng = SeededRng(cfg.seed, STREAM_INIT)
        c, h, z = self.n_channels, cfg.hidden_channels, cfg.latent_channels
        ko, ki = cfg.outer_kernel, cfg.inner_kernel
        raw = {
            "enc1.w": _init_uniform(rng, (h, c, ko), c * ko),
            "enc1.b": np.zeros(h),
            "enc2.w": _init_uniform(rng, (z, h, ki), h * ki),
            "enc2.b": np.zeros(z),
            "dec1.w": _init_uniform(rng, (z, h, ki), z * ki),
            "dec1.b": np.zeros(h),
            "dec2.w": _init_uniform(rng, (h, c, ko), h * ko),
            "dec2.b": np.zeros(c),
        }
        return {name: parameter(value, name) for name, value in raw.items()}

    def prepare(self, instances: Sequence[SignalInstance]) -> np.ndarray:
        if self.stats is None:
            raise InvalidConfigError("Model has no normalization stats; train it first")
        windows = np.stack([inst.data for inst in instances])
        if windows.shape[1:] != (self.n_channels, self.n_samples):
            raise ShapeMismatchError(
                f"Expected windows of shape ({self.n_channels}, {self.n_samples}), "
                f"got {windows.shape[1:]}"
            )
        return normalize_windows(windows, self.stats)

    def _bias(self, name: str) -> Tensor:
        b = self.params[name]
        return reshape(b, (1, b.shape[0], 1))

    def reconstruct(self, windows: np.ndarray) -> Tensor:
        s = self.cfg.stride
        p = self.params
        h = relu(conv1d(Tensor(windows), p["enc1.w"], s) + self._bias("enc1.b"))
        z = relu(conv1d(h, p["enc2.w"], s) + self._bias("enc2.b"))
        d = relu(conv_transpose1d(z, p["dec1.w"], s) + self._bias("dec1.b"))
        return conv_transpose1d(d, p["dec2.w"], s) + self._bias("dec2.b")


def cnn_ae_train(train_set: Sequence[SignalInstance], cfg: CnnAEConfig) -> CnnAutoencoder:
    instances = list(train_set)
    if not instances:
        raise EmptyTrainingSetError("Cannot train on an empty training set")
    try:
        n_channels, n_samples = instances[0].data.shape
        model = CnnAutoencoder(cfg, n_channels, n_samples, stats=norm_stats(instances))
        logger.info(f"Training CNN autoencoder on {len(instances)} instances ({n_channels} channels)")
        model.history = fit_reconstruction(
            model, model.prepare(instances), cfg.epochs, cfg.batch_size, cfg.lr, cfg.seed
        )
        return model

    except Exception as e:
        logger.error(f"Error training CNN autoencoder: {str(e)}")
        raise


def cnn_ae_scores(instances: Sequence[SignalInstance], model: CnnAutoencoder, batch_size: int = 32) -> np.ndarray:
    """Per-instance mean squared reconstruction error."""
    windows = model.prepare(instances)
    errors = []
    for part in _batches(len(windows), batch_size):
        diff = model.reconstruct(windows[part]).data - windows[part]
        errors.append((diff ** 2).mean(axis=(1, 2)))
    return np.concatenate(errors)


def cnn_ae_score(instance: SignalInstance, model: CnnAutoencoder) -> float:
    return float(cnn_ae_scores([instance], model)[0])
