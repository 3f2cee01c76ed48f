"""
Attention-focused transformer for window-level anomaly detection.

Input Attention -> Self-Attention Encoder -> MLP Decoder, trained on a
reconstruction objective. Anomaly scores come from how far an instance's
attention rows drift from the rows a normal reference set produces, with the
reconstruction error as a second signal.
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import (
    EmptyTrainingSetError,
    InvalidConfigError,
    ProfileMissingError,
    ShapeMismatchError,
    SignalInstance,
    sealed_labels,
)
from .dataset_io import NormStats, norm_stats, normalize_windows
from .numerics import (
    AdamState,
    Tape,
    Tensor,
    adam_step,
    backward,
    layer_norm,
    matmul,
    mse_loss,
    mul,
    parameter,
    relu,
    reshape,
    scale,
    softmax_rows,
    transpose,
)
from .rng import SeededRng, gaussian_array, permutation, uniform_array

logger = logging.getLogger(__name__)

STREAM_INIT = 0x1417
STREAM_SHUFFLE = 0x5A0F
STAT_EPS = 1e-8

# -------------------------------
# Configuration and records
# -------------------------------


@dataclass
class AttnTransformerConfig:
    patch_len: int = 10
    d_model: int = 32
    n_heads: int = 4
    n_layers: int = 2
    ffn_hidden: int = 64
    decoder_hidden: int = 128
    epochs: int = 30
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0
    min_profile_instances: int = 100

    def __post_init__(self):
        for name in ("patch_len", "d_model", "n_heads", "n_layers", "ffn_hidden",
                     "decoder_hidden", "epochs", "batch_size", "min_profile_instances"):
            if getattr(self, name) < 1:
                raise InvalidConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.d_model % self.n_heads != 0:
            raise InvalidConfigError(
                f"d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})"
            )
        if self.lr <= 0:
            raise InvalidConfigError(f"Learning rate must be positive, got {self.lr}")


class ScoreVariant(str, Enum):
    RECON = "recon"
    ATTN = "attn"
    COMBINED = "combined"


@dataclass(frozen=True)
class ScoreConfig:
    variant: ScoreVariant = ScoreVariant.ATTN
    alpha: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise InvalidConfigError(f"alpha must lie in [0, 1], got {self.alpha}")


@dataclass
class AttentionRecord:
    """Attention weights of every encoder layer and head, shape (batch, layers, heads, L, L)."""
    weights: np.ndarray

    def rows_valid(self, tol: float = 1e-9) -> bool:
        return bool(np.all(self.weights >= 0) and
                    np.all(np.abs(self.weights.sum(axis=-1) - 1.0) <= tol))


@dataclass
class AttentionProfile:
    """Reference attention rows over normal data plus score normalization stats."""
    mean_rows: np.ndarray  # (layers, heads, L, L)
    recon_mean: float
    recon_std: float
    attn_mean: float
    attn_std: float
    n_reference: int

    def __post_init__(self):
        if np.any(self.mean_rows < 0) or np.any(np.abs(self.mean_rows.sum(axis=-1) - 1.0) > 1e-9):
            raise InvalidConfigError("Profile reference rows must be probability distributions")


@dataclass
class TrainingHistory:
    initial_loss: float
    epoch_losses: List[float] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.epoch_losses[-1] if self.epoch_losses else self.initial_loss


@dataclass
class ForwardOutput:
    reconstruction: Tensor
    attention: AttentionRecord
    saliency: np.ndarray  # (batch, L)


@dataclass(frozen=True)
class Localization:
    token: int
    divergence: float
    t_start: float
    t_end: float


def _init_uniform(rng: SeededRng, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return uniform_array(rng, -bound, bound, int(np.prod(shape))).reshape(shape)


# -------------------------------
# Model
# -------------------------------


class AttentionTransformer:
    """Patch tokens -> input attention -> pre-norm encoder -> per-token MLP decoder."""

    kind = "attn"

    def __init__(
        self,
        cfg: AttnTransformerConfig,
        n_channels: int,
        n_samples: int = 200,
        stats: Optional[NormStats] = None,
        params: Optional[Dict[str, Tensor]] = None,
    ):
        if n_samples % cfg.patch_len != 0:
            raise InvalidConfigError(
                f"patch_len {cfg.patch_len} does not divide the window length {n_samples}"
            )
        self.cfg = cfg
        self.n_channels = n_channels
        self.n_samples = n_samples
        self.n_tokens = n_samples // cfg.patch_len
        self.stats = stats
        self.history: Optional[TrainingHistory] = None
        self.params = params if params is not None else self._init_params()

    @property
    def patch_width(self) -> int:
        return self.cfg.patch_len * self.n_channels

    def _init_params(self) -> Dict[str, Tensor]:
        cfg = self.cfg
        rng = SeededRng(cfg.seed, STREAM_INIT)
        d, width = cfg.d_model, self.patch_width
        raw = {
            "embed.w": _init_uniform(rng, (width, d), width),
            "embed.b": np.zeros(d),
            "embed.pos": 0.1 * gaussian_array(rng, 0.0, 1.0, self.n_tokens * d).reshape(self.n_tokens, d),
            "input_attn.v": np.zeros(d),
        }
        for layer in range(cfg.n_layers):
            p = f"enc{layer}."
            raw.update({
                p + "ln1.g": np.ones(d), p + "ln1.b": np.zeros(d),
                p + "wq": _init_uniform(rng, (d, d), d),
                p + "wk": _init_uniform(rng, (d, d), d),
                p + "wv": _init_uniform(rng, (d, d), d),
                p + "wo": _init_uniform(rng, (d, d), d),
                p + "bo": np.zeros(d),
                p + "ln2.g": np.ones(d), p + "ln2.b": np.zeros(d),
                p + "ffn.w1": _init_uniform(rng, (d, cfg.ffn_hidden), d),
                p + "ffn.b1": np.zeros(cfg.ffn_hidden),
                p + "ffn.w2": _init_uniform(rng, (cfg.ffn_hidden, d), cfg.ffn_hidden),
                p + "ffn.b2": np.zeros(d),
            })
        raw.update({
            "enc.ln_f.g": np.ones(d), "enc.ln_f.b": np.zeros(d),
            "dec.w1": _init_uniform(rng, (d, cfg.decoder_hidden), d),
            "dec.b1": np.zeros(cfg.decoder_hidden),
            "dec.w2": _init_uniform(rng, (cfg.decoder_hidden, width), cfg.decoder_hidden),
            "dec.b2": np.zeros(width),
        })
        return {name: parameter(value, name) for name, value in raw.items()}

    def prepare(self, instances: Sequence[SignalInstance]) -> np.ndarray:
        """Normalized windows, shape (batch, n_channels, n_samples)."""
        if self.stats is None:
            raise InvalidConfigError("Model has no normalization stats; train it first")
        windows = np.stack([inst.data for inst in instances])
        if windows.shape[1:] != (self.n_channels, self.n_samples):
            raise ShapeMismatchError(
                f"Expected windows of shape ({self.n_channels}, {self.n_samples}), "
                f"got {windows.shape[1:]}"
            )
        return normalize_windows(windows, self.stats)

    def embed_patches(self, windows: np.ndarray) -> Tensor:
        """
        Split each window into non-overlapping patches and project them to d_model.

        Each token is the concatenation of the same patch across channels.
        """
        batch = windows.shape[0]
        patches = (
            windows.reshape(batch, self.n_channels, self.n_tokens, self.cfg.patch_len)
            .transpose(0, 2, 1, 3)
            .reshape(batch, self.n_tokens, self.patch_width)
        )
        p = self.params
        return matmul(Tensor(patches), p["embed.w"]) + p["embed.b"] + p["embed.pos"]

    def input_attention(self, tokens: Tensor) -> Tuple[Tensor, Tensor]:
        """
        Weigh tokens by a softmax saliency over positions.

        Tokens are scaled by ``L * saliency`` so uniform saliency leaves them unchanged.
        """
        batch, length, d = tokens.shape
        logits = reshape(matmul(tokens, reshape(self.params["input_attn.v"], (d, 1))), (batch, length))
        saliency = softmax_rows(logits)
        weights = scale(reshape(saliency, (batch, length, 1)), float(length))
        return mul(tokens, weights), saliency

    def _self_attention(self, x: Tensor, layer: int) -> Tuple[Tensor, np.ndarray]:
        p = self.params
        prefix = f"enc{layer}."
        batch, length, d = x.shape
        heads = self.cfg.n_heads
        head_dim = d // heads

        def split_heads(t: Tensor) -> Tensor:
            return transpose(reshape(t, (batch, length, heads, head_dim)), (0, 2, 1, 3))

        q = split_heads(matmul(x, p[prefix + "wq"]))
        k = split_heads(matmul(x, p[prefix + "wk"]))
        v = split_heads(matmul(x, p[prefix + "wv"]))
        attn = softmax_rows(scale(matmul(q, transpose(k)), 1.0 / math.sqrt(head_dim)))
        context = reshape(transpose(matmul(attn, v), (0, 2, 1, 3)), (batch, length, d))
        return matmul(context, p[prefix + "wo"]) + p[prefix + "bo"], attn.data

    def encoder_forward(self, tokens: Tensor) -> Tuple[Tensor, AttentionRecord]:
        p = self.params
        x = tokens
        maps = []
        for layer in range(self.cfg.n_layers):
            prefix = f"enc{layer}."
            attended, weights = self._self_attention(
                layer_norm(x, p[prefix + "ln1.g"], p[prefix + "ln1.b"]), layer
            )
            maps.append(weights)
            x = x + attended
            h = layer_norm(x, p[prefix + "ln2.g"], p[prefix + "ln2.b"])
            h = matmul(relu(matmul(h, p[prefix + "ffn.w1"]) + p[prefix + "ffn.b1"]), p[prefix + "ffn.w2"])
            x = x + h + p[prefix + "ffn.b2"]
        encoded = layer_norm(x, p["enc.ln_f.g"], p["enc.ln_f.b"])
        return encoded, AttentionRecord(weights=np.stack(maps, axis=1))

    def decoder_forward(self, encoded: Tensor) -> Tensor:
        """Per-token MLP back to patch values, unfolded to (batch, n_channels, n_samples)."""
        p = self.params
        batch = encoded.shape[0]
        hidden = relu(matmul(encoded, p["dec.w1"]) + p["dec.b1"])
        patches = matmul(hidden, p["dec.w2"]) + p["dec.b2"]
        unfolded = transpose(
            reshape(patches, (batch, self.n_tokens, self.n_channels, self.cfg.patch_len)),
            (0, 2, 1, 3),
        )
        return reshape(unfolded, (batch, self.n_channels, self.n_samples))

    def forward(self, windows: np.ndarray) -> ForwardOutput:
        tokens = self.embed_patches(windows)
        weighted, saliency = self.input_attention(tokens)
        encoded, record = self.encoder_forward(weighted)
        return ForwardOutput(self.decoder_forward(encoded), record, saliency.data)

    def reconstruct(self, windows: np.ndarray) -> Tensor:
        return self.forward(windows).reconstruction


# -------------------------------
# Training
# -------------------------------

LossHook = Callable[[int, np.ndarray], None]


def _batches(n: int, batch_size: int) -> List[slice]:
    return [slice(lo, min(lo + batch_size, n)) for lo in range(0, n, batch_size)]


def mean_reconstruction_loss(model, windows: np.ndarray, batch_size: int = 256) -> float:
    total = 0.0
    for part in _batches(len(windows), batch_size):
        recon = model.reconstruct(windows[part]).data
        total += float(((recon - windows[part]) ** 2).sum())
    return total / windows.size


def fit_reconstruction(
    model,
    windows: np.ndarray,
    epochs: int,
    batch_size: int,
    lr: float,
    seed: int,
    loss_hook: Optional[LossHook] = None,
) -> TrainingHistory:
    """
    Minimize mean reconstruction MSE with Adam over seed-shuffled mini-batches.

    Only window arrays reach the loss; labels are sealed for the whole loop.

    Args:
        model: Object with ``params`` and ``reconstruct(windows) -> Tensor``
        windows: Normalized training windows (n, n_channels, n_samples)
        loss_hook: Called with (epoch, batch windows) right before each loss evaluation
    """
    history = TrainingHistory(initial_loss=mean_reconstruction_loss(model, windows))
    state = AdamState(lr=lr)
    shuffle_rng = SeededRng(seed, STREAM_SHUFFLE)

    with sealed_labels():
        for epoch in range(epochs):
            order = permutation(shuffle_rng, len(windows))
            epoch_total = 0.0
            for part in _batches(len(windows), batch_size):
                batch = windows[order[part]]
                if loss_hook is not None:
                    loss_hook(epoch, batch)
                with Tape() as tape:
                    loss = mse_loss(model.reconstruct(batch), batch)
                grads = backward(tape, loss)
                model.params = adam_step(model.params, grads.for_params(model.params), state)
                epoch_total += loss.item() * len(batch)
                logger.debug(f"Epoch {epoch} batch loss {loss.item():.6f}")
            history.epoch_losses.append(epoch_total / len(windows))
            logger.info(f"Epoch {epoch + 1}/{epochs}: train MSE {history.epoch_losses[-1]:.6f}")
    return history


def train(
    train_set: Sequence[SignalInstance],
    cfg: AttnTransformerConfig,
    loss_hook: Optional[LossHook] = None,
) -> Tuple[AttentionTransformer, AttentionProfile]:
    """
    Train the transformer on mixed normal/anomalous data, then estimate the
    attention profile on the normal-labeled part of the same training set.

    Raises:
        EmptyTrainingSetError: If train_set is empty
    """
    instances = list(train_set)
    if not instances:
        raise EmptyTrainingSetError("Cannot train on an empty training set")
    try:
        stats = norm_stats(instances)
        n_channels, n_samples = instances[0].data.shape
        model = AttentionTransformer(cfg, n_channels, n_samples, stats=stats)
        windows = model.prepare(instances)
        logger.info(
            f"Training attention transformer on {len(instances)} instances "
            f"({n_channels} channels, {model.n_tokens} tokens)"
        )
        model.history = fit_reconstruction(
            model, windows, cfg.epochs, cfg.batch_size, cfg.lr, cfg.seed, loss_hook
        )
        reference = [inst for inst in instances if not inst.label]
        profile = estimate_profile(model, reference, cfg.min_profile_instances)
        return model, profile

    except Exception as e:
        logger.error(f"Error training attention transformer: {str(e)}")
        raise


# -------------------------------
# Scoring
# -------------------------------


def js_divergence(p: np.ndarray, q: np.ndarray, axis: int = -1) -> np.ndarray:
    """Jensen-Shannon divergence (natural log) between distributions along ``axis``."""
    m = 0.5 * (p + q)

    def kl(a: np.ndarray) -> np.ndarray:
        ratio = np.where(a > 0, a, 1.0) / np.where(m > 0, m, 1.0)
        return np.where(a > 0, a * np.log(ratio), 0.0).sum(axis=axis)

    return np.maximum(0.5 * kl(p) + 0.5 * kl(q), 0.0)


def _inference(model: AttentionTransformer, instances: Sequence[SignalInstance], batch_size: int):
    """Per-instance reconstruction MSE and attention weights."""
    windows = model.prepare(instances)
    recon_errors, attention = [], []
    for part in _batches(len(windows), batch_size):
        out = model.forward(windows[part])
        diff = out.reconstruction.data - windows[part]
        recon_errors.append((diff ** 2).mean(axis=(1, 2)))
        attention.append(out.attention.weights)
    return np.concatenate(recon_errors), np.concatenate(attention)


def _row_divergence(attention: np.ndarray, profile: AttentionProfile) -> np.ndarray:
    """JS divergence per query row, averaged over layers and heads: (batch, L)."""
    divergence = js_divergence(attention, profile.mean_rows[None])
    return divergence.mean(axis=(1, 2))


def estimate_profile(
    model: AttentionTransformer,
    reference: Sequence[SignalInstance],
    min_instances: int = 100,
    batch_size: int = 64,
) -> AttentionProfile:
    """
    Mean attention rows over a normal reference set, plus mean/std of both
    score components on that set.
    """
    if len(reference) < min_instances:
        raise InvalidConfigError(
            f"Attention profile needs at least {min_instances} reference instances, got {len(reference)}"
        )
    recon, attention = _inference(model, reference, batch_size)
    mean_rows = attention.mean(axis=0)
    mean_rows = mean_rows / mean_rows.sum(axis=-1, keepdims=True)
    profile = AttentionProfile(
        mean_rows=mean_rows,
        recon_mean=float(recon.mean()),
        recon_std=float(recon.std()) + STAT_EPS,
        attn_mean=0.0,
        attn_std=1.0,
        n_reference=len(reference),
    )
    attn = _row_divergence(attention, profile).max(axis=1)
    profile.attn_mean = float(attn.mean())
    profile.attn_std = float(attn.std()) + STAT_EPS
    logger.info(f"Estimated attention profile from {len(reference)} normal instances")
    return profile


def anomaly_scores(
    instances: Sequence[SignalInstance],
    model: AttentionTransformer,
    profile: Optional[AttentionProfile],
    score_cfg: ScoreConfig,
    batch_size: int = 32,
) -> np.ndarray:
    """
    Scores for a batch of instances; higher means more anomalous.

    recon: mean squared reconstruction error.
    attn: JS divergence to the profile rows, mean over layers and heads, max over query rows.
    combined: alpha * z(attn) + (1 - alpha) * z(recon), z-scored with the profile stats.
    """
    if profile is None:
        raise ProfileMissingError("Scoring needs an attention profile; train or load one first")
    recon, attention = _inference(model, instances, batch_size)
    if score_cfg.variant == ScoreVariant.RECON:
        return recon
    attn = _row_divergence(attention, profile).max(axis=1)
    if score_cfg.variant == ScoreVariant.ATTN:
        return attn
    z_attn = (attn - profile.attn_mean) / profile.attn_std
    z_recon = (recon - profile.recon_mean) / profile.recon_std
    return score_cfg.alpha * z_attn + (1.0 - score_cfg.alpha) * z_recon


def anomaly_score(
    instance: SignalInstance,
    model: AttentionTransformer,
    profile: Optional[AttentionProfile],
    score_cfg: ScoreConfig,
) -> float:
    return float(anomaly_scores([instance], model, profile, score_cfg)[0])


def localize(
    instances: Sequence[SignalInstance],
    model: AttentionTransformer,
    profile: Optional[AttentionProfile],
    sample_rate_hz: float = 100.0,
    batch_size: int = 32,
) -> List[Localization]:
    """Token whose attention row deviates most from the profile, with its time window."""
    if profile is None:
        raise ProfileMissingError("Localization needs an attention profile")
    _, attention = _inference(model, instances, batch_size)
    divergence = _row_divergence(attention, profile)
    patch_seconds = model.cfg.patch_len / sample_rate_hz
    result = []
    for row in divergence:
        token = int(np.argmax(row))
        result.append(Localization(
            token=token,
            divergence=float(row[token]),
            t_start=token * patch_seconds,
            t_end=(token + 1) * patch_seconds,
        ))
    return result


