import math
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass, field, asdict
from enum import Enum
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

GENERATOR_VERSION = "ishm-bench-gen/1"

# -------------------------------
# Errors
# -------------------------------


class BenchmarkError(Exception):
    """Base class for every error raised by the package."""


class InvalidDistributionError(BenchmarkError, ValueError):
    pass


class InvalidConfigError(BenchmarkError, ValueError):
    pass


class InvalidParameterError(BenchmarkError, ValueError):
    pass


class ShapeMismatchError(BenchmarkError, ValueError):
    pass


class CorruptDatasetError(BenchmarkError, ValueError):
    pass


class UndefinedAUCError(BenchmarkError, ValueError):
    pass


class NonScalarLossError(BenchmarkError, ValueError):
    pass


class NonFiniteError(BenchmarkError, FloatingPointError):
    pass


class ProfileMissingError(BenchmarkError, RuntimeError):
    pass


class EmptyTrainingSetError(BenchmarkError, ValueError):
    pass


class LabelLeakError(BenchmarkError, RuntimeError):
    """Raised when a label is read while labels are sealed (inside the loss path)."""


# -------------------------------
# Sensor groups and sampling ranges
# -------------------------------


class SensorGroup(str, Enum):
    AXLE = "Axle"
    BOGIE = "Bogie"
    BODY = "Body"


class AnomalyKind(str, Enum):
    SPIKE = "spike"
    LOCAL_DEVIATION = "local_deviation"


Range = Tuple[float, float]


@dataclass(frozen=True)
class GroupRanges:
    """Sampling intervals for one sensor group (stages 5-8)."""
    amplitude: Range = (0.5, 2.0)
    frequency: Range = (1.0, 15.0)
    noise_std: Range = (0.1, 0.5)
    hf_amplitude: Range = (0.5, 2.0)
    hf_frequency: Range = (25.0, 50.0)
    impulse_period: Range = (0.1, 0.3)
    impulse_amplitude: Range = (0.5, 2.0)

    def __post_init__(self):
        for name, (lo, hi) in asdict(self).items():
            if lo > hi:
                raise InvalidConfigError(f"Range {name} has lo > hi: ({lo}, {hi})")


BASE_RANGES = GroupRanges()

DEFAULT_GROUP_RANGES: Dict[SensorGroup, GroupRanges] = {
    SensorGroup.AXLE: GroupRanges(
        frequency=(1.0, 25.0),
        hf_amplitude=(0.5, 2.0), hf_frequency=(25.0, 50.0),
        impulse_period=(0.1, 0.3), impulse_amplitude=(0.5, 2.0),
    ),
    SensorGroup.BOGIE: GroupRanges(
        frequency=(1.0, 15.0),
        hf_amplitude=(0.3, 1.5), hf_frequency=(15.0, 40.0),
        impulse_period=(0.15, 0.3), impulse_amplitude=(0.3, 1.5),
    ),
    SensorGroup.BODY: GroupRanges(
        frequency=(1.0, 5.0),
        hf_amplitude=(0.2, 1.0), hf_frequency=(5.0, 30.0),
        impulse_period=(0.2, 0.5), impulse_amplitude=(0.2, 1.0),
    ),
}

# Ranges shared by every stage and group
CHANGE_TIME_RANGE: Range = (0.4, 1.6)
FREQ_FACTOR_RANGE: Range = (0.5, 1.5)
AMP_FACTOR_RANGE: Range = (0.5, 1.5)
PHASE_RANGE: Range = (0.0, 2.0 * math.pi)
NOISE_INCREASE_RANGE: Range = (0.1, 0.5)
NOISE_CHANGE_TIME_RANGE: Range = (0.4, 1.6)
HF_START_RANGE: Range = (0.4, 1.6)
HF_DURATION_RANGE: Range = (0.05, 0.2)
IMPULSE_WIDTH_RANGE: Range = (0.01, 0.1)
SPIKE_OFFSET_RANGE: Range = (2.0, 4.0)
LOCAL_OFFSET_RANGE: Range = (1.0, 2.0)
LOCAL_DURATION_RANGE: Range = (0.05, 0.2)

DEFAULT_CHANNEL_PROBS: Tuple[float, ...] = (0.30, 0.30, 0.15, 0.15, 0.05, 0.05)

STAGE_NAMES = {
    1: "Baseline",
    2: "Speed Variation",
    3: "2 Channels",
    4: "Larger Noise",
    5: "6 Channels",
    6: "Homogeneous P",
    7: "HF Local Noise",
    8: "Periodic Impulse",
}


def channel_group(channel: int) -> SensorGroup:
    """Channels 0-1 are axle boxes, 2-3 bogie frames, 4-5 car body."""
    if channel < 2:
        return SensorGroup.AXLE
    if channel < 4:
        return SensorGroup.BOGIE
    return SensorGroup.BODY


# -------------------------------
# Stage features and generator config
# -------------------------------


@dataclass(frozen=True)
class StageFeatures:
    """Feature flags switched on by a benchmark stage. Each stage adds to the previous one."""
    n_channels: int = 1
    speed_change: bool = False
    phase_offset: bool = False
    noise_shift: bool = False
    group_ranges: bool = False
    weighted_channels: bool = False
    hf_bursts: bool = False
    impulses: bool = False

    @classmethod
    def for_stage(cls, stage: int) -> "StageFeatures":
        if stage not in STAGE_NAMES:
            raise InvalidConfigError(f"Unknown stage: {stage} (expected 1-8)")
        return cls(
            n_channels=1 if stage <= 2 else 2 if stage <= 4 else 6,
            speed_change=stage >= 2,
            phase_offset=stage >= 3,
            noise_shift=stage >= 4,
            group_ranges=stage >= 5,
            weighted_channels=stage >= 6,
            hf_bursts=stage >= 7,
            impulses=stage >= 8,
        )


def count_random_variables(stage: int) -> int:
    """Number of random variables behind one instance of a stage (signal plus anomaly)."""
    features = StageFeatures.for_stage(stage)
    per_channel = 3  # A, f, sigma
    if features.speed_change:
        per_channel += 3
    if features.phase_offset:
        per_channel += 1
    if features.noise_shift:
        per_channel += 2
    if features.hf_bursts:
        per_channel += 5
    if features.impulses:
        per_channel += 3  # T, beta, omega (K follows from T)
    # occurrence, kind, time, offset, plus duration and channel where applicable
    anomaly = 5 + (1 if features.n_channels > 1 else 0)
    return per_channel * features.n_channels + anomaly


@dataclass
class GenConfig:
    """Configuration of the synthetic benchmark generator."""
    stage: int = 1
    sample_rate_hz: float = 100.0
    duration_s: float = 2.0
    anomaly_rate: float = 0.10
    spike_channel_probs: Tuple[float, ...] = DEFAULT_CHANNEL_PROBS
    localdev_channel_probs: Tuple[float, ...] = DEFAULT_CHANNEL_PROBS
    group_ranges: Dict[SensorGroup, GroupRanges] = field(
        default_factory=lambda: dict(DEFAULT_GROUP_RANGES)
    )
    features: Optional[StageFeatures] = None

    def __post_init__(self):
        if self.stage not in STAGE_NAMES:
            raise InvalidConfigError(f"Unknown stage: {self.stage} (expected 1-8)")
        if self.features is None:
            self.features = StageFeatures.for_stage(self.stage)
        if self.sample_rate_hz <= 0 or self.duration_s <= 0:
            raise InvalidConfigError("Sample rate and duration must be positive")
        samples = self.sample_rate_hz * self.duration_s
        if abs(samples - round(samples)) > 1e-9:
            raise InvalidConfigError(
                f"sample_rate_hz * duration_s must be a whole number of samples, got {samples}"
            )
        if not 0.0 <= self.anomaly_rate <= 1.0:
            raise InvalidConfigError(f"Anomaly rate must lie in [0, 1], got {self.anomaly_rate}")
        self.spike_channel_probs = tuple(float(p) for p in self.spike_channel_probs)
        self.localdev_channel_probs = tuple(float(p) for p in self.localdev_channel_probs)
        if self.features.weighted_channels:
            for name in ("spike_channel_probs", "localdev_channel_probs"):
                validate_probability_vector(getattr(self, name), self.n_channels, name)

    @property
    def n_channels(self) -> int:
        return self.features.n_channels

    @property
    def n_samples(self) -> int:
        return int(round(self.sample_rate_hz * self.duration_s))

    def ranges_for(self, channel: int) -> GroupRanges:
        if not self.features.group_ranges:
            return BASE_RANGES
        return self.group_ranges[channel_group(channel)]


def validate_probability_vector(probs: Sequence[float], n_channels: int, name: str) -> None:
    if len(probs) != n_channels:
        raise InvalidConfigError(f"{name} needs {n_channels} entries, got {len(probs)}")
    if any(p < 0 for p in probs):
        raise InvalidConfigError(f"{name} has negative entries")
    if abs(math.fsum(probs) - 1.0) > 1e-12:
        raise InvalidConfigError(f"{name} must sum to 1, got {math.fsum(probs)!r}")


# -------------------------------
# Instance parameters and anomalies
# -------------------------------


@dataclass(frozen=True)
class ChannelParams:
    """Sampled random variables of one channel. Fields a stage does not use keep their defaults."""
    amplitude: float
    frequency: float
    noise_std: float
    phase: float = 0.0
    t_change: Optional[float] = None
    freq_factor: float = 1.0
    amp_factor: float = 1.0
    noise_increase: float = 0.0
    t_noise_change: Optional[float] = None
    hf_start: Optional[float] = None
    hf_duration: Optional[float] = None
    hf_amplitude: float = 0.0
    hf_frequency: float = 0.0
    hf_phase: float = 0.0
    impulse_period: Optional[float] = None
    impulse_amplitude: float = 0.0
    impulse_width: Optional[float] = None
    impulse_count: int = 0

    @property
    def hf_end(self) -> Optional[float]:
        if self.hf_start is None or self.hf_duration is None:
            return None
        return self.hf_start + self.hf_duration

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class InstanceParams:
    stage: int
    channels: Tuple[ChannelParams, ...]

    def to_dict(self) -> Dict[str, Any]:
        return {"stage": self.stage, "channels": [ch.to_dict() for ch in self.channels]}

    @classmethod
    def from_dict(cls, record: Dict[str, Any]) -> "InstanceParams":
        return cls(
            stage=int(record["stage"]),
            channels=tuple(ChannelParams(**ch) for ch in record["channels"]),
        )


@dataclass(frozen=True)
class AnomalySpec:
    """One injected anomaly: a single-sample spike or a constant offset over an interval."""
    kind: AnomalyKind
    channel: int
    t: float
    offset: float
    dt: Optional[float] = None

    def __post_init__(self):
        if self.channel < 0:
            raise IndexError(f"Anomaly channel must be non-negative, got {self.channel}")
        if self.kind == AnomalyKind.LOCAL_DEVIATION and self.dt is None:
            raise InvalidParameterError("Local deviations need a duration")

    @property
    def t_end(self) -> float:
        return self.t if self.dt is None else self.t + self.dt

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind.value,
            "channel": self.channel,
            "t": self.t,
            "dt": self.dt,
            "offset": self.offset,
        }

    @classmethod
    def from_dict(cls, record: Dict[str, Any]) -> "AnomalySpec":
        return cls(
            kind=AnomalyKind(record["kind"]),
            channel=int(record["channel"]),
            t=float(record["t"]),
            offset=float(record["offset"]),
            dt=None if record.get("dt") is None else float(record["dt"]),
        )


# Labels are sealed while training batches flow into the loss
_LABELS_SEALED: ContextVar[bool] = ContextVar("labels_sealed", default=False)


@contextmanager
def sealed_labels() -> Iterator[None]:
    token = _LABELS_SEALED.set(True)
    try:
        yield
    finally:
        _LABELS_SEALED.reset(token)


@dataclass(frozen=True, eq=False)
class SignalInstance:
    """One benchmark window: an n_channels x n_samples matrix with its ground truth."""
    data: np.ndarray
    params: InstanceParams
    stage: int
    instance_id: int
    anomaly: Optional[AnomalySpec] = None

    def __post_init__(self):
        if self.data.ndim != 2:
            raise ShapeMismatchError(f"Instance data must be 2-D, got shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteError(f"Instance {self.instance_id} holds non-finite samples")
        if self.anomaly is not None and self.anomaly.channel >= self.data.shape[0]:
            raise IndexError(f"Anomaly channel {self.anomaly.channel} out of range")

    @property
    def label(self) -> bool:
        if _LABELS_SEALED.get():
            raise LabelLeakError(f"Label of instance {self.instance_id} read inside the loss path")
        return self.anomaly is not None

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class DatasetMeta:
    stage: int
    seed: int
    n: int
    generator_version: str = GENERATOR_VERSION
    sample_rate_hz: float = 100.0
    anomaly_rate: float = 0.10

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class Dataset:
    instances: List[SignalInstance]
    meta: DatasetMeta

    def __post_init__(self):
        if self.meta.n != len(self.instances):
            raise InvalidConfigError(
                f"Dataset meta says n={self.meta.n} but holds {len(self.instances)} instances"
            )
        ids = [inst.instance_id for inst in self.instances]
        if ids != list(range(len(ids))):
            raise InvalidConfigError("Dataset instance ids must be 0..n-1 in order")

    def __len__(self) -> int:
        return len(self.instances)

    def __iter__(self):
        return iter(self.instances)

    def windows(self) -> np.ndarray:
        """Stacked data, shape (n, n_channels, n_samples)."""
        return np.stack([inst.data for inst in self.instances])

    def labels(self) -> np.ndarray:
        return np.array([inst.label for inst in self.instances], dtype=bool)
