import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from typing import List, Optional

import numpy as np

from .core import (
    AMP_FACTOR_RANGE,
    BASE_RANGES,
    CHANGE_TIME_RANGE,
    FREQ_FACTOR_RANGE,
    HF_DURATION_RANGE,
    HF_START_RANGE,
    IMPULSE_WIDTH_RANGE,
    LOCAL_DURATION_RANGE,
    LOCAL_OFFSET_RANGE,
    NOISE_CHANGE_TIME_RANGE,
    NOISE_INCREASE_RANGE,
    PHASE_RANGE,
    SPIKE_OFFSET_RANGE,
    AnomalyKind,
    AnomalySpec,
    ChannelParams,
    Dataset,
    DatasetMeta,
    GenConfig,
    InstanceParams,
    InvalidConfigError,
    InvalidParameterError,
    SignalInstance,
    StageFeatures,
    channel_group,
    validate_probability_vector,
)
from .rng import (
    SeededRng,
    fork,
    gaussian_array,
    instance_stream,
    next_categorical,
    next_index,
    next_signed_uniform,
    next_uniform,
)

logger = logging.getLogger(__name__)

# Sub-streams of a per-instance stream
STREAM_PARAMS = 1
STREAM_NOISE = 2
STREAM_ANOMALY = 3

# Parameter families, each drawn from its own sub-stream so that switching a
# feature on never shifts the draws of the others
_FAMILY_BASE = 1
_FAMILY_SPEED = 2
_FAMILY_PHASE = 3
_FAMILY_NOISE_SHIFT = 4
_FAMILY_HF = 5
_FAMILY_IMPULSE = 6

_TIME_EPS = 1e-9


def _features(stage: int, cfg: GenConfig) -> StageFeatures:
    if stage == cfg.stage:
        return cfg.features
    return StageFeatures.for_stage(stage)


def _uniform(rng: SeededRng, bounds) -> float:
    return next_uniform(rng, bounds[0], bounds[1])


def sample_params(stage: int, cfg: GenConfig, rng: SeededRng) -> InstanceParams:
    """
    Draw every random variable of one instance for the given stage.

    Args:
        stage: Benchmark stage (1-8)
        cfg: Generator configuration (group ranges, durations)
        rng: Parameter stream of the instance

    Returns:
        InstanceParams with one ChannelParams per channel

    Raises:
        InvalidConfigError: If the stage is unknown
    """
    features = _features(stage, cfg)
    channels = []
    for channel in range(features.n_channels):
        ranges = cfg.group_ranges[channel_group(channel)] if features.group_ranges else BASE_RANGES
        channel_rng = fork(rng, channel)

        base = fork(channel_rng, _FAMILY_BASE)
        values = {
            "amplitude": _uniform(base, ranges.amplitude),
            "frequency": _uniform(base, ranges.frequency),
            "noise_std": _uniform(base, ranges.noise_std),
        }

        if features.speed_change:
            speed = fork(channel_rng, _FAMILY_SPEED)
            values["t_change"] = _uniform(speed, CHANGE_TIME_RANGE)
            values["freq_factor"] = _uniform(speed, FREQ_FACTOR_RANGE)
            values["amp_factor"] = _uniform(speed, AMP_FACTOR_RANGE)

        if features.phase_offset:
            values["phase"] = _uniform(fork(channel_rng, _FAMILY_PHASE), PHASE_RANGE)

        if features.noise_shift:
            shift = fork(channel_rng, _FAMILY_NOISE_SHIFT)
            values["noise_increase"] = _uniform(shift, NOISE_INCREASE_RANGE)
            values["t_noise_change"] = _uniform(shift, NOISE_CHANGE_TIME_RANGE)

        if features.hf_bursts:
            hf = fork(channel_rng, _FAMILY_HF)
            values["hf_start"] = _uniform(hf, HF_START_RANGE)
            values["hf_duration"] = _uniform(hf, HF_DURATION_RANGE)
            values["hf_amplitude"] = _uniform(hf, ranges.hf_amplitude)
            values["hf_frequency"] = _uniform(hf, ranges.hf_frequency)
            values["hf_phase"] = _uniform(hf, PHASE_RANGE)

        if features.impulses:
            impulse = fork(channel_rng, _FAMILY_IMPULSE)
            period = _uniform(impulse, ranges.impulse_period)
            values["impulse_period"] = period
            values["impulse_amplitude"] = _uniform(impulse, ranges.impulse_amplitude)
            values["impulse_width"] = _uniform(impulse, IMPULSE_WIDTH_RANGE)
            values["impulse_count"] = int(math.floor(cfg.duration_s / period))

        channels.append(ChannelParams(**values))
    return InstanceParams(stage=stage, channels=tuple(channels))


def sample_times(cfg: GenConfig) -> np.ndarray:
    """Sample instants t = n / fs for n = 0..n_samples-1."""
    return np.arange(cfg.n_samples) / cfg.sample_rate_hz


def carrier_branch(channel: ChannelParams, t: np.ndarray, after_change: bool) -> np.ndarray:
    """
    Evaluate one branch of the piecewise sinusoid.

    The branch after ``t_change`` continues the phase reached at ``t_change``,
    so both branches agree there when the amplitude factor is 1.
    """
    t = np.asarray(t, dtype=np.float64)
    if not after_change or channel.t_change is None:
        return channel.amplitude * np.sin(2.0 * math.pi * channel.frequency * t + channel.phase)
    tc = channel.t_change
    phase = (
        2.0 * math.pi * channel.freq_factor * channel.frequency * (t - tc)
        + 2.0 * math.pi * channel.frequency * tc
        + channel.phase
    )
    return channel.amp_factor * channel.amplitude * np.sin(phase)


def impulse_kernel(tau: float, beta: float, omega: float) -> float:
    """Truncated Gaussian impulse: beta * exp(-(tau/omega)^2) on [0, 3*omega], else 0."""
    if not omega > 0:
        raise InvalidParameterError(f"Impulse width must be positive, got {omega}")
    if 0.0 <= tau <= 3.0 * omega:
        return beta * math.exp(-((tau / omega) ** 2))
    return 0.0


def impulse_train(channel: ChannelParams, t: np.ndarray) -> np.ndarray:
    omega = channel.impulse_width
    if not omega > 0:
        raise InvalidParameterError(f"Impulse width must be positive, got {omega}")
    total = np.zeros_like(t)
    for k in range(channel.impulse_count):
        tau = t - k * channel.impulse_period
        inside = (tau >= 0.0) & (tau <= 3.0 * omega)
        total += np.where(inside, channel.impulse_amplitude * np.exp(-((tau / omega) ** 2)), 0.0)
    return total


def _noise_std(channel: ChannelParams, t: np.ndarray) -> np.ndarray:
    std = np.full_like(t, channel.noise_std)
    if channel.t_noise_change is not None:
        std[t >= channel.t_noise_change] = channel.noise_std + channel.noise_increase
    return std


def render_clean(
    params: InstanceParams,
    cfg: GenConfig,
    noise_rng: Optional[SeededRng] = None,
) -> np.ndarray:
    """
    Render the normal signal content of an instance.

    HF bursts and impulse trains are part of the normal signal. Noise is drawn
    from ``noise_rng`` (one sub-stream per channel); without it the window is
    noiseless.

    Returns:
        Array of shape (n_channels, n_samples)
    """
    t = sample_times(cfg)
    data = np.empty((len(params.channels), t.size))
    for index, channel in enumerate(params.channels):
        signal = carrier_branch(channel, t, after_change=False)
        if channel.t_change is not None:
            after = carrier_branch(channel, t, after_change=True)
            signal = np.where(t < channel.t_change, signal, after)

        if channel.hf_start is not None:
            end = min(channel.hf_end, cfg.duration_s)
            burst = (t >= channel.hf_start) & (t <= end)
            signal = signal + np.where(
                burst,
                channel.hf_amplitude * np.sin(
                    2.0 * math.pi * channel.hf_frequency * t + channel.hf_phase
                ),
                0.0,
            )

        if channel.impulse_period is not None:
            signal = signal + impulse_train(channel, t)

        if noise_rng is not None:
            z = gaussian_array(fork(noise_rng, index), 0.0, 1.0, t.size)
            signal = signal + _noise_std(channel, t) * z

        data[index] = signal
    return data


def choose_anomaly(stage: int, cfg: GenConfig, rng: SeededRng) -> Optional[AnomalySpec]:
    """
    Decide whether an instance is anomalous and, if so, draw its anomaly.

    Spikes and local deviations are equally likely. The channel is fixed for
    single-channel stages, uniform for stages 3-5 and drawn from the configured
    per-channel probabilities from stage 6 on.
    """
    features = _features(stage, cfg)
    if not 0.0 <= cfg.anomaly_rate <= 1.0:
        raise InvalidConfigError(f"Anomaly rate must lie in [0, 1], got {cfg.anomaly_rate}")
    if rng.unit() >= cfg.anomaly_rate:
        return None

    kind = AnomalyKind.SPIKE if rng.unit() < 0.5 else AnomalyKind.LOCAL_DEVIATION
    n_channels = features.n_channels
    if features.weighted_channels:
        probs = cfg.spike_channel_probs if kind == AnomalyKind.SPIKE else cfg.localdev_channel_probs
        validate_probability_vector(probs, n_channels, f"{kind.value} channel probabilities")
        channel = next_categorical(rng, probs)
    elif n_channels > 1:
        channel = next_index(rng, n_channels)
    else:
        channel = 0

    if kind == AnomalyKind.SPIKE:
        t_spike = next_uniform(rng, 0.0, cfg.duration_s)
        offset = next_signed_uniform(rng, *SPIKE_OFFSET_RANGE)
        return AnomalySpec(kind=kind, channel=channel, t=t_spike, offset=offset)

    dt = next_uniform(rng, *LOCAL_DURATION_RANGE)
    start = next_uniform(rng, 0.0, cfg.duration_s - dt)
    offset = next_signed_uniform(rng, *LOCAL_OFFSET_RANGE)
    return AnomalySpec(kind=kind, channel=channel, t=start, offset=offset, dt=dt)


def anomaly_indices(spec: AnomalySpec, cfg: GenConfig) -> np.ndarray:
    """Sample indices touched by an anomaly."""
    if spec.t < -_TIME_EPS or spec.t_end > cfg.duration_s + _TIME_EPS:
        raise InvalidParameterError(
            f"Anomaly time span [{spec.t}, {spec.t_end}] lies outside [0, {cfg.duration_s}]"
        )
    fs = cfg.sample_rate_hz
    last_index = cfg.n_samples - 1
    if spec.kind == AnomalyKind.SPIKE:
        return np.array([min(int(math.floor(spec.t * fs + 0.5)), last_index)])
    first = max(int(math.ceil(spec.t * fs - _TIME_EPS)), 0)
    last = min(int(math.floor(spec.t_end * fs + _TIME_EPS)), last_index)
    return np.arange(first, last + 1)


def inject_anomaly(data: np.ndarray, spec: AnomalySpec, cfg: GenConfig) -> np.ndarray:
    """Add the anomaly offset to a copy of ``data``. Untouched samples are copied verbatim."""
    if not 0 <= spec.channel < data.shape[0]:
        raise IndexError(f"Anomaly channel {spec.channel} out of range for {data.shape[0]} channels")
    result = data.copy()
    result[spec.channel, anomaly_indices(spec, cfg)] += spec.offset
    return result


def generate_instance(stage: int, cfg: GenConfig, dataset_seed: int, instance_id: int) -> SignalInstance:
    """
    Generate one labeled instance.

    The result depends only on (dataset_seed, stage, instance_id) and the config.
    """
    rng = instance_stream(dataset_seed, stage, instance_id)
    params = sample_params(stage, cfg, fork(rng, STREAM_PARAMS))
    data = render_clean(params, cfg, fork(rng, STREAM_NOISE))
    anomaly = choose_anomaly(stage, cfg, fork(rng, STREAM_ANOMALY))
    if anomaly is not None:
        data = inject_anomaly(data, anomaly, cfg)
        logger.debug(f"Instance {instance_id}: {anomaly.kind.value} on channel {anomaly.channel}")
    return SignalInstance(
        data=data, params=params, stage=stage, instance_id=instance_id, anomaly=anomaly
    )


def _generate_chunk(args) -> List[SignalInstance]:
    stage, cfg, dataset_seed, ids = args
    return [generate_instance(stage, cfg, dataset_seed, i) for i in ids]


def generate_dataset(
    stage: int,
    cfg: GenConfig,
    n: int,
    dataset_seed: int,
    workers: int = 1,
) -> Dataset:
    """
    Generate ``n`` instances with ids 0..n-1.

    Args:
        stage: Benchmark stage (1-8)
        cfg: Generator configuration
        n: Number of instances
        dataset_seed: Dataset seed; instance i is identical for any n > i
        workers: Worker processes; the result does not depend on it

    Returns:
        Dataset whose meta records stage, seed and generator version

    Raises:
        ValueError: If n is not positive
    """
    if n < 1:
        raise ValueError("Number of instances must be at least 1")
    if stage != cfg.stage:
        cfg = replace(cfg, stage=stage, features=None)

    try:
        if workers > 1:
            chunk = math.ceil(n / workers)
            jobs = [(stage, cfg, dataset_seed, range(lo, min(lo + chunk, n))) for lo in range(0, n, chunk)]
            with ProcessPoolExecutor(max_workers=workers) as pool:
                instances = [inst for part in pool.map(_generate_chunk, jobs) for inst in part]
        else:
            instances = _generate_chunk((stage, cfg, dataset_seed, range(n)))

        meta = DatasetMeta(
            stage=stage,
            seed=dataset_seed,
            n=n,
            sample_rate_hz=cfg.sample_rate_hz,
            anomaly_rate=cfg.anomaly_rate,
        )
        dataset = Dataset(instances=instances, meta=meta)
        n_anomalous = sum(1 for inst in instances if inst.anomaly is not None)
        logger.info(f"Generated stage {stage} dataset: {n} instances, {n_anomalous} anomalous")
        return dataset

    except Exception as e:
        logger.error(f"Error generating stage {stage} dataset: {str(e)}")
        raise
