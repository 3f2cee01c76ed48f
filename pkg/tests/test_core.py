import numpy as np
import pytest

from ishm_bench.core import (
    DEFAULT_CHANNEL_PROBS,
    STAGE_NAMES,
    AnomalyKind,
    AnomalySpec,
    BenchmarkError,
    ChannelParams,
    Dataset,
    DatasetMeta,
    GenConfig,
    GroupRanges,
    InstanceParams,
    InvalidConfigError,
    InvalidParameterError,
    LabelLeakError,
    NonFiniteError,
    SensorGroup,
    ShapeMismatchError,
    SignalInstance,
    StageFeatures,
    channel_group,
    count_random_variables,
    sealed_labels,
    validate_probability_vector,
)


def _instance(data=None, anomaly=None, instance_id=0):
    data = np.zeros((1, 200)) if data is None else data
    params = InstanceParams(stage=1, channels=(ChannelParams(1.0, 5.0, 0.2),))
    return SignalInstance(data=data, params=params, stage=1, instance_id=instance_id, anomaly=anomaly)


def test_error_hierarchy():
    """Value-type errors stay catchable as ValueError"""
    assert issubclass(InvalidConfigError, BenchmarkError)
    assert issubclass(InvalidConfigError, ValueError)
    assert issubclass(LabelLeakError, RuntimeError)
    assert issubclass(NonFiniteError, FloatingPointError)


def test_stage_features_are_cumulative():
    """Each stage keeps every feature of the stage before it"""
    flags = ("speed_change", "phase_offset", "noise_shift", "group_ranges",
             "weighted_channels", "hf_bursts", "impulses")
    previous = StageFeatures.for_stage(1)
    assert previous.n_channels == 1 and not any(getattr(previous, f) for f in flags)
    for stage in range(2, 9):
        current = StageFeatures.for_stage(stage)
        assert current.n_channels >= previous.n_channels
        for flag in flags:
            assert getattr(current, flag) >= getattr(previous, flag)
        previous = current
    assert [StageFeatures.for_stage(s).n_channels for s in range(1, 9)] == [1, 1, 2, 2, 6, 6, 6, 6]


def test_stage_features_unknown_stage():
    with pytest.raises(InvalidConfigError, match="Unknown stage"):
        StageFeatures.for_stage(9)


def test_count_random_variables():
    """Signal parameters per channel plus the anomaly variables"""
    assert count_random_variables(1) == 8
    assert count_random_variables(3) == 20
    assert count_random_variables(8) == 108
    counts = [count_random_variables(s) for s in STAGE_NAMES]
    assert counts == sorted(counts)


def test_channel_groups():
    assert [channel_group(c) for c in range(6)] == [
        SensorGroup.AXLE, SensorGroup.AXLE,
        SensorGroup.BOGIE, SensorGroup.BOGIE,
        SensorGroup.BODY, SensorGroup.BODY,
    ]


def test_group_ranges_validation():
    with pytest.raises(InvalidConfigError, match="lo > hi"):
        GroupRanges(frequency=(5.0, 1.0))


def test_gen_config_defaults():
    cfg = GenConfig()
    assert cfg.n_samples == 200
    assert cfg.n_channels == 1
    assert cfg.features == StageFeatures.for_stage(1)
    assert GenConfig(stage=5).n_channels == 6


def test_gen_config_invalid_values():
    with pytest.raises(InvalidConfigError, match="Anomaly rate"):
        GenConfig(anomaly_rate=1.5)
    with pytest.raises(InvalidConfigError, match="whole number of samples"):
        GenConfig(sample_rate_hz=100.0, duration_s=2.005)
    with pytest.raises(InvalidConfigError, match="Unknown stage"):
        GenConfig(stage=0)


def test_channel_probabilities_validated_from_stage_6():
    """Weighted stages reject vectors that do not sum to one or have the wrong length"""
    assert GenConfig(stage=6).spike_channel_probs == DEFAULT_CHANNEL_PROBS
    with pytest.raises(InvalidConfigError, match="sum to 1"):
        GenConfig(stage=6, spike_channel_probs=(0.5, 0.5, 0.1, 0.0, 0.0, 0.0))
    with pytest.raises(InvalidConfigError, match="needs 6 entries"):
        GenConfig(stage=7, localdev_channel_probs=(0.5, 0.5))
    # not used before stage 6, so not checked either
    GenConfig(stage=5, spike_channel_probs=(1.0,))


def test_validate_probability_vector_negative():
    with pytest.raises(InvalidConfigError, match="negative"):
        validate_probability_vector((1.5, -0.5), 2, "probs")


def test_anomaly_spec():
    spike = AnomalySpec(AnomalyKind.SPIKE, channel=0, t=1.0, offset=3.0)
    assert spike.t_end == 1.0
    local = AnomalySpec(AnomalyKind.LOCAL_DEVIATION, channel=1, t=0.5, offset=-1.5, dt=0.1)
    assert local.t_end == pytest.approx(0.6)
    assert AnomalySpec.from_dict(local.to_dict()) == local

    with pytest.raises(InvalidParameterError, match="duration"):
        AnomalySpec(AnomalyKind.LOCAL_DEVIATION, channel=0, t=0.5, offset=1.0)
    with pytest.raises(IndexError):
        AnomalySpec(AnomalyKind.SPIKE, channel=-1, t=0.5, offset=3.0)


def test_instance_params_round_trip():
    params = InstanceParams(stage=2, channels=(ChannelParams(1.0, 5.0, 0.2, t_change=0.8),))
    assert InstanceParams.from_dict(params.to_dict()) == params


def test_signal_instance_validation():
    """Instances reject bad shapes, non-finite samples and anomalies on missing channels"""
    with pytest.raises(ShapeMismatchError):
        _instance(data=np.zeros(200))
    bad = np.zeros((1, 200))
    bad[0, 3] = np.nan
    with pytest.raises(NonFiniteError):
        _instance(data=bad)
    with pytest.raises(IndexError):
        _instance(anomaly=AnomalySpec(AnomalyKind.SPIKE, channel=1, t=1.0, offset=3.0))


def test_label_sealed_inside_loss_path():
    """Reading a label while labels are sealed trips the audit"""
    inst = _instance(anomaly=AnomalySpec(AnomalyKind.SPIKE, channel=0, t=1.0, offset=3.0))
    assert inst.label is True
    with sealed_labels():
        with pytest.raises(LabelLeakError):
            _ = inst.label
    assert inst.label is True


def test_dataset_validation():
    instances = [_instance(instance_id=i) for i in range(3)]
    dataset = Dataset(instances, DatasetMeta(stage=1, seed=0, n=3))
    assert len(dataset) == 3
    assert dataset.windows().shape == (3, 1, 200)
    assert not dataset.labels().any()

    with pytest.raises(InvalidConfigError, match="meta says n=4"):
        Dataset(instances, DatasetMeta(stage=1, seed=0, n=4))
    with pytest.raises(InvalidConfigError, match="ids"):
        Dataset(list(reversed(instances)), DatasetMeta(stage=1, seed=0, n=3))
