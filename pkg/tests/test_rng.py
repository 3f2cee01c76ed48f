import numpy as np
import pytest
from scipy import stats

from ishm_bench.core import InvalidDistributionError, InvalidParameterError
from ishm_bench.rng import (
    DistKind,
    DistSpec,
    SeededRng,
    fork,
    gaussian_array,
    instance_stream,
    next_categorical,
    next_index,
    next_signed_uniform,
    next_uniform,
    parse_seed,
    permutation,
    uniform_array,
)


def test_same_key_same_sequence():
    a, b = SeededRng(42, 1), SeededRng(42, 1)
    assert np.array_equal(a.units(100), b.units(100))
    assert not np.array_equal(SeededRng(42, 2).units(100), SeededRng(42, 1).units(100))


def test_units_match_raw_philox_words():
    """Uniforms are the top 53 bits of the Philox words keyed by (seed, stream)"""
    raw = np.random.Philox(key=np.array([7, 3], dtype=np.uint64)).random_raw(size=5)
    expected = (raw >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
    assert np.array_equal(SeededRng(7, 3).units(5), expected)


def test_counter_tracks_draws():
    rng = SeededRng(1)
    assert rng.counter == 0
    gaussian_array(rng, 0.0, 1.0, 10)
    assert rng.counter == 20
    gaussian_array(rng, 0.0, 0.0, 3)
    assert rng.counter == 26


def test_parse_seed():
    assert parse_seed("0x1F") == 31
    assert parse_seed("12") == 12
    assert parse_seed(5) == 5
    with pytest.raises(InvalidParameterError):
        parse_seed(-1)
    with pytest.raises(InvalidParameterError):
        parse_seed(1 << 64)


def test_uniform_bounds_and_errors():
    rng = SeededRng(3)
    values = uniform_array(rng, -2.0, 5.0, 10_000)
    assert values.min() >= -2.0 and values.max() < 5.0
    assert next_uniform(rng, 1.5, 1.5) == 1.5
    with pytest.raises(InvalidDistributionError):
        next_uniform(rng, 2.0, 1.0)


def test_uniform_distribution_ks():
    values = uniform_array(SeededRng(11), 0.0, 1.0, 20_000)
    assert stats.kstest(values, "uniform").pvalue > 1e-3


def test_gaussian_distribution_ks():
    values = gaussian_array(SeededRng(12), 1.0, 2.0, 20_000)
    assert stats.kstest(values, "norm", args=(1.0, 2.0)).pvalue > 1e-3
    assert np.all(gaussian_array(SeededRng(12), 3.0, 0.0, 4) == 3.0)
    with pytest.raises(InvalidDistributionError):
        gaussian_array(SeededRng(12), 0.0, -1.0, 4)


def test_signed_uniform():
    rng = SeededRng(5)
    draws = np.array([next_signed_uniform(rng, 2.0, 4.0) for _ in range(4000)])
    assert np.all((np.abs(draws) >= 2.0) & (np.abs(draws) < 4.0))
    assert abs((draws > 0).mean() - 0.5) < 0.04
    with pytest.raises(InvalidDistributionError):
        next_signed_uniform(rng, -1.0, 1.0)


def test_categorical_chi_square():
    probs = (0.30, 0.30, 0.15, 0.15, 0.05, 0.05)
    rng = SeededRng(9)
    counts = np.bincount([next_categorical(rng, probs) for _ in range(20_000)], minlength=6)
    expected = 20_000 * np.array(probs)
    assert stats.chisquare(counts, expected).pvalue > 1e-3


def test_categorical_degenerate_vector():
    rng = SeededRng(9)
    assert {next_categorical(rng, (0.0, 1.0, 0.0)) for _ in range(50)} == {1}


def test_next_index_range():
    rng = SeededRng(2)
    draws = {next_index(rng, 3) for _ in range(200)}
    assert draws == {0, 1, 2}
    with pytest.raises(InvalidDistributionError):
        next_index(rng, 0)


def test_permutation_is_deterministic():
    order = permutation(SeededRng(4), 50)
    assert sorted(order.tolist()) == list(range(50))
    assert np.array_equal(order, permutation(SeededRng(4), 50))


def test_fork_leaves_parent_untouched():
    """Forking never consumes draws from the parent stream"""
    parent, twin = SeededRng(21, 0), SeededRng(21, 0)
    child = fork(parent, 5)
    assert parent.counter == 0
    assert np.array_equal(parent.units(10), twin.units(10))
    assert np.array_equal(child.units(10), fork(SeededRng(21, 0), 5).units(10))
    assert not np.array_equal(fork(twin, 5).units(10), fork(twin, 6).units(10))


def test_instance_streams_independent_of_generation_order():
    first = instance_stream(7, 1, 3).units(5)
    instance_stream(7, 1, 4).units(100)
    assert np.array_equal(instance_stream(7, 1, 3).units(5), first)
    assert not np.array_equal(instance_stream(7, 2, 3).units(5), first)


@pytest.mark.parametrize("kind,p1,p2", [
    (DistKind.UNIFORM, 0.0, 1.0),
    (DistKind.GAUSSIAN, 0.0, 1.0),
    (DistKind.SIGNED_UNIFORM, 1.0, 2.0),
])
def test_dist_spec_sample(kind, p1, p2):
    spec = DistSpec(kind, p1, p2)
    assert spec.sample(SeededRng(1)) == spec.sample(SeededRng(1))


def test_dist_spec_validation():
    with pytest.raises(InvalidDistributionError):
        DistSpec(DistKind.UNIFORM, 2.0, 1.0)
    with pytest.raises(InvalidDistributionError):
        DistSpec(DistKind.GAUSSIAN, 0.0, -0.5)
    with pytest.raises(InvalidDistributionError):
        DistSpec(DistKind.SIGNED_UNIFORM, -1.0, 1.0)
