import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from ishm_bench.core import GenConfig  # noqa: E402
from ishm_bench.models import AttnTransformerConfig  # noqa: E402
from ishm_bench.simulator import generate_dataset  # noqa: E402


@pytest.fixture(scope="session")
def stage1_dataset():
    """Small stage-1 dataset shared by the I/O, model and CLI tests."""
    return generate_dataset(1, GenConfig(stage=1), n=60, dataset_seed=7)


@pytest.fixture(scope="session")
def stage3_dataset():
    return generate_dataset(3, GenConfig(stage=3), n=40, dataset_seed=11)


@pytest.fixture
def tiny_attn_config():
    return AttnTransformerConfig(
        d_model=8,
        n_heads=2,
        n_layers=1,
        ffn_hidden=16,
        decoder_hidden=16,
        epochs=2,
        batch_size=16,
        seed=3,
        min_profile_instances=10,
    )
