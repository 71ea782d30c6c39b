import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from sati.schemas import EncoderConfig, ModalityInts, SynthConfig, TrainConfig  # noqa: E402
from sati.services import data  # noqa: E402


@pytest.fixture
def synth_config() -> SynthConfig:
    return SynthConfig(
        n_samples=24,
        dims=ModalityInts(a=3, t=4, v=5),
        lengths=ModalityInts(a=4, t=3, v=5),
        length_jitter=1,
        seed=11,
    )


@pytest.fixture
def samples(synth_config):
    return data.generate(synth_config)


@pytest.fixture
def tiny_train_config() -> TrainConfig:
    return TrainConfig.model_validate(
        {
            "epochs": 2,
            "batch_size": 8,
            "lr": 1e-2,
            "head_hidden": 8,
            "seed": 3,
            "encoder": EncoderConfig(d_model=8, n_heads=2, n_layers=1, d_ff=8).model_dump(),
            "adversary": {"d_h": 4, "alpha": 8.0},
            "fusion": {"d_fbp": 2, "k": 2},
            "temporal": {"n_groups": 2, "grid_size": 6},
        }
    )
