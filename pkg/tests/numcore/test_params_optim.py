import math

import numpy as np
import pytest

from sati.errors import ConfigurationError, DimensionError
from sati.numcore.optim import Adam
from sati.numcore.params import ParamRegistry


def test_glorot_respects_limit_and_seed():
    first = ParamRegistry(seed=5).glorot("w", 6, 4).data
    second = ParamRegistry(seed=5).glorot("w", 6, 4).data

    assert np.array_equal(first, second)
    assert np.all(np.abs(first) <= math.sqrt(6.0 / 10.0))


def test_duplicate_and_unknown_names_are_rejected():
    registry = ParamRegistry()
    registry.zeros("b", 3)

    with pytest.raises(ConfigurationError):
        registry.zeros("b", 3)
    with pytest.raises(ConfigurationError):
        registry["missing"]


def test_scopes_prefix_names_and_count_parameters():
    registry = ParamRegistry()
    enc = registry.scope("enc")
    enc.glorot("W", 2, 3)
    enc.scope("ln").ones("gamma", 3)
    registry.zeros("encoder_bias", 3)

    assert list(registry) == ["enc.W", "enc.ln.gamma", "encoder_bias"]
    assert enc.names() == ["enc.W", "enc.ln.gamma"]
    assert enc["ln.gamma"] is registry["enc.ln.gamma"]
    assert registry.num_parameters("enc") == 9
    assert registry.num_parameters() == 12


def test_restore_checks_names_and_shapes():
    registry = ParamRegistry()
    registry.zeros("w", 2)
    snapshot = registry.snapshot()
    registry["w"].data = np.array([1.0, 2.0])

    registry.restore(snapshot)
    assert np.array_equal(registry["w"].data, [0.0, 0.0])

    with pytest.raises(ConfigurationError):
        registry.restore({"other": np.zeros(2)})
    with pytest.raises(DimensionError):
        registry.restore({"w": np.zeros(3)})


def test_adam_first_step_moves_by_learning_rate():
    registry = ParamRegistry()
    registry.constant("w", np.array([1.0, -1.0]))
    optimizer = Adam(registry, lr=0.1)

    optimizer.step({"w": np.array([2.0, -3.0])})

    np.testing.assert_allclose(registry["w"].data, [0.9, -0.9], atol=1e-6)
    assert optimizer.update_counts["w"] == 1


def test_adam_minimises_quadratic():
    registry = ParamRegistry()
    registry.constant("w", np.array([3.0]))
    optimizer = Adam(registry, lr=0.1)

    for _ in range(300):
        optimizer.step({"w": 2.0 * registry["w"].data})

    assert abs(registry["w"].data[0]) < 0.2


def test_frozen_prefixes_are_never_updated():
    registry = ParamRegistry()
    registry.constant("discriminator.W", np.ones(2))
    registry.constant("discriminator_extra", np.ones(2))
    optimizer = Adam(registry, frozen=("discriminator",))

    optimizer.step({"discriminator.W": np.ones(2), "discriminator_extra": np.ones(2)})

    assert optimizer.is_frozen("discriminator.W")
    assert not optimizer.is_frozen("discriminator_extra")
    assert np.array_equal(registry["discriminator.W"].data, np.ones(2))
    assert optimizer.update_counts["discriminator.W"] == 0
    assert optimizer.update_counts["discriminator_extra"] == 1


def test_adam_rejects_misshaped_gradient():
    registry = ParamRegistry()
    registry.zeros("w", 2)

    with pytest.raises(DimensionError):
        Adam(registry).step({"w": np.zeros(3)})
