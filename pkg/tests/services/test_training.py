import math

import numpy as np
import pytest

from sati.errors import ContractError, DivergenceError
from sati.numcore import ops
from sati.numcore.tensor import Tensor
from sati.schemas import MetricsReport, TrainConfig
from sati.services import data, training
from sati.services.model import SatiModel


@pytest.fixture
def items(samples):
    return data.to_arrays(samples)


def _params(model: SatiModel) -> dict[str, np.ndarray]:
    return model.registry.snapshot()


def test_training_smoke(items, tiny_train_config):
    outcome = training.train_model(tiny_train_config, items[:16], items[16:20])

    assert len(outcome.history) == 2
    for record in outcome.history:
        assert math.isfinite(record.train_loss.total)
        assert record.val is not None and record.val.n_samples == 4


def test_training_is_deterministic(items, tiny_train_config):
    first = _params(training.train_model(tiny_train_config, items[:16]).model)
    second = _params(training.train_model(tiny_train_config, items[:16]).model)

    for name, values in first.items():
        assert np.array_equal(values, second[name]), name


def test_training_lowers_the_task_loss(items, tiny_train_config):
    cfg = tiny_train_config.model_copy(update={"epochs": 8})
    history = training.train_model(cfg, items[:16]).history

    assert history[-1].train_loss.task < history[0].train_loss.task


def test_dropout_runs_are_reproducible(items, tiny_train_config):
    cfg = tiny_train_config.model_copy(update={"dropout": 0.2, "epochs": 1})
    first = _params(training.train_model(cfg, items[:8]).model)
    second = _params(training.train_model(cfg, items[:8]).model)

    assert all(np.array_equal(values, second[name]) for name, values in first.items())


def test_zero_reversal_matches_a_detached_adversary(mocker, items, tiny_train_config):
    cfg = TrainConfig.model_validate(
        {**tiny_train_config.model_dump(), "epochs": 1, "adversary": {"d_h": 4, "alpha": 8.0, "lam": 0.0}}
    )
    reversed_ = _params(training.train_model(cfg, items[:8]).model)

    mocker.patch("sati.services.adversary.grl", lambda x, lam: ops.stop_gradient(x))
    detached = _params(training.train_model(cfg, items[:8]).model)

    for name, values in reversed_.items():
        np.testing.assert_array_equal(values, detached[name], err_msg=name)


def test_without_adversarial_learning_discriminator_never_moves(mocker, items, tiny_train_config):
    cfg = TrainConfig.model_validate({**tiny_train_config.model_dump(), "no_al": True, "epochs": 1})
    spy = mocker.spy(training.Adam, "step")

    outcome = training.train_model(cfg, items[:8])
    initial = SatiModel(cfg, data.input_dims(items)).registry

    optimizer = spy.call_args.args[0]
    for name in outcome.model.registry.group_names("discriminator"):
        assert optimizer.update_counts[name] == 0
        assert np.array_equal(outcome.model.registry[name].data, initial[name].data)
    assert optimizer.update_counts["head.fc2.W"] > 0


def test_non_finite_loss_raises_divergence(mocker, items, tiny_train_config):
    mocker.patch.object(SatiModel, "task_loss", return_value=Tensor(float("nan")))

    with pytest.raises(DivergenceError, match="L_task"):
        training.train_model(tiny_train_config, items[:8])


def test_early_stopping_keeps_best_epoch(mocker, items, tiny_train_config):
    flat = MetricsReport(acc2_nonneg=0.5, f1_nonneg=0.5, acc7=0.1, mae=1.0, corr=0.0, n_samples=4)
    mocker.patch.object(training, "evaluate", return_value=flat)
    cfg = tiny_train_config.model_copy(update={"epochs": 10, "patience": 2})

    outcome = training.train_model(cfg, items[:8], items[8:12])

    assert outcome.stopped_early
    assert outcome.best_epoch == 1
    assert len(outcome.history) == 3


def test_empty_training_set_is_rejected(tiny_train_config):
    with pytest.raises(ContractError):
        training.train_model(tiny_train_config, [])


def test_train_writes_checkpoint_that_evaluates_identically(tmp_path, samples, tiny_train_config):
    result = training.train(tiny_train_config, samples, tmp_path / "ckpt" / "model.json")

    assert result.test is not None and result.test.config is not None
    items = data.to_arrays(samples)
    _, _, test_idx = data.split_indices(len(items), tiny_train_config.seed)
    restored = training.evaluate_checkpoint(result.checkpoint, [samples[i] for i in test_idx])

    assert restored.metric_values() == result.test.metric_values()
    assert restored.loss == result.test.loss
