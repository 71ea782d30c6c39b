import pytest

from sati.errors import ConfigurationError
from sati.schemas import AcceptanceRun, SynthConfig, TrainConfig
from sati.services import acceptance, data


def _run(beta: float = 0.1, **overrides) -> AcceptanceRun:
    values = {
        "beta": beta,
        "acc2_nonneg": 0.95,
        "mae": 0.3,
        "corr": 0.9,
        "specific_probe": 0.97,
        "invariant_probe": 0.4,
        "video_adjacent_jsd": 0.02,
        "best_epoch": 12,
    }
    values.update(overrides)
    return AcceptanceRun(**values)


def test_jsd_reduction_is_relative_to_the_unregularised_run():
    assert acceptance.jsd_reduction(_run(video_adjacent_jsd=0.01), _run(0.0, video_adjacent_jsd=0.04)) == pytest.approx(0.75)
    assert acceptance.jsd_reduction(_run(), _run(0.0, video_adjacent_jsd=0.0)) == 0.0


def test_targets_flag_each_failure_separately():
    without_til = _run(0.0, video_adjacent_jsd=0.04)

    assert all(acceptance.evaluate_targets(_run(), without_til).values())

    targets = acceptance.evaluate_targets(_run(invariant_probe=0.61, video_adjacent_jsd=0.035), without_til)
    assert targets == {
        "binary_accuracy>=0.90": True,
        "specific_probe>=0.90": True,
        "invariant_probe<=0.60": False,
        "temporal_jsd_reduction>=0.30": False,
    }


def test_acceptance_trains_a_beta_zero_twin(mocker, samples):
    calls = []

    def fake_variant(items, config):
        calls.append(config.beta)
        return _run(config.beta, video_adjacent_jsd=0.01 if config.beta else 0.04)

    mocker.patch.object(acceptance, "run_variant", side_effect=fake_variant)

    report = acceptance.run_acceptance(samples, TrainConfig(beta=0.1, epochs=1))

    assert calls == [0.1, 0.0]
    assert report.jsd_reduction == pytest.approx(0.75)
    assert report.passed


def test_acceptance_rejects_a_beta_zero_config(samples):
    with pytest.raises(ConfigurationError):
        acceptance.run_acceptance(samples, TrainConfig(beta=0.0))


@pytest.fixture(scope="module")
def default_report():
    return acceptance.run_acceptance(data.generate(SynthConfig()), TrainConfig(epochs=50))


@pytest.mark.slow
def test_full_model_learns_binary_sentiment(default_report):
    assert default_report.with_til.acc2_nonneg >= acceptance.ACC2_TARGET


@pytest.mark.slow
def test_specific_subspace_identifies_the_modality(default_report):
    assert default_report.with_til.specific_probe >= acceptance.SPECIFIC_PROBE_TARGET


@pytest.mark.slow
def test_invariant_subspace_hides_the_modality(default_report):
    assert default_report.with_til.invariant_probe <= acceptance.INVARIANT_PROBE_TARGET


@pytest.mark.slow
def test_temporal_term_smooths_adjacent_video_frames(default_report):
    assert default_report.jsd_reduction >= acceptance.JSD_REDUCTION_TARGET
