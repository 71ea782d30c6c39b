import json
import logging

import pytest

from sati import cli
from sati.errors import ConfigurationError
from sati.schemas import SynthConfig, TrainConfig
from sati.services import data, diagnostics


@pytest.fixture(autouse=True)
def restore_root_logging():
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    yield
    root.handlers[:] = handlers
    root.setLevel(level)


SMALL_SYNTH = [
    "--set", "n_samples=20",
    "--set", "dims.a=3", "--set", "dims.t=4", "--set", "dims.v=3",
    "--set", "lengths.a=3", "--set", "lengths.t=3", "--set", "lengths.v=4",
]
TINY_TRAIN = [
    "--set", "epochs=1",
    "--set", "batch_size=8",
    "--set", "head_hidden=4",
    "--set", "encoder.d_model=8", "--set", "encoder.n_heads=2", "--set", "encoder.n_layers=1",
    "--set", "encoder.d_ff=8", "--set", "adversary.d_h=4",
    "--set", "fusion.d_fbp=2", "--set", "fusion.k=2",
]


def test_parse_override():
    assert cli.parse_override("encoder.d_model=32") == (["encoder", "d_model"], 32)
    assert cli.parse_override("task=classification") == (["task"], "classification")
    assert cli.parse_override("no_til=true") == (["no_til"], True)
    with pytest.raises(ConfigurationError):
        cli.parse_override("missing-separator")


def test_load_config_layers_file_overrides_and_seed(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"epochs": 5, "encoder": {"d_model": 16, "n_heads": 2}}))

    cfg = cli.load_config(TrainConfig, path, ["encoder.d_model=32", "beta=0.5"], seed=9)

    assert (cfg.epochs, cfg.encoder.d_model, cfg.encoder.n_heads, cfg.beta, cfg.seed) == (5, 32, 2, 0.5, 9)


def test_load_config_rejects_descending_into_scalars():
    with pytest.raises(ConfigurationError):
        cli.load_config(SynthConfig, None, ["n_samples=3", "n_samples.x=1"])


def test_gen_data_writes_jsonl(tmp_path):
    out = tmp_path / "set.jsonl"

    assert cli.main(["gen-data", "--data", str(out), "--seed", "4", *SMALL_SYNTH]) == 0

    samples = data.read_jsonl(out)
    assert len(samples) == 20
    assert samples[0].id == "synth-000000"


def test_train_then_eval(tmp_path):
    dataset, checkpoint = tmp_path / "set.jsonl", tmp_path / "run" / "model.json"
    train_report, eval_report = tmp_path / "train.json", tmp_path / "eval.json"
    assert cli.main(["gen-data", "--data", str(dataset), *SMALL_SYNTH]) == 0

    assert cli.main(["train", "--data", str(dataset), "--checkpoint", str(checkpoint), "--out", str(train_report), *TINY_TRAIN]) == 0
    assert cli.main(["eval", "--data", str(dataset), "--checkpoint", str(checkpoint), "--out", str(eval_report)]) == 0

    trained = json.loads(train_report.read_text())
    evaluated = json.loads(eval_report.read_text())
    assert trained["checkpoint"] == str(checkpoint)
    assert len(trained["history"]) == 1
    assert evaluated["n_samples"] == 20
    assert evaluated["config"]["encoder"]["d_model"] == 8


def test_report_goes_to_stdout_without_out(mocker, capsys):
    mocker.patch.dict(diagnostics.SUITES, {"losses": {"total_loss": diagnostics.LOSS_CHECKS["total_loss"]}})

    assert cli.main(["gradcheck", "--seeds", "2"]) == 0

    report = json.loads(capsys.readouterr().out)
    assert report["scope"] == "losses"
    assert report["passed"] is True


def test_failing_gradcheck_exits_non_zero(mocker, tmp_path):
    mocker.patch("sati.numcore.ops._gelu_derivative", lambda values: values * 0.0)
    mocker.patch.dict(diagnostics.SUITES, {"ops": {"gelu": diagnostics.OP_CHECKS["gelu"]}})

    assert cli.main(["gradcheck", "--scope", "ops", "--seeds", "1", "--out", str(tmp_path / "g.json")]) == 1
    assert json.loads((tmp_path / "g.json").read_text())["passed"] is False


def test_errors_are_logged_and_exit_non_zero(tmp_path, capsys):
    missing = tmp_path / "absent.jsonl"

    assert cli.main(["eval", "--data", str(missing), "--checkpoint", str(tmp_path / "m.json")]) == 1
    assert cli.main(["gen-data", "--data", str(tmp_path / "x.jsonl"), "--set", "n_samples=-1"]) == 1
    assert cli.main(["gen-data", "--data", str(tmp_path / "x.jsonl"), "--set", "novalue"]) == 1

    records = [json.loads(line) for line in capsys.readouterr().err.splitlines() if line.startswith("{")]
    failures = [record for record in records if record["message"] == "Command failed"]
    assert len(failures) == 3
    assert failures[0]["context"]["command"] == "eval"
    assert "exc_info" in failures[0]


def _without_timing(value):
    if isinstance(value, dict):
        return {key: _without_timing(item) for key, item in value.items() if key not in ("wall_clock_s", "checkpoint")}
    if isinstance(value, list):
        return [_without_timing(item) for item in value]
    return value


def test_train_is_bit_reproducible(tmp_path):
    dataset = tmp_path / "set.jsonl"
    assert cli.main(["gen-data", "--data", str(dataset), *SMALL_SYNTH]) == 0

    runs = []
    for name in ("first", "second"):
        checkpoint, report = tmp_path / name / "model.json", tmp_path / f"{name}.json"
        args = ["train", "--data", str(dataset), "--checkpoint", str(checkpoint), "--out", str(report)]
        assert cli.main([*args, *TINY_TRAIN, "--set", "epochs=2"]) == 0
        runs.append((checkpoint, report))

    (first_ckpt, first_report), (second_ckpt, second_report) = runs
    assert first_ckpt.read_bytes() == second_ckpt.read_bytes()
    assert first_ckpt.with_suffix(".bin").read_bytes() == second_ckpt.with_suffix(".bin").read_bytes()
    assert _without_timing(json.loads(first_report.read_text())) == _without_timing(json.loads(second_report.read_text()))
