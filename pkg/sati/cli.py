"""Command line entry point: data generation, training, evaluation and experiments."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Optional, Sequence, TypeVar

from pydantic import BaseModel, ValidationError

from sati.errors import ConfigurationError, SatiError
from sati.schemas import MODALITIES, SynthConfig, TrainConfig
from sati.services import data, diagnostics, experiments, training
from sati.utils.logging_utils import get_logger, logging_context, setup_logging

logger = get_logger("sati.cli")

ConfigT = TypeVar("ConfigT", bound=BaseModel)


def parse_override(item: str) -> tuple[list[str], Any]:
    """Split ``dotted.key=value``; the value is parsed as JSON and falls back to the raw string."""

    key, sep, raw = item.partition("=")
    if not sep or not key:
        raise ConfigurationError(f"override {item!r} is not of the form key=value")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.split("."), value


def load_config(
    model: type[ConfigT],
    path: Optional[Path],
    overrides: Sequence[str] = (),
    seed: Optional[int] = None,
) -> ConfigT:
    payload: dict[str, Any] = json.loads(path.read_text(encoding="utf-8")) if path else {}
    for item in overrides:
        keys, value = parse_override(item)
        node = payload
        for key in keys[:-1]:
            child = node.setdefault(key, {})
            if not isinstance(child, dict):
                raise ConfigurationError(f"override {item!r} descends into non-mapping {key!r}")
            node = child
        node[keys[-1]] = value
    if seed is not None:
        payload["seed"] = seed
    return model.model_validate(payload)


def write_report(report: BaseModel, out: Optional[Path]) -> None:
    text = report.model_dump_json(indent=2)
    if out is None:
        print(text)
        return
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text + "\n", encoding="utf-8")
    logger.info("Report written", extra={"context": {"path": str(out)}})


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="JSON configuration file")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Override a configuration value, e.g. --set encoder.d_model=32",
    )
    parser.add_argument("--seed", type=int, help="Override the configured seed")
    parser.add_argument("--out", type=Path, help="Where to write the JSON report (stdout when omitted)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sati", description="Disentangled multimodal sentiment model")
    parser.add_argument("--log-level", default="INFO", help="Logging level (default INFO)")
    parser.add_argument("--plain-logs", action="store_true", help="Plain text logs instead of JSON")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="Generate a synthetic JSONL dataset")
    _add_common(gen)
    gen.add_argument("--data", type=Path, required=True, help="Output JSONL path (.gz compresses)")

    train = sub.add_parser("train", help="Train on a dataset and write a checkpoint")
    _add_common(train)
    train.add_argument("--data", type=Path, required=True)
    train.add_argument("--checkpoint", type=Path, required=True, help="Checkpoint manifest path")

    evaluate = sub.add_parser("eval", help="Evaluate a checkpoint on a dataset")
    _add_common(evaluate)
    evaluate.add_argument("--data", type=Path, required=True)
    evaluate.add_argument("--checkpoint", type=Path, required=True)

    ablate = sub.add_parser("ablate", help="Run the full model and the three ablations")
    _add_common(ablate)
    ablate.add_argument("--data", type=Path, required=True)

    noise = sub.add_parser("noise", help="Clean versus noise-injected test evaluation")
    _add_common(noise)
    noise.add_argument("--data", type=Path, required=True)
    noise.add_argument("--variance", type=float, default=0.5, help="Noise variance (default 0.5)")
    noise.add_argument("--noise-std", action="store_true", help="Read --variance as a standard deviation")
    noise.add_argument("--modalities", nargs="+", choices=MODALITIES, default=list(MODALITIES))

    check = sub.add_parser("gradcheck", help="Finite-difference gradient suites")
    _add_common(check)
    check.add_argument("--scope", choices=("ops", "losses", "full"), default="losses")
    check.add_argument("--seeds", type=int, default=20, help="Random draws per check")
    return parser


def run(args: argparse.Namespace) -> int:
    if args.command == "gen-data":
        cfg = load_config(SynthConfig, args.config, args.overrides, args.seed)
        data.write_jsonl(data.generate(cfg), args.data)
        return 0

    if args.command == "gradcheck":
        suite = diagnostics.gradcheck_suite(args.scope, seeds=args.seeds, start=args.seed or 0)
        write_report(suite, args.out)
        return 0 if suite.passed else 1

    samples = data.read_jsonl(args.data)
    if args.command == "eval":
        write_report(training.evaluate_checkpoint(args.checkpoint, samples), args.out)
        return 0

    cfg = load_config(TrainConfig, args.config, args.overrides, args.seed)
    if args.command == "train":
        report = training.train(cfg, samples, args.checkpoint)
    elif args.command == "ablate":
        report = experiments.ablate(cfg, samples)
    else:
        report = experiments.noise_experiment(
            cfg,
            samples,
            args.variance,
            reading="std" if args.noise_std else "variance",
            modalities=args.modalities,
        )
    write_report(report, args.out)
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(level=args.log_level, use_json=not args.plain_logs)
    with logging_context(command=args.command):
        try:
            return run(args)
        except (SatiError, ValidationError, OSError):
            logger.exception("Command failed")
            return 1


if __name__ == "__main__":     # pragma: no cover
    sys.exit(main())
