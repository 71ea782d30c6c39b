"""Offline desk-scale acceptance run: learning, disentanglement and temporal-invariance checks."""
from __future__ import annotations

import argparse
from pathlib import Path

import pandas as pd

from sati.schemas import Sample, SynthConfig, TrainConfig
from sati.services import data
from sati.services.acceptance import run_acceptance
from sati.utils.logging_utils import setup_logging


def parse_args() -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="Evaluate the model against the desk-scale acceptance targets")
    parser.add_argument("--data", type=Path, help="JSONL dataset; a default synthetic set is generated when omitted")
    parser.add_argument("--epochs", type=int, default=50, help="Training epochs per run")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--log-level", default="WARNING")
    return parser.parse_args()


def load_samples(path: Path | None) -> list[Sample]:
    if path is None:
        return data.generate(SynthConfig())
    return data.read_jsonl(path)


def main() -> None:
    args = parse_args()
    setup_logging(level=args.log_level)
    report = run_acceptance(load_samples(args.data), TrainConfig(epochs=args.epochs, seed=args.seed))
    table = pd.DataFrame([run.model_dump() for run in (report.with_til, report.without_til)])
    print(table.to_string(index=False))
    print(report.model_dump_json(indent=2))


if __name__ == "__main__":
    main()
