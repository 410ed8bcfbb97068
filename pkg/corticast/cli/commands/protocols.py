"""
Protocol commands: best of N seeds on the fixed split, and k-fold cross-validation
"""

import argparse
import logging
from pathlib import Path

from corticast.cli.cli import MODEL_OPTIONS, TRAIN_OPTIONS, add_run_options, emit, require, resolve_run_config
from corticast.schemas.training import TrainConfig
from corticast.services.dataset_service import dataset_service
from corticast.services.evaluation_service import evaluation_service

logger = logging.getLogger(__name__)

REPORT_JSON = "report.json"
REPORT_CSV = "report.csv"


def register(subparsers, common: argparse.ArgumentParser) -> None:
    options = ["manifest", "out_dir", "task", "space", "seed", *MODEL_OPTIONS, *TRAIN_OPTIONS]

    cv = subparsers.add_parser(
        "cv", parents=[common],
        help="k-fold cross-validation",
        description=(
            "Shuffle subjects into k shards; fold i tests on shard i, validates on shard i+1 and "
            "trains on the rest. Reports per-fold test MAE, mean and population std."
        ),
    )
    cv.add_argument("--folds", type=int, default=10, help="Number of folds (default: 10)")
    add_run_options(cv, options)
    cv.set_defaults(handler=cmd_cv)

    protocol = subparsers.add_parser(
        "protocol", parents=[common],
        help="Train several seeds on the fixed split; report the best test MAE",
        description="Train RUNS models from different seeds on the manifest's split; best MAE and population std.",
    )
    protocol.add_argument("--runs", type=int, default=4, help="Number of runs (default: 4)")
    protocol.add_argument("--seeds", type=int, nargs="+", default=None,
                          help="One seed per run (default: --seed, --seed+1, ...)")
    add_run_options(protocol, options)
    protocol.set_defaults(handler=cmd_protocol)


def _write(report, out_dir: Path) -> None:
    evaluation_service.write_report(report, out_dir / REPORT_JSON, out_dir / REPORT_CSV)
    emit(report)


def cmd_cv(args: argparse.Namespace) -> int:
    run = resolve_run_config(args)
    out_dir = Path(require(run.out_dir, "--out"))
    dataset = dataset_service.load_manifest(require(run.manifest, "--manifest"), space=run.space)
    report = evaluation_service.cross_validate(
        dataset, run.task, args.folds, run.seed, TrainConfig(**run.train_settings()), run.model_settings()
    )
    _write(report, out_dir)
    return 0


def cmd_protocol(args: argparse.Namespace) -> int:
    run = resolve_run_config(args)
    out_dir = Path(require(run.out_dir, "--out"))
    dataset = dataset_service.load_manifest(require(run.manifest, "--manifest"), space=run.space)
    seeds = args.seeds or [run.seed + i for i in range(args.runs)]
    report = evaluation_service.run_protocol(
        dataset, run.task, len(seeds), seeds, TrainConfig(**run.train_settings()), run.model_settings()
    )
    _write(report, out_dir)
    return 0
