"""
Training commands: train a model, evaluate a checkpoint
"""

import argparse
import logging
from pathlib import Path

from corticast.cli.cli import MODEL_OPTIONS, TRAIN_OPTIONS, add_run_options, emit, require, resolve_run_config
from corticast.core.errors import SchemaError
from corticast.core.files import write_json_atomic
from corticast.schemas.dataset import Split
from corticast.schemas.model import Task
from corticast.schemas.training import TrainConfig
from corticast.services.autonet import load_checkpoint, save_checkpoint
from corticast.services.dataset_service import dataset_service
from corticast.services.evaluation_service import evaluation_service
from corticast.services.optim_service import write_train_log

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "model.mlpc"
TRAIN_LOG_NAME = "train_log.csv"
TRAIN_SUMMARY_NAME = "train_summary.json"


def register(subparsers, common: argparse.ArgumentParser) -> None:
    train = subparsers.add_parser(
        "train", parents=[common],
        help="Train one model on the manifest's fixed split",
        description=(
            "Fit standardization on the train split, train with Adam and early stopping on the "
            "validation loss, evaluate on the test split and write model.mlpc, train_log.csv and "
            "train_summary.json to the output directory."
        ),
    )
    add_run_options(train, ["manifest", "out_dir", "task", "space", "seed", *MODEL_OPTIONS, *TRAIN_OPTIONS])
    train.add_argument("--exclude-duplicates", action="store_true",
                       help="Drop repeated preterm scans for the task first (default: off)")
    train.set_defaults(handler=cmd_train)

    evaluate = subparsers.add_parser(
        "eval", parents=[common],
        help="Evaluate a checkpoint on a split (MAE in weeks)",
        description="Evaluate output 0 of a checkpoint on one split of a manifest, in natural units.",
    )
    evaluate.add_argument("--checkpoint", required=True, help="Trained model (.mlpc)")
    add_run_options(evaluate, ["manifest", "space"])
    evaluate.add_argument("--task", choices=[task.value for task in Task], default=None,
                          help="Task (default: the task recorded in the checkpoint)")
    evaluate.add_argument("--split", choices=[s.value for s in (Split.TRAIN, Split.VAL, Split.TEST)],
                          default=Split.TEST.value, help="Split to evaluate (default: test)")
    evaluate.add_argument("--report", default=None, help="Write the JSON report here (default: stdout only)")
    evaluate.add_argument("--csv", default=None, help="Write run_or_fold,mae_weeks CSV here (default: none)")
    evaluate.set_defaults(handler=cmd_eval)


def cmd_train(args: argparse.Namespace) -> int:
    run = resolve_run_config(args)
    manifest = require(run.manifest, "--manifest")
    out_dir = Path(require(run.out_dir, "--out"))
    dataset = dataset_service.load_manifest(manifest, space=run.space)
    if args.exclude_duplicates:
        dataset = dataset_service.exclude_duplicate_scans(dataset, run.task.value)

    train_config = TrainConfig(**run.train_settings())
    outcome = evaluation_service.train_run(dataset, run.task, run.seed, train_config, run.model_settings())

    channel_names = list(dataset.channel_names) + (["pma_scan"] if run.task.uses_confound else [])
    metadata = {
        "task": run.task.value,
        "targets": list(run.task.targets),
        "space": dataset.space.value,
        "seed": run.seed,
        "best_epoch": outcome.log.best_epoch,
    }
    save_checkpoint(outcome.model, outcome.model.config, outcome.stats, out_dir / CHECKPOINT_NAME,
                    channel_names, metadata)
    write_train_log(outcome.log, out_dir / TRAIN_LOG_NAME)
    summary = outcome.log.summary().model_dump()
    summary.update({
        "task": run.task.value,
        "space": dataset.space.value,
        "test_mae": outcome.report.mae,
        "test_subjects": outcome.report.n_subjects,
    })
    write_json_atomic(out_dir / TRAIN_SUMMARY_NAME, summary)
    logger.info(f"Test MAE {outcome.report.mae:.4f} weeks on {outcome.report.n_subjects} subjects")
    emit(summary)
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    run = resolve_run_config(args)
    loaded = load_checkpoint(args.checkpoint)
    if loaded.stats is None:
        raise SchemaError(f"{args.checkpoint} carries no standardization statistics")
    task = Task(args.task or loaded.metadata.get("task", Task.SCAN_AGE.value))
    dataset = dataset_service.load_manifest(require(run.manifest, "--manifest"), space=run.space)
    report = evaluation_service.evaluate(loaded.model, dataset, loaded.stats, task, Split(args.split))
    if args.report:
        evaluation_service.write_report(report, args.report, args.csv)
    emit(report)
    return 0
