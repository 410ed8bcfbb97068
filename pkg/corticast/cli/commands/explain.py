"""
Explain command: per-subject attributions and preterm/term group maps
"""

import argparse
import logging
from pathlib import Path

from corticast.cli.cli import add_run_options, emit, require, resolve_run_config
from corticast.core.config import settings
from corticast.core.errors import SchemaError
from corticast.schemas.attribution import AttributionMethod, Group
from corticast.schemas.dataset import Split
from corticast.schemas.model import Task
from corticast.services.attribution_service import attribution_service
from corticast.services.autonet import load_checkpoint
from corticast.services.dataset_service import dataset_service

logger = logging.getLogger(__name__)


def register(subparsers, common: argparse.ArgumentParser) -> None:
    explain = subparsers.add_parser(
        "explain", parents=[common],
        help="Attribute a checkpoint's predictions to vertices and channels",
        description=(
            "Attributions (weeks per feature) for every validation and test subject, written as "
            "subjects/<id>.sfeat, plus preterm and term group maps under groups/."
        ),
    )
    explain.add_argument("--checkpoint", required=True, help="Trained model (.mlpc)")
    add_run_options(explain, ["manifest", "out_dir", "space", "seed"])
    explain.add_argument("--task", choices=[task.value for task in Task], default=None,
                         help="Task (default: the task recorded in the checkpoint)")
    explain.add_argument("--method", choices=[m.value for m in AttributionMethod],
                         default=AttributionMethod.DEEPLIFT_RESCALE.value,
                         help="Attribution method (default: deeplift_rescale)")
    explain.add_argument("--backgrounds", type=int, default=settings.BACKGROUND_SUBJECTS,
                         help=f"Training subjects used as references (default: {settings.BACKGROUND_SUBJECTS})")
    explain.add_argument("--steps", type=int, default=256, help="Integrated-gradients steps (default: 256)")
    explain.add_argument("--output-index", type=int, default=0, help="Head output to explain (default: 0)")
    explain.add_argument("--channel", default=None,
                         help="Raw channel for the group feature maps (default: every channel)")
    explain.set_defaults(handler=cmd_explain)


def cmd_explain(args: argparse.Namespace) -> int:
    run = resolve_run_config(args)
    out_dir = Path(require(run.out_dir, "--out"))
    loaded = load_checkpoint(args.checkpoint)
    if loaded.stats is None:
        raise SchemaError(f"{args.checkpoint} carries no standardization statistics")
    task = Task(args.task or loaded.metadata.get("task", Task.SCAN_AGE.value))
    dataset = dataset_service.load_manifest(require(run.manifest, "--manifest"), space=run.space)
    method = AttributionMethod(args.method)

    attributions = attribution_service.explain(
        loaded.model, dataset, loaded.stats, task, method,
        splits=(Split.VAL, Split.TEST), seed=run.seed,
        n_backgrounds=args.backgrounds, output_index=args.output_index, steps=args.steps,
    )
    for attribution in attributions:
        attribution_service.write_attribution(attribution, out_dir / "subjects" / f"{attribution.subject_id}.sfeat")
    maps = attribution_service.group_maps(dataset, args.channel, attributions)
    background_n = attributions[0].background_n if attributions else None
    written = attribution_service.write_group_maps(maps, out_dir / "groups", method, background_n, args.output_index)

    emit({
        "method": method.value,
        "n_subjects": len(attributions),
        "max_completeness_residual": max((a.completeness_residual for a in attributions), default=0.0),
        "group_files": [str(path) for path in written],
        "importance": {
            group.value: attribution_service.channel_importance(dataset, attributions, group)
            for group in (Group.PRETERM, Group.TERM)
        },
        "total_importance": {
            group.value: attribution_service.channel_total_importance(dataset, attributions, group)
            for group in (Group.PRETERM, Group.TERM)
        },
    })
    return 0
