"""
Dataset commands: synthetic cohorts and cohort summaries
"""

import argparse
import logging
from pathlib import Path

from corticast.cli.cli import add_run_options, emit, require, resolve_run_config
from corticast.core.files import write_json_atomic
from corticast.schemas.dataset import SyntheticSpec
from corticast.services.dataset_service import dataset_service

logger = logging.getLogger(__name__)

_SYNTHETIC_DEFAULTS = SyntheticSpec()


def register(subparsers, common: argparse.ArgumentParser) -> None:
    synth = subparsers.add_parser(
        "synth", parents=[common],
        help="Generate a synthetic cohort (manifest + feature files)",
        description="Synthetic subjects whose myelin channel carries the latent age linearly.",
    )
    synth.add_argument("--subjects", type=int, default=514, help="Number of subjects (default: 514)")
    synth.add_argument("--order", type=int, default=2, help="Icosphere order of the features (default: 2)")
    synth.add_argument("--target", choices=["pma_scan", "ga_birth"], default=_SYNTHETIC_DEFAULTS.target,
                       help=f"Latent age carried by the signal (default: {_SYNTHETIC_DEFAULTS.target})")
    synth.add_argument("--noise", type=float, default=_SYNTHETIC_DEFAULTS.noise_sigma,
                       help=f"Target noise sigma in weeks (default: {_SYNTHETIC_DEFAULTS.noise_sigma})")
    add_run_options(synth, ["seed", "out_dir"])
    synth.set_defaults(handler=cmd_synth)

    summary = subparsers.add_parser(
        "summary", parents=[common],
        help="Count subjects by maturity and sex",
        description="Total, preterm (GA < 37), term (GA > 37), male and female counts of a manifest.",
    )
    add_run_options(summary, ["manifest"])
    summary.add_argument("--exclude-duplicates", action="store_true",
                         help="Drop repeated preterm scans for the configured task first (default: off)")
    add_run_options(summary, ["task"])
    summary.set_defaults(handler=cmd_summary)


def cmd_synth(args: argparse.Namespace) -> int:
    run = resolve_run_config(args)
    out_dir = Path(run.out_dir or ".")
    spec = SyntheticSpec(target=args.target, noise_sigma=args.noise)
    dataset, truth = dataset_service.generate_synthetic(args.subjects, args.order, run.seed, spec)
    manifest = out_dir / "manifest.csv"
    dataset_service.save_manifest(dataset, manifest)
    write_json_atomic(out_dir / "truth.json", truth.model_dump(mode="json"))
    emit({
        "manifest": str(manifest),
        "n_subjects": len(dataset),
        "n_vertices": dataset.subjects[0].features.n_vertices,
        "summary": dataset_service.dataset_summary(dataset).model_dump(),
    })
    return 0


def cmd_summary(args: argparse.Namespace) -> int:
    run = resolve_run_config(args)
    dataset = dataset_service.load_manifest(require(run.manifest, "--manifest"), space=run.space)
    if args.exclude_duplicates:
        dataset = dataset_service.exclude_duplicate_scans(dataset, run.task.value)
    emit(dataset_service.dataset_summary(dataset))
    return 0
