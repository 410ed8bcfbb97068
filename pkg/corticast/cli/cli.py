"""
CLI router configuration
"""

import argparse
import json
import sys
from typing import Any, Dict, Iterable, Optional

from corticast.core.config import settings
from corticast.core.errors import InvalidArgumentError
from corticast.schemas.dataset import Space
from corticast.schemas.model import Task
from corticast.schemas.run import RunConfig

# RunConfig fields exposed as flags, with their value types
_RUN_OPTIONS = {
    "task": str,
    "manifest": str,
    "out_dir": str,
    "space": str,
    "seed": int,
    "hidden_units": int,
    "n_blocks": int,
    "batchnorm_epsilon": float,
    "batchnorm_momentum": float,
    "learning_rate": float,
    "batch_size": int,
    "patience": int,
    "max_epochs": int,
    "adam_beta1": float,
    "adam_beta2": float,
    "adam_epsilon": float,
    "log_every": int,
}

MODEL_OPTIONS = ("hidden_units", "n_blocks", "batchnorm_epsilon", "batchnorm_momentum")
TRAIN_OPTIONS = (
    "learning_rate", "batch_size", "patience", "max_epochs",
    "adam_beta1", "adam_beta2", "adam_epsilon", "log_every",
)


def _flag(name: str) -> str:
    return "--out" if name == "out_dir" else "--" + name.replace("_", "-")


def add_run_options(parser: argparse.ArgumentParser, names: Iterable[str]) -> None:
    """Flags backed by RunConfig; unset flags fall back to the config file, then the built-in default"""
    for name in names:
        field = RunConfig.model_fields[name]
        default = field.default.value if hasattr(field.default, "value") else field.default
        kwargs: Dict[str, Any] = {
            "dest": name,
            "type": _RUN_OPTIONS[name],
            "default": None,
            "help": f"{field.description or name.replace('_', ' ')} (default: {default})",
        }
        if name == "task":
            kwargs["choices"] = [task.value for task in Task]
        if name == "space":
            kwargs["choices"] = [space.value for space in Space]
        parser.add_argument(_flag(name), **kwargs)
    if "learning_rate" in names:
        parser.add_argument(
            "--target-weights", dest="target_weights", type=float, nargs="+", default=None,
            help="Per-output loss weights (default: 1 for every output)",
        )


def resolve_run_config(args: argparse.Namespace) -> RunConfig:
    overrides = {name: getattr(args, name) for name in RunConfig.model_fields if hasattr(args, name)}
    return RunConfig.from_sources(getattr(args, "config", None), overrides)


def emit(payload: Any) -> None:
    """Print a command result as JSON on stdout"""
    if hasattr(payload, "model_dump"):
        payload = payload.model_dump(mode="json")
    sys.stdout.write(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="JSON file with RunConfig fields (default: none)")
    common.add_argument(
        "--log-level", default=None, choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help=f"Logging level (default: {settings.LOG_LEVEL})",
    )
    return common


def build_parser() -> argparse.ArgumentParser:
    from corticast.cli.commands import data, explain, geometry, protocols, training

    parser = argparse.ArgumentParser(prog=settings.PROJECT_NAME, description=settings.DESCRIPTION)
    parser.add_argument("--version", action="version", version=f"%(prog)s {settings.VERSION}")
    subparsers = parser.add_subparsers(dest="command", required=True)
    common = _common_options()

    # Include all command groups
    for module in (geometry, data, training, protocols, explain):
        module.register(subparsers, common)
    return parser


def parse_args(argv: Optional[Iterable[str]] = None) -> argparse.Namespace:
    return build_parser().parse_args(None if argv is None else list(argv))


def require(value: Any, flag: str) -> Any:
    """Flags that are optional for the parser but mandatory for a command"""
    if value is None:
        raise InvalidArgumentError(f"{flag} is required (on the command line or in --config)")
    return value
