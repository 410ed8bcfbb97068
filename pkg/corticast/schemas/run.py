"""
Pydantic schema for a serializable run configuration
"""

import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from pydantic import BaseModel, ConfigDict, Field

from corticast.core.errors import InvalidArgumentError
from corticast.schemas.dataset import Space
from corticast.schemas.model import Task


class RunConfig(BaseModel):
    """Everything a command needs: task, data, architecture and optimizer settings

    Field names match the command-line flags (with dashes as underscores) and the
    JSON config file keys.
    """

    model_config = ConfigDict(extra="forbid")

    task: Task = Field(default=Task.SCAN_AGE, description="Regression task")
    manifest: Optional[str] = Field(default=None, description="Subject manifest CSV")
    out_dir: Optional[str] = Field(default=None, description="Output directory")
    space: Space = Field(default=Space.NATIVE, description="Space label of the manifest")
    seed: int = Field(default=0, description="Seed for initialization, shuffling and sampling")

    # ModelConfig
    hidden_units: int = Field(default=16, ge=1, description="Units per hidden layer")
    n_blocks: int = Field(default=4, ge=1, description="Linear-tanh-batchnorm blocks")
    batchnorm_epsilon: float = Field(default=1e-5, gt=0.0, description="Batchnorm epsilon")
    batchnorm_momentum: float = Field(default=0.1, ge=0.0, le=1.0, description="Running-statistics momentum")

    # TrainConfig
    learning_rate: float = Field(default=0.001, gt=0.0, description="Adam learning rate")
    batch_size: int = Field(default=32, ge=1, description="Subjects per mini-batch")
    patience: int = Field(default=200, ge=1, description="Epochs without a new validation minimum before stopping")
    max_epochs: int = Field(default=20000, ge=1, description="Epoch cap")
    adam_beta1: float = Field(default=0.9, ge=0.0, lt=1.0, description="Adam first-moment decay")
    adam_beta2: float = Field(default=0.999, ge=0.0, lt=1.0, description="Adam second-moment decay")
    adam_epsilon: float = Field(default=1e-8, gt=0.0, description="Adam epsilon")
    target_weights: Optional[List[float]] = Field(default=None, description="Per-output loss weights")
    log_every: int = Field(default=100, ge=1, description="Epoch interval for progress logging")

    @classmethod
    def from_sources(
        cls,
        config_path: Optional[Union[str, Path]] = None,
        overrides: Optional[Dict[str, Any]] = None,
    ) -> "RunConfig":
        """Built-in defaults, then the JSON config file, then explicitly given flags"""
        values: Dict[str, Any] = {}
        if config_path is not None:
            try:
                loaded = json.loads(Path(config_path).read_text(encoding="utf-8"))
            except (OSError, ValueError) as e:
                raise InvalidArgumentError(f"cannot read config file {config_path}: {e}")
            if not isinstance(loaded, dict):
                raise InvalidArgumentError(f"config file {config_path} must hold a JSON object")
            values.update(loaded)
        values.update({key: value for key, value in (overrides or {}).items() if value is not None})
        try:
            return cls(**values)
        except ValueError as e:
            raise InvalidArgumentError(f"invalid run configuration: {e}")

    def model_settings(self) -> Dict[str, Any]:
        return {
            "hidden_units": self.hidden_units,
            "n_blocks": self.n_blocks,
            "batchnorm_epsilon": self.batchnorm_epsilon,
            "batchnorm_momentum": self.batchnorm_momentum,
        }

    def train_settings(self) -> Dict[str, Any]:
        return {
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "patience": self.patience,
            "max_epochs": self.max_epochs,
            "seed": self.seed,
            "adam_beta1": self.adam_beta1,
            "adam_beta2": self.adam_beta2,
            "adam_epsilon": self.adam_epsilon,
            "target_weights": self.target_weights,
            "log_every": self.log_every,
        }
