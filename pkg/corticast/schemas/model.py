"""
Pydantic schemas for the per-vertex MLP and its tasks
"""

from enum import Enum
from typing import Tuple

from pydantic import BaseModel, ConfigDict, Field


class Task(str, Enum):
    """Regression task"""
    SCAN_AGE = "scan_age"
    BIRTH_AGE = "birth_age"
    CHALLENGE = "challenge"

    @property
    def targets(self) -> Tuple[str, ...]:
        """Regression targets in output order"""
        if self is Task.SCAN_AGE:
            return ("pma_scan",)
        if self is Task.BIRTH_AGE:
            return ("ga_birth",)
        return ("ga_birth", "pma_scan", "birthweight")

    @property
    def uses_confound(self) -> bool:
        """Birth age takes the standardized scan age as an extra input channel"""
        return self is Task.BIRTH_AGE


class Mode(str, Enum):
    """Batch normalization mode"""
    TRAIN = "train"
    EVAL = "eval"


class Activation(str, Enum):
    """Hidden activation; identity exists for attribution oracles"""
    TANH = "tanh"
    IDENTITY = "identity"


class ModelConfig(BaseModel):
    """Architecture of the per-vertex MLP with a pooled regression head"""

    model_config = ConfigDict(frozen=True)

    in_channels: int = Field(default=4, ge=1, description="4 for scan age and challenge, 5 for birth age")
    hidden_units: int = Field(default=16, ge=1)
    n_blocks: int = Field(default=4, ge=1)
    out_units: int = Field(default=1, ge=1, description="1, or 3 for the challenge head")
    batchnorm_epsilon: float = Field(default=1e-5, gt=0.0)
    batchnorm_momentum: float = Field(default=0.1, ge=0.0, le=1.0)
    activation: Activation = Field(default=Activation.TANH)

    @classmethod
    def for_task(cls, task: Task, n_channels: int = 4, **overrides) -> "ModelConfig":
        in_channels = n_channels + 1 if task.uses_confound else n_channels
        return cls(in_channels=in_channels, out_units=len(task.targets), **overrides)
