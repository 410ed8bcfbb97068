"""
Pydantic schemas for attributions and group maps
"""

from enum import Enum
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from corticast.schemas.dataset import Split


class AttributionMethod(str, Enum):
    DEEPLIFT_RESCALE = "deeplift_rescale"
    INTEGRATED_GRADIENTS = "integrated_gradients"
    EXACT_SHAPLEY = "exact_shapley"


class Group(str, Enum):
    """Maturity group by GA at birth"""
    PRETERM = "preterm"
    TERM = "term"


class GroupStatistic(str, Enum):
    MEAN_FEATURE = "mean_feature"
    MEAN_ATTRIBUTION = "mean_attribution"
    MEAN_ABS_ATTRIBUTION = "mean_abs_attribution"


class Attribution(BaseModel):
    """Per-cell contributions (V x C) to one output of one subject"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    method: AttributionMethod
    values: np.ndarray = Field(..., description="n_vertices x n_channels contributions (output units)")
    channel_names: List[str] = Field(default_factory=list)
    subject_id: Optional[str] = None
    output_index: int = Field(default=0, ge=0)
    background_n: int = Field(default=1, ge=1, description="Number of reference inputs")
    background_split: Optional[Split] = None
    output: float = Field(default=0.0, description="Model output at the input (output units)")
    reference_output: float = Field(default=0.0, description="Mean model output over the references")
    completeness_residual: float = Field(default=0.0, description="|sum(values) - (output - reference_output)|")

    @field_validator("values", mode="before")
    @classmethod
    def _as_values(cls, value):
        array = np.asarray(value, dtype=np.float64)
        if array.ndim != 2:
            raise ValueError("attribution values must be n_vertices x n_channels")
        if not np.all(np.isfinite(array)):
            raise ValueError("attribution values must be finite")
        return array

    @property
    def total(self) -> float:
        return float(self.values.sum())


class GroupMap(BaseModel):
    """Per-vertex group average of a feature channel or of its attributions"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    group: Group
    statistic: GroupStatistic
    channel: str
    values: np.ndarray = Field(..., description="Per-vertex values")
    n_subjects: int = Field(..., ge=1)

    @field_validator("values", mode="before")
    @classmethod
    def _as_values(cls, value):
        array = np.asarray(value, dtype=np.float64)
        if array.ndim != 1:
            raise ValueError("group map values must be one value per vertex")
        return array

    @property
    def name(self) -> str:
        prefix = "mean" if self.statistic == GroupStatistic.MEAN_FEATURE else "attr"
        return f"{prefix}_{self.channel}"
