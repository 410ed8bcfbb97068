"""
Pydantic schemas for meshes, datasets, models, reports and attributions
"""

from .mesh import SphereMesh, FeatureField, BarycentricHit, TopologySummary
from .dataset import (
    Dataset, Subject, SubjectMeta, StandardizationStats,
    Split, Sex, Space, FoldAssignment, DatasetSummary, SyntheticSpec, SyntheticTruth
)
from .model import ModelConfig, Task, Mode, Activation
from .training import TrainConfig, TrainLog, EpochRecord, TrainSummary
from .reports import EvalReport, ProtocolReport, FoldResult, Protocol, ErrorResponse
from .attribution import Attribution, AttributionMethod, GroupMap, Group, GroupStatistic
from .run import RunConfig
