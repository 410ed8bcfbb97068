"""
Pydantic schemas for evaluation and protocol reports, and the CLI error response
"""

from enum import Enum
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field, model_validator

from corticast.schemas.dataset import Space, Split
from corticast.schemas.model import Task


class EvalReport(BaseModel):
    """MAE of one model on one split, in natural units"""
    task: Task
    space: Space = Field(default=Space.NATIVE, description="Manifest label, passed through")
    split: Split
    target: str = Field(..., description="Target evaluated (output 0 of the head)")
    n_subjects: int = Field(..., ge=0)
    mae: float = Field(..., ge=0.0, description="Mean absolute error (weeks)")
    subject_ids: List[str] = Field(default_factory=list)
    predictions: List[float] = Field(default_factory=list, description="Unstandardized predictions (weeks)")
    residuals: List[float] = Field(default_factory=list, description="prediction - target (weeks)")


class Protocol(str, Enum):
    """How the runs of a report were produced"""
    RUNS = "runs"
    CROSS_VALIDATION = "cv"


class FoldResult(BaseModel):
    """One run or fold of a protocol"""
    index: int
    seed: int
    mae: float
    n_test: int
    best_epoch: Optional[int] = None
    target_mean: Optional[float] = Field(default=None, description="Train-split target mean of this run's statistics")
    target_std: Optional[float] = None


class ProtocolReport(BaseModel):
    """Aggregate of several runs or folds (population std)"""
    protocol: Protocol = Protocol.RUNS
    task: Optional[Task] = None
    space: Space = Space.NATIVE
    maes: List[float] = Field(..., min_length=1)
    best: float
    mean: float
    std: float
    results: List[FoldResult] = Field(default_factory=list)
    context: Dict[str, Any] = Field(default_factory=dict, description="Published reference values, not asserted")

    @model_validator(mode="after")
    def _check_aggregates(self):
        if self.best != min(self.maes):
            raise ValueError("best must be the minimum MAE")
        if self.std < 0.0:
            raise ValueError("std must be non-negative")
        return self


class ErrorResponse(BaseModel):
    """Error response schema"""
    success: bool = Field(default=False, description="Operation success status")
    error_code: str = Field(..., description="Error code identifier")
    error_message: str = Field(..., description="Human-readable error message")
    details: Optional[dict] = Field(default=None, description="Additional error details")

    class Config:
        json_schema_extra = {
            "example": {
                "success": False,
                "error_code": "MISSING_METADATA",
                "error_message": "scan_age needs pma_scan for: SUB001_1",
                "details": {"subjects": ["SUB001_1"]}
            }
        }
