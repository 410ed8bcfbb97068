"""
Pydantic schemas for subjects, datasets, standardization and synthetic data
"""

from enum import Enum
from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from corticast.schemas.mesh import FeatureField


class Sex(str, Enum):
    """Subject sex as coded in the manifest"""
    MALE = "M"
    FEMALE = "F"
    UNKNOWN = "U"


class Split(str, Enum):
    """Split assignment of a subject"""
    TRAIN = "train"
    VAL = "val"
    TEST = "test"
    UNASSIGNED = "unassigned"


class Space(str, Enum):
    """Native (unregistered) or template (registered) spherical coordinates"""
    NATIVE = "native"
    TEMPLATE = "template"


TARGET_NAMES = ("ga_birth", "pma_scan", "birthweight")


class SubjectMeta(BaseModel):
    """One neonate's metadata and split assignment"""

    model_config = ConfigDict(frozen=True)

    subject_id: str = Field(..., min_length=1, description="Unique subject identifier")
    split: Split = Field(default=Split.UNASSIGNED)
    ga_birth: Optional[float] = Field(default=None, gt=20.0, lt=50.0, description="GA at birth (weeks)")
    pma_scan: Optional[float] = Field(default=None, gt=20.0, lt=50.0, description="PMA at scan (weeks)")
    sex: Sex = Field(default=Sex.UNKNOWN)
    birthweight: Optional[float] = Field(default=None, gt=0.0, lt=10.0, description="Birthweight (kg)")
    head_circumference: Optional[float] = Field(default=None, gt=0.0, description="Head circumference (cm)")
    feature_path: Optional[str] = Field(default=None, description="Feature file, relative to the manifest")

    @field_validator("subject_id")
    @classmethod
    def _strip_id(cls, value: str) -> str:
        if not value.strip():
            raise ValueError("subject_id must be non-empty")
        return value

    def target(self, name: str) -> Optional[float]:
        return getattr(self, name)

    @property
    def participant(self) -> str:
        """Participant key: subject_id up to the first underscore"""
        return self.subject_id.split("_", 1)[0]


class Subject(BaseModel):
    """Metadata plus resampled features"""

    model_config = ConfigDict(frozen=True)

    meta: SubjectMeta
    features: FeatureField


class StandardizationStats(BaseModel):
    """Train-split statistics: per channel and per regression target"""

    channel_names: List[str]
    channel_mean: List[float]
    channel_std: List[float]
    target_mean: Dict[str, float] = Field(default_factory=dict)
    target_std: Dict[str, float] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check_invariants(self):
        if not (len(self.channel_names) == len(self.channel_mean) == len(self.channel_std)):
            raise ValueError("channel names, means and stds must have equal length")
        if any(std <= 0.0 for std in self.channel_std):
            raise ValueError("channel std must be positive")
        if any(std <= 0.0 for std in self.target_std.values()):
            raise ValueError("target std must be positive")
        return self


class Dataset(BaseModel):
    """Subjects resampled onto one icosphere with identical channel ordering"""

    model_config = ConfigDict(frozen=True)

    icosphere_order: Optional[int] = Field(default=None, ge=0)
    channel_names: List[str] = Field(default_factory=list)
    subjects: List[Subject] = Field(default_factory=list)
    stats: Optional[StandardizationStats] = None
    space: Space = Field(default=Space.NATIVE)

    @model_validator(mode="after")
    def _check_invariants(self):
        ids = [subject.meta.subject_id for subject in self.subjects]
        if len(set(ids)) != len(ids):
            raise ValueError("subject ids must be unique within a dataset")
        if self.subjects and self.icosphere_order is not None:
            expected = 10 * 4 ** self.icosphere_order + 2
            for subject in self.subjects:
                if subject.features.n_vertices != expected:
                    raise ValueError(
                        f"subject {subject.meta.subject_id} has {subject.features.n_vertices} vertices, expected {expected}"
                    )
                if subject.features.channel_names != self.channel_names:
                    raise ValueError(f"subject {subject.meta.subject_id} has a different channel ordering")
        return self

    def __len__(self) -> int:
        return len(self.subjects)

    @property
    def subject_ids(self) -> List[str]:
        return [subject.meta.subject_id for subject in self.subjects]

    def split(self, *splits: Split) -> List[Subject]:
        return [subject for subject in self.subjects if subject.meta.split in splits]

    def count_preterm(self, threshold: float = 37.0) -> int:
        return sum(
            1 for subject in self.subjects
            if subject.meta.ga_birth is not None and subject.meta.ga_birth < threshold
        )

    def with_splits(self, assignment: Dict[str, Split]) -> "Dataset":
        """Copy with split labels replaced; subjects absent from the map become unassigned"""
        subjects = [
            subject.model_copy(update={
                "meta": subject.meta.model_copy(
                    update={"split": assignment.get(subject.meta.subject_id, Split.UNASSIGNED)}
                )
            })
            for subject in self.subjects
        ]
        return self.model_copy(update={"subjects": subjects, "stats": None})

    def with_subjects(self, subjects: List[Subject]) -> "Dataset":
        return self.model_copy(update={"subjects": list(subjects)})


class FoldAssignment(BaseModel):
    """One cross-validation fold: test shard i, validation shard i+1, train the rest"""
    fold: int
    train: List[str]
    val: List[str]
    test: List[str]

    def as_split_map(self) -> Dict[str, Split]:
        mapping = {subject_id: Split.TRAIN for subject_id in self.train}
        mapping.update({subject_id: Split.VAL for subject_id in self.val})
        mapping.update({subject_id: Split.TEST for subject_id in self.test})
        return mapping


class DatasetSummary(BaseModel):
    """Cohort counts by maturity and sex"""
    total: int
    preterm: int
    term: int
    male: int
    female: int


class SyntheticSpec(BaseModel):
    """Shape of a synthetic cohort"""
    target: str = Field(default="pma_scan", description="Latent age carried by the signal channel: pma_scan or ga_birth")
    noise_sigma: float = Field(default=0.5, ge=0.0, description="Gaussian target noise (weeks)")
    preterm_fraction: float = Field(default=0.21, ge=0.0, le=1.0)
    male_fraction: float = Field(default=0.54, ge=0.0, le=1.0)
    val_fraction: float = Field(default=0.1, ge=0.0, lt=1.0)
    test_fraction: float = Field(default=0.1, ge=0.0, lt=1.0)
    signal_slope: float = Field(default=0.05, description="Change of the signal channel's vertex mean per week")
    signal_noise: float = Field(default=0.02, ge=0.0, description="Zero-mean spatial noise on the signal channel")
    distractor_variation: float = Field(
        default=0.1,
        ge=0.0,
        description="Scale of the per-subject departure of each distractor channel from its shared population pattern"
    )

    @field_validator("target")
    @classmethod
    def _known_target(cls, value: str) -> str:
        if value not in ("pma_scan", "ga_birth"):
            raise ValueError("target must be pma_scan or ga_birth")
        return value


class SyntheticTruth(BaseModel):
    """Ground truth of a synthetic cohort: vertex-mean(signal) = intercept + slope * latent age"""
    signal_channel: str
    target: str
    intercept: float
    slope: float
    noise_sigma: float
    seed: int
    latent: Dict[str, float] = Field(default_factory=dict, description="Latent age per subject")
