"""
Pydantic schemas for spherical meshes and per-vertex feature fields
"""

from typing import List, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

UNIT_NORM_TOLERANCE = 1e-12


class SphereMesh(BaseModel):
    """Triangulated unit sphere: icospheres and native subject spheres alike"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    vertices: np.ndarray = Field(..., description="V x 3 unit-sphere coordinates (float64)")
    triangles: np.ndarray = Field(..., description="F x 3 vertex indices, counter-clockwise seen from outside")

    @field_validator("vertices", mode="before")
    @classmethod
    def _as_vertices(cls, value):
        array = np.ascontiguousarray(value, dtype=np.float64)
        if array.ndim != 2 or array.shape[1] != 3:
            raise ValueError(f"vertices must be V x 3, got shape {array.shape}")
        return array

    @field_validator("triangles", mode="before")
    @classmethod
    def _as_triangles(cls, value):
        array = np.ascontiguousarray(value, dtype=np.int64)
        if array.size == 0:
            array = array.reshape(0, 3)
        if array.ndim != 2 or array.shape[1] != 3:
            raise ValueError(f"triangles must be F x 3, got shape {array.shape}")
        return array

    @model_validator(mode="after")
    def _check_invariants(self):
        if len(self.vertices):
            norms = np.linalg.norm(self.vertices, axis=1)
            worst = float(np.max(np.abs(norms - 1.0)))
            if worst > UNIT_NORM_TOLERANCE:
                raise ValueError(f"vertices must lie on the unit sphere (worst deviation {worst:.3e})")
        if len(self.triangles):
            if self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices):
                raise ValueError("triangle index out of range")
            a, b, c = self.triangles.T
            if np.any((a == b) | (b == c) | (a == c)):
                raise ValueError("degenerate triangle (repeated vertex index)")
        return self

    @property
    def n_vertices(self) -> int:
        return int(self.vertices.shape[0])

    @property
    def n_triangles(self) -> int:
        return int(self.triangles.shape[0])


class TopologySummary(BaseModel):
    """Counts from an explicit edge-set enumeration"""
    n_vertices: int
    n_edges: int
    n_faces: int

    @property
    def euler(self) -> int:
        return self.n_vertices - self.n_edges + self.n_faces


class FeatureField(BaseModel):
    """Per-vertex multi-channel scalar field (channel-major: C x V)"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    channel_names: List[str] = Field(..., description="Ordered channel labels")
    values: np.ndarray = Field(..., description="n_channels x n_vertices scalars")

    @field_validator("values", mode="before")
    @classmethod
    def _as_values(cls, value):
        array = np.ascontiguousarray(value, dtype=np.float64)
        if array.ndim != 2:
            raise ValueError(f"values must be C x V, got shape {array.shape}")
        return array

    @model_validator(mode="after")
    def _check_invariants(self):
        if len(self.channel_names) != self.values.shape[0]:
            raise ValueError(
                f"{len(self.channel_names)} channel names for {self.values.shape[0]} channels"
            )
        if len(set(self.channel_names)) != len(self.channel_names):
            raise ValueError("channel names must be unique")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("feature values must be finite")
        return self

    @property
    def n_vertices(self) -> int:
        return int(self.values.shape[1])

    @property
    def n_channels(self) -> int:
        return int(self.values.shape[0])

    def channel(self, name: str) -> np.ndarray:
        return self.values[self.channel_names.index(name)]


class BarycentricHit(BaseModel):
    """Containing triangle of a direction and its clamped barycentric weights"""

    model_config = ConfigDict(frozen=True)

    triangle_index: int = Field(..., ge=0)
    weights: Tuple[float, float, float]

    @model_validator(mode="after")
    def _check_weights(self):
        if min(self.weights) < 0.0:
            raise ValueError("weights must be non-negative after clamping")
        if abs(sum(self.weights) - 1.0) > 1e-9:
            raise ValueError("weights must sum to 1")
        return self
