"""
Core configuration settings for corticast
"""

import os
from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Application settings"""

    model_config = SettingsConfigDict(
        env_prefix="CORTICAST_",
        env_file=".env",
        case_sensitive=True,
        extra="ignore",
    )

    # Project
    PROJECT_NAME: str = "corticast"
    VERSION: str = "1.0.0"
    DESCRIPTION: str = "Cortical-surface phenotype regression: icosphere resampling, a compact per-vertex MLP and SHAP-style attribution"

    # Parallelism (CORTICAST_THREADS, 0 = auto)
    THREADS: int = Field(default=0, ge=0, description="Worker cap for parallel loading, resampling and protocols")

    # Mesh Settings
    ICOSPHERE_MAX_ORDER: int = Field(default=8, ge=0, description="Largest icosphere order accepted")
    LOCATE_TOLERANCE: float = Field(
        default=1e-9,
        gt=0.0,
        description="Barycentric weights down to minus this value are clamped to zero"
    )
    SNAP_TOLERANCE: float = Field(
        default=1.5e-7,
        ge=0.0,
        description="Chord distance under which a direction snaps onto a triangle corner (covers float32 vertex rounding)"
    )

    # Experiment Settings
    DEFAULT_SEED: int = Field(default=0, description="Seed used when a command is given none")
    BACKGROUND_SUBJECTS: int = Field(default=32, ge=1, description="Background set size for DeepLIFT")
    PRETERM_THRESHOLD_WEEKS: float = Field(default=37.0, description="GA at birth separating preterm from term")

    # Logging
    LOG_LEVEL: str = Field(default="INFO")

    def resolved_threads(self) -> int:
        """Worker count with 0 meaning one per CPU"""
        if self.THREADS > 0:
            return self.THREADS
        return os.cpu_count() or 1


# Global settings instance
settings = Settings()
