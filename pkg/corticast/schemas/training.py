"""
Pydantic schemas for optimization and training logs
"""

from typing import List, Optional

from pydantic import BaseModel, Field, model_validator


class TrainConfig(BaseModel):
    """Optimizer and early-stopping settings"""
    learning_rate: float = Field(default=0.001, gt=0.0)
    batch_size: int = Field(default=32, ge=1)
    patience: int = Field(default=200, ge=1, description="Epochs without a new validation minimum before stopping")
    max_epochs: int = Field(default=20000, ge=1)
    seed: int = Field(default=0)
    adam_beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    adam_beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    adam_epsilon: float = Field(default=1e-8, gt=0.0)
    target_weights: Optional[List[float]] = Field(
        default=None,
        description="Per-output loss weights (default all 1)"
    )
    log_every: int = Field(default=100, ge=1, description="Epoch interval for progress logging")

    def weights_for(self, n_outputs: int) -> List[float]:
        if self.target_weights is None:
            return [1.0] * n_outputs
        return list(self.target_weights)


class EpochRecord(BaseModel):
    """Losses of one epoch"""
    epoch: int
    train_loss: float
    val_loss: float
    wall_ms: float = Field(default=0.0, description="Wall time of the epoch (not part of equality checks)")

    def losses(self):
        return (self.epoch, self.train_loss, self.val_loss)


class TrainSummary(BaseModel):
    best_epoch: int
    best_val_loss: float
    stopped_epoch: int
    seed: int


class TrainLog(BaseModel):
    """Per-epoch losses plus the restored epoch"""
    records: List[EpochRecord] = Field(default_factory=list)
    best_epoch: int = 0
    seed: int = 0

    @model_validator(mode="after")
    def _check_best(self):
        if self.records and self.best_epoch:
            best = next(r for r in self.records if r.epoch == self.best_epoch)
            if best.val_loss > min(r.val_loss for r in self.records):
                raise ValueError("best epoch must hold the minimum validation loss")
        return self

    @property
    def stopped_epoch(self) -> int:
        return self.records[-1].epoch if self.records else 0

    @property
    def best_val_loss(self) -> float:
        return next(r.val_loss for r in self.records if r.epoch == self.best_epoch)

    def summary(self) -> TrainSummary:
        return TrainSummary(
            best_epoch=self.best_epoch,
            best_val_loss=self.best_val_loss,
            stopped_epoch=self.stopped_epoch,
            seed=self.seed,
        )
