"""
Losses, Adam and the training loop with early stopping
"""

import csv
import logging
import time
from pathlib import Path
from typing import Dict, Iterable, List, NamedTuple, Optional, Tuple, Union

import numpy as np

from corticast.core.errors import InvalidArgumentError, MetadataError, NumericError
from corticast.core.files import AtomicFileWriter, write_json_atomic
from corticast.schemas.dataset import Dataset, Split, StandardizationStats
from corticast.schemas.model import Mode, Task
from corticast.schemas.training import EpochRecord, TrainConfig, TrainLog
from corticast.services.autonet import MlpModel, ParamGrads, model_backward, model_forward
from corticast.services.dataset_service import dataset_service

logger = logging.getLogger(__name__)

TRAIN_LOG_HEADER = ["epoch", "train_loss", "val_loss", "wall_ms"]


class ModelBatch(NamedTuple):
    """Standardized network inputs (N x V x C) and targets (N x K) with their subject ids"""
    inputs: np.ndarray
    targets: np.ndarray
    subject_ids: List[str]

    def __len__(self) -> int:
        return len(self.subject_ids)


def mse_loss(
    predictions: np.ndarray,
    targets: np.ndarray,
    target_weights: Optional[Iterable[float]] = None,
) -> Tuple[float, np.ndarray]:
    """Weighted sum over outputs of the per-output mean squared error, and its prediction gradient"""
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if predictions.ndim != 2 or predictions.shape != targets.shape:
        raise InvalidArgumentError(f"predictions {predictions.shape} and targets {targets.shape} must be equal N x K")
    n, k = predictions.shape
    if n < 1:
        raise InvalidArgumentError("loss needs at least one subject")
    weights = np.ones(k) if target_weights is None else np.asarray(list(target_weights), dtype=np.float64)
    if weights.shape != (k,):
        raise InvalidArgumentError(f"expected {k} target weights, got {weights.shape[0]}")
    if np.any(weights < 0.0) or not np.any(weights > 0.0):
        raise InvalidArgumentError("target weights must be non-negative and not all zero")
    residual = predictions - targets
    per_output = (residual * residual).mean(axis=0)
    loss = float((weights * per_output).sum())
    grad = 2.0 * weights * residual / n
    return loss, grad


class AdamState:
    """First and second moments per trainable array, plus the step counter"""

    def __init__(self, first: Dict[str, np.ndarray], second: Dict[str, np.ndarray], step: int = 0):
        self.first = first
        self.second = second
        self.step = step

    @classmethod
    def for_params(cls, params: Dict[str, np.ndarray]) -> "AdamState":
        return cls(
            {name: np.zeros_like(array) for name, array in params.items()},
            {name: np.zeros_like(array) for name, array in params.items()},
        )

    @classmethod
    def for_model(cls, model: MlpModel) -> "AdamState":
        return cls.for_params(dict(model.trainable()))


def adam_step(
    params: Union[MlpModel, Dict[str, np.ndarray]],
    grads: Union[ParamGrads, Dict[str, np.ndarray]],
    state: AdamState,
    config: TrainConfig,
) -> AdamState:
    """One bias-corrected Adam update, applied in place

    Accepts a model (its trainable arrays are updated and its version bumped)
    or a plain name -> array mapping.
    """
    model = params if isinstance(params, MlpModel) else None
    arrays = dict(model.trainable()) if model is not None else params
    grad_arrays = grads.params if isinstance(grads, ParamGrads) else grads
    for name, grad in grad_arrays.items():
        if not np.all(np.isfinite(grad)):
            raise NumericError(f"non-finite gradient for {name}", details={"parameter": name})

    b1, b2 = config.adam_beta1, config.adam_beta2
    state.step += 1
    correction1 = 1.0 - b1 ** state.step
    correction2 = 1.0 - b2 ** state.step
    for name, theta in arrays.items():
        g = grad_arrays[name]
        m = state.first[name]
        v = state.second[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        theta -= config.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + config.adam_epsilon)
    if model is not None:
        model.touch()
    return state


def make_batches(n: int, batch_size: int, rng: np.random.Generator) -> List[np.ndarray]:
    """Seeded shuffle into mini-batches; the final partial batch is kept, a trailing singleton joins its predecessor"""
    if batch_size < 1:
        raise InvalidArgumentError(f"batch_size must be >= 1, got {batch_size}")
    order = rng.permutation(n)
    batches = [order[start:start + batch_size] for start in range(0, n, batch_size)]
    if len(batches) > 1 and len(batches[-1]) == 1:
        tail = batches.pop()
        batches[-1] = np.concatenate([batches[-1], tail])
    return batches


def build_inputs(
    dataset: Dataset,
    task: Task,
    stats: StandardizationStats,
    splits: Iterable[Split] = (Split.TRAIN,),
    require_targets: bool = True,
) -> ModelBatch:
    """Standardized input tensor and target matrix for a task

    Birth-age inputs gain a fifth channel holding the subject's standardized scan
    age at every vertex. Challenge subjects missing any target are dropped; for
    the single-target tasks missing metadata is an error listing the subjects.
    """
    task = Task(task)
    subjects = dataset.split(*splits)
    targets = task.targets
    needed = set(targets) | ({"pma_scan"} if task.uses_confound else set())

    missing = [s.meta.subject_id for s in subjects if any(s.meta.target(name) is None for name in needed)]
    if missing:
        if task == Task.CHALLENGE:
            logger.warning(f"Excluding {len(missing)} challenge subjects with incomplete targets: {missing}")
            subjects = [s for s in subjects if s.meta.subject_id not in set(missing)]
        elif require_targets or task.uses_confound:
            raise MetadataError(f"{task.value} needs {', '.join(sorted(needed))} for", missing)

    n_vertices = subjects[0].features.n_vertices if subjects else 0
    n_channels = len(dataset.channel_names) + (1 if task.uses_confound else 0)
    inputs = np.empty((len(subjects), n_vertices, n_channels))
    matrix = np.full((len(subjects), len(targets)), np.nan)
    for row, subject in enumerate(subjects):
        standardized = dataset_service.standardize_field(subject.features, stats)
        inputs[row, :, :len(dataset.channel_names)] = standardized.values.T
        if task.uses_confound:
            inputs[row, :, -1] = dataset_service.standardize_target(subject.meta.pma_scan, "pma_scan", stats)
        for column, name in enumerate(targets):
            value = subject.meta.target(name)
            if value is not None:
                matrix[row, column] = dataset_service.standardize_target(value, name, stats)
    return ModelBatch(inputs, matrix, [s.meta.subject_id for s in subjects])


def train(
    model: MlpModel,
    dataset: Dataset,
    stats: StandardizationStats,
    config: TrainConfig,
    task: Task = Task.SCAN_AGE,
) -> Tuple[MlpModel, TrainLog]:
    """Adam on shuffled mini-batches with early stopping on the validation loss

    The caller's model is not modified. The returned model is an eval-mode
    snapshot of the epoch with the strictly lowest validation loss.
    """
    task = Task(task)
    train_batch = build_inputs(dataset, task, stats, [Split.TRAIN])
    val_batch = build_inputs(dataset, task, stats, [Split.VAL])
    if len(train_batch) == 0 or len(val_batch) == 0:
        raise InvalidArgumentError(
            f"training needs non-empty train and val splits (train {len(train_batch)}, val {len(val_batch)})"
        )
    if len(train_batch) < 2:
        raise InvalidArgumentError("batch normalization needs at least 2 training subjects")
    weights = config.weights_for(len(task.targets))
    if len(weights) != model.config.out_units:
        raise InvalidArgumentError(f"{len(weights)} target weights for a {model.config.out_units}-output model")

    working = model.copy().train()
    state = AdamState.for_model(working)
    rng = np.random.default_rng(config.seed)
    records: List[EpochRecord] = []
    best_model: Optional[MlpModel] = None
    best_loss = np.inf
    best_epoch = 0
    n_train = len(train_batch)

    logger.info(
        f"Training {task.value} on {n_train} subjects (val {len(val_batch)}), "
        f"lr {config.learning_rate}, batch {config.batch_size}, patience {config.patience}"
    )
    for epoch in range(1, config.max_epochs + 1):
        started = time.perf_counter()
        weighted_sum = 0.0
        for index in make_batches(n_train, config.batch_size, rng):
            predictions, cache = model_forward(working, train_batch.inputs[index], Mode.TRAIN)
            loss, grad = mse_loss(predictions, train_batch.targets[index], weights)
            if not np.isfinite(loss):
                raise NumericError(f"non-finite training loss at epoch {epoch}", details={"epoch": epoch})
            try:
                adam_step(working, model_backward(working, cache, grad), state, config)
            except NumericError as e:
                raise e.with_context(epoch=epoch)
            weighted_sum += loss * len(index)
        train_loss = weighted_sum / n_train

        val_predictions, _ = model_forward(working, val_batch.inputs, Mode.EVAL)
        val_loss, _ = mse_loss(val_predictions, val_batch.targets, weights)
        if not np.isfinite(val_loss):
            raise NumericError(f"non-finite validation loss at epoch {epoch}", details={"epoch": epoch})
        wall_ms = (time.perf_counter() - started) * 1000.0
        records.append(EpochRecord(epoch=epoch, train_loss=train_loss, val_loss=val_loss, wall_ms=wall_ms))

        if val_loss < best_loss:
            best_loss, best_epoch = val_loss, epoch
            best_model = working.copy()
        elif epoch - best_epoch >= config.patience:
            logger.info(f"Early stop at epoch {epoch}: no new validation minimum since epoch {best_epoch}")
            break
        if epoch % config.log_every == 0:
            logger.info(f"Epoch {epoch}: train {train_loss:.5f}, val {val_loss:.5f} (best {best_loss:.5f} @ {best_epoch})")

    log = TrainLog(records=records, best_epoch=best_epoch, seed=config.seed)
    logger.info(f"Restored epoch {best_epoch} with validation loss {best_loss:.6f}")
    return best_model.eval(), log


def write_train_log(log: TrainLog, csv_path: Union[str, Path], summary_path: Optional[Union[str, Path]] = None) -> None:
    """CSV epoch,train_loss,val_loss,wall_ms plus an optional JSON summary"""
    with AtomicFileWriter(csv_path, "w", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(TRAIN_LOG_HEADER)
        for record in log.records:
            writer.writerow([record.epoch, repr(record.train_loss), repr(record.val_loss), f"{record.wall_ms:.3f}"])
    if summary_path is not None:
        write_json_atomic(summary_path, log.summary().model_dump())


def read_train_log(csv_path: Union[str, Path]) -> List[EpochRecord]:
    with open(csv_path, newline="", encoding="utf-8") as handle:
        return [
            EpochRecord(
                epoch=int(row["epoch"]),
                train_loss=float(row["train_loss"]),
                val_loss=float(row["val_loss"]),
                wall_ms=float(row["wall_ms"]),
            )
            for row in csv.DictReader(handle)
        ]
