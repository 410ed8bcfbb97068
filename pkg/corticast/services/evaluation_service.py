"""
Evaluation in natural units and the experiment protocols: best of N seeds and k-fold CV
"""

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Sequence, Union

import numpy as np

from corticast.core.config import settings
from corticast.core.errors import CorticastError, InvalidArgumentError
from corticast.core.files import AtomicFileWriter, write_json_atomic
from corticast.schemas.dataset import Dataset, Split, StandardizationStats
from corticast.schemas.model import ModelConfig, Task
from corticast.schemas.reports import EvalReport, FoldResult, Protocol, ProtocolReport
from corticast.schemas.training import TrainConfig, TrainLog
from corticast.services.autonet import MlpModel, init_model, predict
from corticast.services.dataset_service import dataset_service
from corticast.services.optim_service import build_inputs, train

logger = logging.getLogger(__name__)

# Published full-cohort MLP results (MAE weeks, best ± std over 4 runs; cv rows are mean ± std over 10 folds)
REFERENCE_RESULTS: Dict[str, Dict[str, Dict[str, float]]] = {
    "scan_age": {
        "native": {"mae": 0.54, "std": 0.01, "cv_mean": 0.55, "cv_std": 0.03},
        "template": {"mae": 0.50, "std": 0.05, "cv_mean": 0.55, "cv_std": 0.05},
    },
    "birth_age": {
        "native": {"mae": 1.08, "std": 0.17, "cv_mean": 1.12, "cv_std": 0.22},
        "template": {"mae": 1.08, "std": 0.05, "cv_mean": 1.00, "cv_std": 0.12},
    },
    "challenge": {
        "native": {"mae": 1.386},
        "template": {"mae": 1.226},
    },
}


def mae(predictions, targets) -> float:
    """Mean absolute error"""
    predictions = np.asarray(predictions, dtype=np.float64).ravel()
    targets = np.asarray(targets, dtype=np.float64).ravel()
    if predictions.size == 0 or predictions.size != targets.size:
        raise InvalidArgumentError(
            f"mae needs equal non-empty inputs, got {predictions.size} predictions and {targets.size} targets"
        )
    return float(np.abs(predictions - targets).mean())


class RunOutcome(NamedTuple):
    """Everything one training run produced"""
    result: FoldResult
    model: MlpModel
    stats: StandardizationStats
    log: TrainLog
    report: EvalReport


class EvaluationService:
    """Service class for evaluation and experiment protocols"""

    def __init__(self):
        self.reference_results = REFERENCE_RESULTS

    def evaluate(
        self,
        model: MlpModel,
        dataset: Dataset,
        stats: StandardizationStats,
        task: Task,
        split: Split = Split.TEST,
    ) -> EvalReport:
        """MAE of output 0 on one split after unstandardizing the predictions"""
        task = Task(task)
        target = task.targets[0]
        batch = build_inputs(dataset, task, stats, [split])
        if len(batch) == 0:
            raise InvalidArgumentError(f"split '{split.value}' has no subjects to evaluate")
        standardized = predict(model, batch.inputs)[:, 0]
        predictions = dataset_service.unstandardize_target(standardized, target, stats)
        by_id = {subject.meta.subject_id: subject.meta for subject in dataset.subjects}
        truth = np.array([by_id[subject_id].target(target) for subject_id in batch.subject_ids])
        residuals = predictions - truth
        return EvalReport(
            task=task,
            space=dataset.space,
            split=split,
            target=target,
            n_subjects=len(batch),
            mae=mae(predictions, truth),
            subject_ids=batch.subject_ids,
            predictions=[float(v) for v in predictions],
            residuals=[float(v) for v in residuals],
        )

    def summarize_runs(
        self,
        maes: Sequence[float],
        protocol: Protocol = Protocol.RUNS,
        task: Optional[Task] = None,
        results: Optional[List[FoldResult]] = None,
        context: Optional[Dict[str, Any]] = None,
        space=None,
    ) -> ProtocolReport:
        """Best, mean and population std of per-run (or per-fold) MAEs"""
        values = np.asarray(list(maes), dtype=np.float64)
        if values.size == 0:
            raise InvalidArgumentError("cannot summarize zero runs")
        extra = {"space": space} if space is not None else {}
        return ProtocolReport(
            protocol=protocol,
            task=task,
            maes=[float(v) for v in values],
            best=float(values.min()),
            mean=float(values.mean()),
            std=float(values.std()),
            results=list(results or []),
            context=dict(context or {}),
            **extra,
        )

    def train_run(
        self,
        dataset: Dataset,
        task: Task,
        seed: int,
        train_config: Optional[TrainConfig] = None,
        model_overrides: Optional[Dict[str, Any]] = None,
        index: int = 0,
    ) -> RunOutcome:
        """Fit statistics on the train split, train from seed and evaluate on the test split"""
        task = Task(task)
        stats = dataset_service.fit_standardization(dataset, Split.TRAIN)
        config = ModelConfig.for_task(task, len(dataset.channel_names), **(model_overrides or {}))
        train_config = (train_config or TrainConfig()).model_copy(update={"seed": seed})
        model, log = train(init_model(config, seed), dataset, stats, train_config, task)
        report = self.evaluate(model, dataset, stats, task, Split.TEST)
        target = task.targets[0]
        result = FoldResult(
            index=index,
            seed=seed,
            mae=report.mae,
            n_test=report.n_subjects,
            best_epoch=log.best_epoch,
            target_mean=stats.target_mean.get(target),
            target_std=stats.target_std.get(target),
        )
        return RunOutcome(result, model, stats, log, report)

    def _train_and_evaluate(
        self,
        dataset: Dataset,
        task: Task,
        seed: int,
        train_config: Optional[TrainConfig],
        model_overrides: Optional[Dict[str, Any]],
        index: int,
    ) -> FoldResult:
        return self.train_run(dataset, task, seed, train_config, model_overrides, index).result

    def _run_all(self, jobs: List[Callable[[], FoldResult]], label: str) -> List[FoldResult]:
        workers = max(1, min(settings.resolved_threads(), len(jobs)))

        def _guarded(index: int) -> FoldResult:
            try:
                return jobs[index]()
            except CorticastError as e:
                logger.error(f"{label} {index} failed: {e}")
                raise e.with_context(**{label: index})

        if workers == 1:
            return [_guarded(i) for i in range(len(jobs))]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_guarded, range(len(jobs))))

    def run_protocol(
        self,
        dataset: Dataset,
        task: Task,
        n_runs: int = 4,
        seeds: Optional[Sequence[int]] = None,
        train_config: Optional[TrainConfig] = None,
        model_overrides: Optional[Dict[str, Any]] = None,
    ) -> ProtocolReport:
        """Train n_runs models on the fixed split; report the best test MAE and the population std"""
        task = Task(task)
        if n_runs < 1:
            raise InvalidArgumentError(f"n_runs must be >= 1, got {n_runs}")
        if seeds is None:
            seeds = [settings.DEFAULT_SEED + i for i in range(n_runs)]
        seeds = list(seeds)
        if len(seeds) != n_runs:
            raise InvalidArgumentError(f"{n_runs} runs need {n_runs} seeds, got {len(seeds)}")
        if len(set(seeds)) != len(seeds):
            logger.warning(f"Duplicate seeds {seeds}: repeated runs will be identical")

        jobs = [
            (lambda i=i, seed=seed: self._train_and_evaluate(dataset, task, seed, train_config, model_overrides, i))
            for i, seed in enumerate(seeds)
        ]
        results = self._run_all(jobs, "run")
        report = self.summarize_runs(
            [r.mae for r in results],
            Protocol.RUNS,
            task,
            results,
            context=self._context(task, dataset, "mae", "std"),
            space=dataset.space,
        )
        logger.info(f"{task.value}: best MAE {report.best:.4f} weeks, std {report.std:.4f} over {n_runs} runs")
        return report

    def cross_validate(
        self,
        dataset: Dataset,
        task: Task,
        k: int = 10,
        seed: int = 0,
        train_config: Optional[TrainConfig] = None,
        model_overrides: Optional[Dict[str, Any]] = None,
    ) -> ProtocolReport:
        """k folds, each with statistics fitted on its own train shards; mean and population std of fold MAEs"""
        task = Task(task)
        folds = dataset_service.make_cv_folds(dataset, k, seed)
        jobs = [
            (lambda fold=fold: self._train_and_evaluate(
                dataset.with_splits(fold.as_split_map()), task, seed, train_config, model_overrides, fold.fold
            ))
            for fold in folds
        ]
        results = self._run_all(jobs, "fold")
        report = self.summarize_runs(
            [r.mae for r in results],
            Protocol.CROSS_VALIDATION,
            task,
            results,
            context=self._context(task, dataset, "cv_mean", "cv_std"),
            space=dataset.space,
        )
        logger.info(f"{task.value}: {k}-fold MAE {report.mean:.4f} ± {report.std:.4f} weeks")
        return report

    def _context(self, task: Task, dataset: Dataset, mean_key: str, std_key: str) -> Dict[str, Any]:
        published = self.reference_results.get(task.value, {}).get(dataset.space.value, {})
        context = {"reference_space": dataset.space.value}
        if mean_key in published:
            context["reference_mae"] = published[mean_key]
        if std_key in published:
            context["reference_std"] = published[std_key]
        return context

    def write_report(
        self,
        report: Union[ProtocolReport, EvalReport],
        json_path: Union[str, Path],
        csv_path: Optional[Union[str, Path]] = None,
    ) -> None:
        """JSON report plus the flat CSV run_or_fold,mae_weeks"""
        write_json_atomic(json_path, report.model_dump(mode="json"))
        if csv_path is None:
            return
        if isinstance(report, ProtocolReport):
            indices = [r.index for r in report.results] or list(range(len(report.maes)))
            rows = list(zip(indices, report.maes))
        else:
            rows = [(0, report.mae)]
        with AtomicFileWriter(csv_path, "w", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["run_or_fold", "mae_weeks"])
            for index, value in rows:
                writer.writerow([index, repr(float(value))])


# Global evaluation service instance
evaluation_service = EvaluationService()
