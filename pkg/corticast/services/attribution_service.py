"""
Attribution of trained models: DeepLIFT rescale, integrated gradients, an exact
Shapley oracle for tiny inputs, and preterm/term group maps
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from corticast.core.config import settings
from corticast.core.errors import ContractViolationError, InvalidArgumentError
from corticast.core.files import write_json_atomic
from corticast.schemas.attribution import (
    Attribution,
    AttributionMethod,
    Group,
    GroupMap,
    GroupStatistic,
)
from corticast.schemas.dataset import Dataset, Split, StandardizationStats, SubjectMeta
from corticast.schemas.mesh import FeatureField
from corticast.schemas.model import Activation, Mode, Task
from corticast.services.autonet import MlpModel, input_gradient, meanpool_backward, model_forward
from corticast.services.dataset_service import dataset_service
from corticast.services.optim_service import build_inputs
from corticast.services.surface_io import write_features

logger = logging.getLogger(__name__)

RESCALE_GUARD = 1e-7
MAX_SHAPLEY_CELLS = 16
# subjects per eval-mode forward when enumerating coalitions or integration points
_CHUNK_VALUES = 1 << 22

Models = Union[MlpModel, Sequence[MlpModel]]


def _as_models(model: Models) -> List[MlpModel]:
    models = [model] if isinstance(model, MlpModel) else list(model)
    if not models:
        raise InvalidArgumentError("no model to explain")
    for m in models:
        if m.mode != Mode.EVAL:
            raise ContractViolationError("attribution needs eval-mode models (batch statistics have no reference)")
    return models


def _check_input(models: List[MlpModel], x: np.ndarray, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != models[0].config.in_channels:
        raise InvalidArgumentError(f"{name} must be n_vertices x {models[0].config.in_channels}, got {x.shape}")
    return x


def _outputs(models: List[MlpModel], inputs: np.ndarray, output_index: int) -> np.ndarray:
    """Summed eval-mode output k for a batch, evaluated in chunks"""
    n, v, c = inputs.shape
    width = max(c, max(m.config.hidden_units for m in models))
    chunk = max(1, _CHUNK_VALUES // max(1, v * width))
    values = np.zeros(n)
    for m in models:
        for start in range(0, n, chunk):
            predictions, _ = model_forward(m, inputs[start:start + chunk], Mode.EVAL)
            values[start:start + chunk] += predictions[:, output_index]
    return values


def _check_output(models: List[MlpModel], output_index: int) -> None:
    out_units = models[0].config.out_units
    if not 0 <= output_index < out_units:
        raise InvalidArgumentError(f"output index {output_index} out of range for {out_units} outputs")


def _rescale_multipliers(model: MlpModel, x: np.ndarray, backgrounds: np.ndarray, output_index: int):
    """Input multipliers (B x V x C) of output k for x against each background, plus both outputs"""
    fx, cache_x = model_forward(model, x[None], Mode.EVAL)
    fr, cache_r = model_forward(model, backgrounds, Mode.EVAL)
    upstream = np.zeros_like(fr)
    upstream[:, output_index] = 1.0
    linear_activation = model.config.activation == Activation.IDENTITY
    for (kind, _, layer_x), (_, _, layer_r) in zip(reversed(cache_x.layers), reversed(cache_r.layers)):
        if kind == "linear":
            upstream = upstream @ layer_x[1].T
        elif kind == "activation":
            if linear_activation:
                continue
            z_x, y_x = layer_x
            z_r, y_r = layer_r
            dz = z_x - z_r
            wide = np.abs(dz) >= RESCALE_GUARD
            secant = (y_x - y_r) / np.where(wide, dz, 1.0)
            upstream = upstream * np.where(wide, secant, 1.0 - y_x * y_x)
        elif kind == "batchnorm":
            upstream = upstream * (layer_x.gamma / layer_x.std)
        elif kind == "meanpool":
            upstream = meanpool_backward(layer_x, upstream)
    return upstream, fx[0, output_index], fr[:, output_index]


def deeplift_rescale(
    model: Models,
    inputs: np.ndarray,
    backgrounds: np.ndarray,
    output_index: int = 0,
    scale: float = 1.0,
    channel_names: Optional[List[str]] = None,
    subject_id: Optional[str] = None,
    background_split: Optional[Split] = None,
) -> Attribution:
    """DeepLIFT with the rescale rule, averaged over a background set

    Linear layers pass multipliers through their weights, tanh uses the secant
    slope between input and reference (the derivative when the two are closer
    than 1e-7), eval-mode batchnorm is affine and mean pooling spreads 1/V.
    Per background, the attributions sum to f(x) - f(r).
    """
    models = _as_models(model)
    _check_output(models, output_index)
    x = _check_input(models, inputs, "input")
    backgrounds = np.asarray(backgrounds, dtype=np.float64)
    if backgrounds.ndim == 2:
        backgrounds = backgrounds[None]
    if backgrounds.ndim != 3 or backgrounds.shape[1:] != x.shape or backgrounds.shape[0] < 1:
        raise InvalidArgumentError(f"backgrounds must be B x {x.shape[0]} x {x.shape[1]}, got {backgrounds.shape}")

    delta = x[None] - backgrounds
    per_background = np.zeros_like(backgrounds)
    output = 0.0
    references = np.zeros(backgrounds.shape[0])
    for m in models:
        multipliers, fx, fr = _rescale_multipliers(m, x, backgrounds, output_index)
        per_background += multipliers * delta
        output += fx
        references += fr
    residual = float(np.max(np.abs(per_background.sum(axis=(1, 2)) - (output - references))))
    return Attribution(
        method=AttributionMethod.DEEPLIFT_RESCALE,
        values=per_background.mean(axis=0) * scale,
        channel_names=list(channel_names or []),
        subject_id=subject_id,
        output_index=output_index,
        background_n=backgrounds.shape[0],
        background_split=background_split,
        output=float(output * scale),
        reference_output=float(references.mean() * scale),
        completeness_residual=residual * abs(scale),
    )


def integrated_gradients(
    model: Models,
    inputs: np.ndarray,
    baseline: np.ndarray,
    steps: int = 256,
    output_index: int = 0,
    scale: float = 1.0,
    channel_names: Optional[List[str]] = None,
    subject_id: Optional[str] = None,
    background_n: int = 1,
    background_split: Optional[Split] = None,
) -> Attribution:
    """(x - baseline) times the midpoint-rule average of the exact input gradient along the straight path"""
    if steps < 1:
        raise InvalidArgumentError(f"steps must be >= 1, got {steps}")
    models = _as_models(model)
    _check_output(models, output_index)
    x = _check_input(models, inputs, "input")
    baseline = _check_input(models, baseline, "baseline")
    delta = x - baseline
    alphas = (np.arange(1, steps + 1) - 0.5) / steps

    width = max(x.shape[1], max(m.config.hidden_units for m in models))
    chunk = max(1, _CHUNK_VALUES // max(1, x.shape[0] * width))
    gradient_sum = np.zeros_like(x)
    for m in models:
        for start in range(0, steps, chunk):
            points = baseline[None] + alphas[start:start + chunk, None, None] * delta[None]
            gradient_sum += input_gradient(m, points, output_index).sum(axis=0)
    values = delta * (gradient_sum / steps)

    ends = _outputs(models, np.stack([x, baseline]), output_index)
    residual = abs(float(values.sum()) - float(ends[0] - ends[1]))
    return Attribution(
        method=AttributionMethod.INTEGRATED_GRADIENTS,
        values=values * scale,
        channel_names=list(channel_names or []),
        subject_id=subject_id,
        output_index=output_index,
        background_n=background_n,
        background_split=background_split,
        output=float(ends[0] * scale),
        reference_output=float(ends[1] * scale),
        completeness_residual=residual * abs(scale),
    )


def exact_shapley(
    model: Models,
    inputs: np.ndarray,
    baseline: np.ndarray,
    output_index: int = 0,
    scale: float = 1.0,
    channel_names: Optional[List[str]] = None,
    subject_id: Optional[str] = None,
) -> Attribution:
    """Shapley values by enumerating every coalition of input cells

    A coalition takes input values on its cells and baseline values elsewhere.
    Only feasible for at most 16 cells (65536 coalitions).
    """
    models = _as_models(model)
    _check_output(models, output_index)
    x = _check_input(models, inputs, "input")
    baseline = _check_input(models, baseline, "baseline")
    n = x.size
    if n > MAX_SHAPLEY_CELLS:
        raise InvalidArgumentError(f"exact Shapley needs at most {MAX_SHAPLEY_CELLS} input cells, got {n}")

    masks = np.arange(1 << n)
    bits = (masks[:, None] >> np.arange(n)) & 1
    coalitions = np.where(bits.astype(bool), x.ravel(), baseline.ravel()).reshape(-1, *x.shape)
    values = _outputs(models, coalitions, output_index)

    sizes = bits.sum(axis=1)
    weights = np.array([math.factorial(s) * math.factorial(n - s - 1) / math.factorial(n) for s in range(n)])
    phi = np.empty(n)
    for i in range(n):
        without = masks[bits[:, i] == 0]
        phi[i] = float((weights[sizes[without]] * (values[without | (1 << i)] - values[without])).sum())
    return Attribution(
        method=AttributionMethod.EXACT_SHAPLEY,
        values=phi.reshape(x.shape) * scale,
        channel_names=list(channel_names or []),
        subject_id=subject_id,
        output_index=output_index,
        output=float(values[-1] * scale),
        reference_output=float(values[0] * scale),
        completeness_residual=abs(float(phi.sum()) - float(values[-1] - values[0])) * abs(scale),
    )


def select_backgrounds(inputs: np.ndarray, n: int, seed: int) -> np.ndarray:
    """Indices of n reference subjects drawn without replacement (all of them if fewer), ascending"""
    total = inputs.shape[0]
    if total < 1:
        raise InvalidArgumentError("no subjects to draw backgrounds from")
    if n >= total:
        return np.arange(total)
    return np.sort(np.random.default_rng(seed).choice(total, size=n, replace=False))


class AttributionService:
    """Service class for explaining datasets and aggregating group maps"""

    def __init__(self):
        self.background_subjects = settings.BACKGROUND_SUBJECTS

    def explain(
        self,
        model: Models,
        dataset: Dataset,
        stats: StandardizationStats,
        task: Task,
        method: AttributionMethod = AttributionMethod.DEEPLIFT_RESCALE,
        splits: Iterable[Split] = (Split.VAL, Split.TEST),
        seed: int = 0,
        n_backgrounds: Optional[int] = None,
        output_index: int = 0,
        steps: int = 256,
    ) -> List[Attribution]:
        """Attributions in natural output units for every subject of the given splits

        References are training subjects; integrated gradients and the exact oracle
        use their mean as the baseline.
        """
        task = Task(task)
        method = AttributionMethod(method)
        models = _as_models(model)
        _check_output(models, output_index)
        target = task.targets[output_index]
        scale = stats.target_std[target] if target in stats.target_std else 1.0
        channel_names = list(dataset.channel_names) + (["pma_scan"] if task.uses_confound else [])

        reference_batch = build_inputs(dataset, task, stats, [Split.TRAIN], require_targets=False)
        n_backgrounds = n_backgrounds or self.background_subjects
        backgrounds = reference_batch.inputs[select_backgrounds(reference_batch.inputs, n_backgrounds, seed)]
        baseline = backgrounds.mean(axis=0)
        batch = build_inputs(dataset, task, stats, splits, require_targets=False)
        logger.info(
            f"Explaining {len(batch)} subjects with {method.value} against {backgrounds.shape[0]} training references"
        )

        def _one(row: int) -> Attribution:
            common = dict(output_index=output_index, scale=scale, channel_names=channel_names,
                          subject_id=batch.subject_ids[row])
            if method == AttributionMethod.DEEPLIFT_RESCALE:
                return deeplift_rescale(models, batch.inputs[row], backgrounds, background_split=Split.TRAIN, **common)
            if method == AttributionMethod.INTEGRATED_GRADIENTS:
                return integrated_gradients(models, batch.inputs[row], baseline, steps,
                                            background_n=backgrounds.shape[0], background_split=Split.TRAIN, **common)
            return exact_shapley(models, batch.inputs[row], baseline, **common)

        workers = max(1, min(settings.resolved_threads(), len(batch)))
        with ThreadPoolExecutor(max_workers=workers) as pool:
            attributions = list(pool.map(_one, range(len(batch))))
        if attributions:
            worst = max(a.completeness_residual for a in attributions)
            logger.info(f"Largest completeness residual: {worst:.3e}")
        return attributions

    def group_of(self, meta: SubjectMeta) -> Optional[Group]:
        if dataset_service.is_preterm(meta):
            return Group.PRETERM
        if dataset_service.is_term(meta):
            return Group.TERM
        return None

    def group_maps(
        self,
        dataset: Dataset,
        channel: Optional[str],
        attributions: Sequence[Attribution],
        splits: Iterable[Split] = (Split.VAL, Split.TEST),
    ) -> List[GroupMap]:
        """Per-vertex group means over the given splits

        For each group: the raw feature mean of `channel` (every channel when None),
        and the signed and absolute mean attribution of every attributed channel.
        A group without subjects yields no maps.
        """
        splits = tuple(splits)
        feature_channels = list(dataset.channel_names) if channel is None else [channel]
        unknown = [name for name in feature_channels if name not in dataset.channel_names]
        if unknown:
            raise InvalidArgumentError(f"unknown channels: {', '.join(unknown)}")
        by_id = {a.subject_id: a for a in attributions}
        maps: List[GroupMap] = []
        for group in (Group.PRETERM, Group.TERM):
            members = [s for s in dataset.split(*splits) if self.group_of(s.meta) == group]
            if not members:
                logger.warning(f"No {group.value} subjects in {[s.value for s in splits]}; group maps omitted")
                continue
            for name in feature_channels:
                stacked = np.stack([s.features.channel(name) for s in members])
                maps.append(GroupMap(group=group, statistic=GroupStatistic.MEAN_FEATURE, channel=name,
                                     values=stacked.mean(axis=0), n_subjects=len(members)))

            explained = [by_id[s.meta.subject_id] for s in members if s.meta.subject_id in by_id]
            if not explained:
                continue
            values = np.stack([a.values for a in explained])
            names = explained[0].channel_names or [f"channel{i}" for i in range(values.shape[2])]
            for index, name in enumerate(names):
                maps.append(GroupMap(group=group, statistic=GroupStatistic.MEAN_ATTRIBUTION, channel=name,
                                     values=values[:, :, index].mean(axis=0), n_subjects=len(explained)))
                maps.append(GroupMap(group=group, statistic=GroupStatistic.MEAN_ABS_ATTRIBUTION, channel=name,
                                     values=np.abs(values[:, :, index]).mean(axis=0), n_subjects=len(explained)))
        return maps

    def _group_attributions(
        self,
        dataset: Dataset,
        attributions: Sequence[Attribution],
        group: Group,
        splits: Iterable[Split],
    ) -> Tuple[List[str], Optional[np.ndarray]]:
        members = {s.meta.subject_id for s in dataset.split(*tuple(splits)) if self.group_of(s.meta) == group}
        selected = [a for a in attributions if a.subject_id in members]
        if not selected:
            return [], None
        names = selected[0].channel_names or [f"channel{i}" for i in range(selected[0].values.shape[1])]
        return names, np.stack([a.values for a in selected])

    def channel_importance(
        self,
        dataset: Dataset,
        attributions: Sequence[Attribution],
        group: Group,
        splits: Iterable[Split] = (Split.VAL, Split.TEST),
    ) -> Dict[str, float]:
        """Vertex mean of each channel's mean_abs_attribution group map

        Equals the mean |attribution| over the group's subjects and all vertices.
        """
        names, values = self._group_attributions(dataset, attributions, group, splits)
        if values is None:
            return {}
        magnitude = np.abs(values).mean(axis=(0, 1))
        return {name: float(magnitude[index]) for index, name in enumerate(names)}

    def channel_total_importance(
        self,
        dataset: Dataset,
        attributions: Sequence[Attribution],
        group: Group,
        splits: Iterable[Split] = (Split.VAL, Split.TEST),
    ) -> Dict[str, float]:
        """Group mean of each channel's absolute attribution total (summed over vertices)"""
        names, values = self._group_attributions(dataset, attributions, group, splits)
        if values is None:
            return {}
        totals = np.abs(values.sum(axis=1)).mean(axis=0)
        return {name: float(totals[index]) for index, name in enumerate(names)}

    def write_attribution(self, attribution: Attribution, path: Union[str, Path]) -> Tuple[Path, Path]:
        """Write attr_<channel> maps as .sfeat plus a JSON sidecar"""
        path = Path(path)
        names = attribution.channel_names or [f"channel{i}" for i in range(attribution.values.shape[1])]
        field = FeatureField(channel_names=[f"attr_{name}" for name in names], values=attribution.values.T)
        write_features(field, path)
        sidecar = path.with_suffix(".json")
        write_json_atomic(sidecar, {
            "method": attribution.method.value,
            "subject_id": attribution.subject_id,
            "background_n": attribution.background_n,
            "completeness_residual": attribution.completeness_residual,
            "output_index": attribution.output_index,
            "output": attribution.output,
            "reference_output": attribution.reference_output,
        })
        return path, sidecar

    def write_group_maps(
        self,
        maps: Sequence[GroupMap],
        out_dir: Union[str, Path],
        method: Optional[AttributionMethod] = None,
        background_n: Optional[int] = None,
        output_index: int = 0,
    ) -> List[Path]:
        """One .sfeat (plus JSON sidecar) per group and statistic"""
        out_dir = Path(out_dir)
        written: List[Path] = []
        keys = []
        for m in maps:
            if (m.group, m.statistic) not in keys:
                keys.append((m.group, m.statistic))
        for group, statistic in keys:
            selected = [m for m in maps if m.group == group and m.statistic == statistic]
            field = FeatureField(channel_names=[m.name for m in selected], values=np.stack([m.values for m in selected]))
            path = out_dir / f"{group.value}_{statistic.value}.sfeat"
            write_features(field, path)
            write_json_atomic(path.with_suffix(".json"), {
                "group": group.value,
                "statistic": statistic.value,
                "n_subjects": selected[0].n_subjects,
                "method": method.value if method is not None else None,
                "background_n": background_n,
                "output_index": output_index,
            })
            written.append(path)
        logger.info(f"Wrote {len(written)} group map files to {out_dir}")
        return written


# Global attribution service instance
attribution_service = AttributionService()
