"""
Dataset model services: manifests, train-set standardization, folds and synthetic cohorts
"""

import csv
import io
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from corticast.core.config import settings
from corticast.core.errors import (
    DegenerateChannelError,
    InvalidArgumentError,
    ParseError,
    SchemaError,
)
from corticast.core.files import AtomicFileWriter
from corticast.schemas.dataset import (
    TARGET_NAMES,
    Dataset,
    DatasetSummary,
    FoldAssignment,
    Sex,
    Space,
    Split,
    StandardizationStats,
    Subject,
    SubjectMeta,
    SyntheticSpec,
    SyntheticTruth,
)
from corticast.schemas.mesh import FeatureField
from corticast.services.mesh_service import icosphere_vertex_count, mesh_service, order_for_vertex_count
from corticast.services.surface_io import read_features, write_features

logger = logging.getLogger(__name__)

MANIFEST_HEADER = [
    "subject_id",
    "split",
    "ga_birth_weeks",
    "pma_scan_weeks",
    "sex",
    "birthweight_kg",
    "head_circumference_cm",
    "feature_path",
]

# manifest column -> SubjectMeta field
_NUMERIC_COLUMNS = {
    "ga_birth_weeks": "ga_birth",
    "pma_scan_weeks": "pma_scan",
    "birthweight_kg": "birthweight",
    "head_circumference_cm": "head_circumference",
}

SYNTHETIC_CHANNELS = ["sulcal_depth", "curvature", "thickness", "myelin"]

DEGENERATE_STD = 1e-12


def _format_number(value: Optional[float]) -> str:
    return "" if value is None else repr(float(value))


def _smooth_basis(vertices: np.ndarray) -> np.ndarray:
    """Low-order polynomial basis on the sphere (V x 8), spatially smooth"""
    x, y, z = vertices[:, 0], vertices[:, 1], vertices[:, 2]
    return np.stack([x, y, z, x * y, y * z, z * x, x * x - y * y, 3.0 * z * z - 1.0], axis=1)


class DatasetService:
    """Service class for subject manifests, standardization and cohort generation"""

    def __init__(self):
        self.preterm_threshold = settings.PRETERM_THRESHOLD_WEEKS

    # ------------------------------------------------------------------
    # Manifests

    def _parse_row(self, row: Dict[str, str], line: int) -> SubjectMeta:
        fields = {"subject_id": row["subject_id"].strip()}
        split = row["split"].strip() or Split.UNASSIGNED.value
        try:
            fields["split"] = Split(split)
        except ValueError:
            raise ParseError(f"unknown split '{split}'", line)
        sex = row["sex"].strip() or Sex.UNKNOWN.value
        try:
            fields["sex"] = Sex(sex)
        except ValueError:
            raise ParseError(f"unknown sex '{sex}' (expected M, F or U)", line)
        for column, name in _NUMERIC_COLUMNS.items():
            cell = row[column].strip()
            if not cell:
                continue
            try:
                fields[name] = float(cell)
            except ValueError:
                raise ParseError(f"column {column} is not a number: '{cell}'", line)
        feature_path = row["feature_path"].strip()
        if not feature_path:
            raise ParseError("feature_path is empty", line)
        fields["feature_path"] = feature_path
        try:
            return SubjectMeta(**fields)
        except ValueError as e:
            raise ParseError(f"invalid subject metadata: {e}", line)

    def read_manifest_rows(self, path: Union[str, Path]) -> List[SubjectMeta]:
        """Parse and validate the manifest CSV without touching feature files"""
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as e:
            raise InvalidArgumentError(f"cannot read manifest {path}: {e}")
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header != MANIFEST_HEADER:
            raise ParseError(f"header must be exactly {','.join(MANIFEST_HEADER)}", 1)
        metas: List[SubjectMeta] = []
        seen = set()
        for cells in reader:
            line = reader.line_num
            if not cells or all(not cell.strip() for cell in cells):
                continue
            if len(cells) != len(MANIFEST_HEADER):
                raise ParseError(f"expected {len(MANIFEST_HEADER)} columns, found {len(cells)}", line)
            meta = self._parse_row(dict(zip(MANIFEST_HEADER, cells)), line)
            if meta.subject_id in seen:
                raise ParseError(f"duplicate subject_id '{meta.subject_id}'", line)
            seen.add(meta.subject_id)
            metas.append(meta)
        return metas

    def load_manifest(
        self,
        path: Union[str, Path],
        icosphere_order: Optional[int] = None,
        space: Space = Space.NATIVE,
    ) -> Dataset:
        """Load a manifest and every feature file it references"""
        path = Path(path)
        metas = self.read_manifest_rows(path)
        if not metas:
            logger.info(f"Manifest {path} has no subjects")
            return Dataset(icosphere_order=icosphere_order, space=space)

        base = path.parent
        workers = min(settings.resolved_threads(), len(metas))
        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            fields = list(pool.map(lambda meta: read_features(base / meta.feature_path), metas))

        if icosphere_order is None:
            icosphere_order = order_for_vertex_count(fields[0].n_vertices)
            if icosphere_order is None:
                raise SchemaError(
                    f"subject {metas[0].subject_id}: {fields[0].n_vertices} vertices is not an icosphere size",
                    details={"subject": metas[0].subject_id},
                )
        expected = icosphere_vertex_count(icosphere_order)
        channel_names = list(fields[0].channel_names)
        for meta, field in zip(metas, fields):
            if field.n_vertices != expected:
                raise SchemaError(
                    f"subject {meta.subject_id}: {field.n_vertices} vertices, expected {expected} (order {icosphere_order})",
                    details={"subject": meta.subject_id},
                )
            if field.channel_names != channel_names:
                raise SchemaError(
                    f"subject {meta.subject_id}: channels {field.channel_names} differ from {channel_names}",
                    details={"subject": meta.subject_id},
                )
        subjects = [Subject(meta=meta, features=field) for meta, field in zip(metas, fields)]
        logger.info(f"Loaded {len(subjects)} subjects on an order-{icosphere_order} icosphere from {path}")
        return Dataset(
            icosphere_order=icosphere_order,
            channel_names=channel_names,
            subjects=subjects,
            space=space,
        )

    def save_manifest(self, dataset: Dataset, path: Union[str, Path]) -> None:
        """Write the manifest CSV plus one feature file per subject"""
        path = Path(path)
        base = path.parent
        rows = []
        for subject in dataset.subjects:
            meta = subject.meta
            feature_path = meta.feature_path or f"features/{meta.subject_id}.sfeat"
            write_features(subject.features, base / feature_path)
            rows.append([
                meta.subject_id,
                meta.split.value,
                _format_number(meta.ga_birth),
                _format_number(meta.pma_scan),
                meta.sex.value,
                _format_number(meta.birthweight),
                _format_number(meta.head_circumference),
                feature_path,
            ])
        with AtomicFileWriter(path, "w", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(MANIFEST_HEADER)
            writer.writerows(rows)
        logger.info(f"Wrote manifest with {len(rows)} subjects to {path}")

    # ------------------------------------------------------------------
    # Standardization

    def fit_standardization(self, dataset: Dataset, split: Split = Split.TRAIN) -> StandardizationStats:
        """Per-channel and per-target mean/std over the given split (population std)"""
        subjects = dataset.split(split)
        if not subjects:
            raise InvalidArgumentError(f"cannot fit standardization: split '{split.value}' is empty")
        stacked = np.concatenate([subject.features.values for subject in subjects], axis=1)
        mean = stacked.mean(axis=1)
        std = stacked.std(axis=1)
        degenerate = [name for name, value in zip(dataset.channel_names, std) if value < DEGENERATE_STD]
        if degenerate:
            raise DegenerateChannelError(
                f"channels with zero variance in the {split.value} split: {', '.join(degenerate)}",
                details={"channels": degenerate},
            )

        target_mean: Dict[str, float] = {}
        target_std: Dict[str, float] = {}
        for name in TARGET_NAMES:
            values = np.array([s.meta.target(name) for s in subjects if s.meta.target(name) is not None])
            if values.size == 0:
                continue
            spread = float(values.std())
            if spread < DEGENERATE_STD:
                logger.warning(f"Target {name} has no spread in the {split.value} split; no statistics recorded")
                continue
            target_mean[name] = float(values.mean())
            target_std[name] = spread

        logger.info(f"Fitted standardization on {len(subjects)} {split.value} subjects")
        return StandardizationStats(
            channel_names=list(dataset.channel_names),
            channel_mean=[float(v) for v in mean],
            channel_std=[float(v) for v in std],
            target_mean=target_mean,
            target_std=target_std,
        )

    @staticmethod
    def _channel_index(stats: StandardizationStats, names: List[str]) -> List[int]:
        unknown = [name for name in names if name not in stats.channel_names]
        if unknown:
            raise SchemaError(f"no standardization statistics for channels: {', '.join(unknown)}")
        return [stats.channel_names.index(name) for name in names]

    def standardize_field(self, field: FeatureField, stats: StandardizationStats) -> FeatureField:
        index = self._channel_index(stats, field.channel_names)
        mean = np.array(stats.channel_mean)[index][:, None]
        std = np.array(stats.channel_std)[index][:, None]
        return FeatureField(channel_names=list(field.channel_names), values=(field.values - mean) / std)

    def unstandardize_field(self, field: FeatureField, stats: StandardizationStats) -> FeatureField:
        index = self._channel_index(stats, field.channel_names)
        mean = np.array(stats.channel_mean)[index][:, None]
        std = np.array(stats.channel_std)[index][:, None]
        return FeatureField(channel_names=list(field.channel_names), values=field.values * std + mean)

    @staticmethod
    def _target_stats(stats: StandardizationStats, target: str) -> Tuple[float, float]:
        if target not in stats.target_mean:
            raise SchemaError(f"no standardization statistics for target '{target}'")
        return stats.target_mean[target], stats.target_std[target]

    def standardize_target(self, value, target: str, stats: StandardizationStats):
        mean, std = self._target_stats(stats, target)
        return (np.asarray(value, dtype=np.float64) - mean) / std

    def unstandardize_target(self, value, target: str, stats: StandardizationStats):
        mean, std = self._target_stats(stats, target)
        return np.asarray(value, dtype=np.float64) * std + mean

    def apply_standardization(self, value, stats: StandardizationStats, target: str = "pma_scan"):
        """x -> (x - mean) / std: per channel for feature fields, per target for scalars"""
        if isinstance(value, FeatureField):
            return self.standardize_field(value, stats)
        return self.standardize_target(value, target, stats)

    # ------------------------------------------------------------------
    # Splits and cohort queries

    def make_cv_folds(self, dataset: Dataset, k: int, seed: int) -> List[FoldAssignment]:
        """Seeded shuffle into k balanced shards; fold i tests shard i and validates on shard i+1"""
        n = len(dataset)
        if k < 2:
            raise InvalidArgumentError(f"cross-validation needs k >= 2, got {k}")
        if k > n:
            raise InvalidArgumentError(f"cannot make {k} folds from {n} subjects")
        ids = dataset.subject_ids
        order = np.random.default_rng(seed).permutation(n)
        shards = [[ids[i] for i in shard] for shard in np.array_split(order, k)]
        folds = []
        for i in range(k):
            val_index = (i + 1) % k
            train = [sid for j, shard in enumerate(shards) if j not in (i, val_index) for sid in shard]
            folds.append(FoldAssignment(fold=i, train=train, val=list(shards[val_index]), test=list(shards[i])))
        return folds

    def is_preterm(self, meta: SubjectMeta) -> bool:
        return meta.ga_birth is not None and meta.ga_birth < self.preterm_threshold

    def is_term(self, meta: SubjectMeta) -> bool:
        return meta.ga_birth is not None and meta.ga_birth > self.preterm_threshold

    def dataset_summary(self, dataset: Dataset) -> DatasetSummary:
        metas = [subject.meta for subject in dataset.subjects]
        return DatasetSummary(
            total=len(metas),
            preterm=sum(1 for meta in metas if self.is_preterm(meta)),
            term=sum(1 for meta in metas if self.is_term(meta)),
            male=sum(1 for meta in metas if meta.sex == Sex.MALE),
            female=sum(1 for meta in metas if meta.sex == Sex.FEMALE),
        )

    def exclude_duplicate_scans(self, dataset: Dataset, task: str) -> Dataset:
        """Keep one scan per preterm participant scanned twice

        Scan-age regression keeps the earlier scan, birth-age regression (and the
        challenge, which regresses birth age) keeps the later one.
        """
        groups: Dict[str, List[Subject]] = {}
        for subject in dataset.subjects:
            groups.setdefault(subject.meta.participant, []).append(subject)
        keep_latest = task != "scan_age"
        excluded = set()
        for scans in groups.values():
            if len(scans) < 2 or not any(self.is_preterm(s.meta) for s in scans):
                continue
            # scans without a date sort last either way
            if keep_latest:
                kept = max(scans, key=lambda s: (s.meta.pma_scan is not None, s.meta.pma_scan or 0.0, s.meta.subject_id))
            else:
                kept = min(scans, key=lambda s: (s.meta.pma_scan is None, s.meta.pma_scan or 0.0, s.meta.subject_id))
            excluded.update(s.meta.subject_id for s in scans if s is not kept)
        if excluded:
            logger.warning(f"Excluded {len(excluded)} repeated preterm scans for {task}: {sorted(excluded)}")
        return dataset.with_subjects([s for s in dataset.subjects if s.meta.subject_id not in excluded])

    # ------------------------------------------------------------------
    # Synthetic cohorts

    def generate_synthetic(
        self,
        n_subjects: int,
        order: int,
        seed: int,
        spec: Optional[SyntheticSpec] = None,
    ) -> Tuple[Dataset, SyntheticTruth]:
        """Synthetic cohort whose 'myelin' channel carries the latent age

        The myelin channel's vertex mean is exactly intercept + slope * latent age.
        The other three channels are distractors: a smooth pattern shared by the
        whole cohort plus a per-subject departure scaled by distractor_variation.
        """
        if n_subjects < 1:
            raise InvalidArgumentError(f"n_subjects must be >= 1, got {n_subjects}")
        spec = spec or SyntheticSpec()
        rng = np.random.default_rng(seed)
        mesh = mesh_service.icosphere(order)
        basis = _smooth_basis(mesh.vertices)
        # own stream; subject metadata does not depend on the shared patterns
        shared = np.random.default_rng([seed, 1]).normal(0.0, 1.0, size=(3, basis.shape[1]))
        variation = spec.distractor_variation
        z = mesh.vertices[:, 2]

        myelin_base = 1.4 + 0.1 * basis[:, 6] + 0.05 * basis[:, 7]
        pattern = 1.0 + 0.3 * z
        pattern_mean = float(pattern.mean())
        intercept = float(myelin_base.mean()) - 40.0 * spec.signal_slope * pattern_mean
        slope = spec.signal_slope * pattern_mean

        subjects: List[Subject] = []
        latent_ages: Dict[str, float] = {}
        for i in range(n_subjects):
            subject_id = f"SYN{i:04d}_1"
            preterm = rng.random() < spec.preterm_fraction
            if preterm:
                ga = float(np.clip(rng.normal(32.0, 2.5), 24.0, 36.8))
                pma = float(np.clip(max(ga + 0.5, rng.normal(40.8, 1.6)), 26.0, 45.0))
            else:
                ga = float(np.clip(rng.normal(39.6, 1.1), 37.2, 42.5))
                pma = float(min(ga + rng.uniform(0.2, 3.5), 46.0))
            noise = rng.normal(0.0, 1.0) * spec.noise_sigma
            male = rng.random() < spec.male_fraction

            if spec.target == "pma_scan":
                latent = pma
                pma_obs = float(np.clip(latent + noise, 20.5, 49.5))
                ga_obs = min(ga, pma_obs - 0.1)
            else:
                latent = ga
                ga_obs = float(np.clip(latent + noise, 20.5, 49.5))
                pma_obs = max(pma, ga_obs + 0.1)

            birthweight = float(np.clip(3.4 + 0.19 * (ga_obs - 40.0) + rng.normal(0.0, 0.35), 0.4, 5.5))
            head = float(np.clip(34.5 + 0.7 * (ga_obs - 40.0) + rng.normal(0.0, 1.2), 20.0, 45.0))

            coefficients = rng.normal(0.0, 1.0, size=(3, basis.shape[1]))
            coefficients = shared + variation * coefficients
            sulcal_depth = 0.8 * basis @ coefficients[0] + variation * rng.normal(0.0, 0.1, mesh.n_vertices)
            curvature = 0.1 * basis @ coefficients[1] + variation * rng.normal(0.0, 0.02, mesh.n_vertices)
            thickness = 2.0 + 0.15 * basis @ coefficients[2] + variation * rng.normal(0.0, 0.05, mesh.n_vertices)
            spatial_noise = rng.normal(0.0, spec.signal_noise, mesh.n_vertices)
            spatial_noise -= spatial_noise.mean()
            myelin = myelin_base + spec.signal_slope * (latent - 40.0) * pattern + spatial_noise

            meta = SubjectMeta(
                subject_id=subject_id,
                ga_birth=ga_obs,
                pma_scan=pma_obs,
                sex=Sex.MALE if male else Sex.FEMALE,
                birthweight=birthweight,
                head_circumference=head,
                feature_path=f"features/{subject_id}.sfeat",
            )
            field = FeatureField(
                channel_names=list(SYNTHETIC_CHANNELS),
                values=np.stack([sulcal_depth, curvature, thickness, myelin]),
            )
            subjects.append(Subject(meta=meta, features=field))
            latent_ages[subject_id] = latent

        n_val = int(round(n_subjects * spec.val_fraction))
        n_test = int(round(n_subjects * spec.test_fraction))
        n_train = n_subjects - n_val - n_test
        order_index = rng.permutation(n_subjects)
        assignment: Dict[str, Split] = {}
        for rank, index in enumerate(order_index):
            split = Split.TRAIN if rank < n_train else Split.VAL if rank < n_train + n_val else Split.TEST
            assignment[subjects[index].meta.subject_id] = split

        dataset = Dataset(icosphere_order=order, channel_names=list(SYNTHETIC_CHANNELS), subjects=subjects)
        dataset = dataset.with_splits(assignment)
        truth = SyntheticTruth(
            signal_channel="myelin",
            target=spec.target,
            intercept=intercept,
            slope=slope,
            noise_sigma=spec.noise_sigma,
            seed=seed,
            latent=latent_ages,
        )
        logger.info(
            f"Generated {n_subjects} synthetic subjects ({n_train}/{n_val}/{n_test}) on an order-{order} icosphere"
        )
        return dataset, truth


# Global dataset service instance
dataset_service = DatasetService()
