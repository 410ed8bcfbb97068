"""
Test cases for DeepLIFT rescale, integrated gradients, the exact Shapley oracle and group maps
"""

import json

import numpy as np
import pytest

from corticast.core.errors import ContractViolationError, InvalidArgumentError
from corticast.schemas.attribution import AttributionMethod, Group, GroupStatistic
from corticast.schemas.dataset import Split
from corticast.schemas.mesh import FeatureField
from corticast.schemas.model import Activation, ModelConfig, Task
from corticast.services.attribution_service import (
    attribution_service,
    deeplift_rescale,
    exact_shapley,
    integrated_gradients,
    select_backgrounds,
)
from corticast.services.autonet import init_model, input_gradient, predict
from corticast.services.dataset_service import dataset_service
from corticast.services.surface_io import read_features
from tests.conftest import randomize_running_stats


def cells(seed, n_vertices=4, n_channels=4, scale=1.0):
    return np.random.default_rng(seed).normal(0.0, scale, size=(n_vertices, n_channels))


def tanh_model(seed, in_channels=4):
    config = ModelConfig(in_channels=in_channels, hidden_units=5, n_blocks=2)
    return randomize_running_stats(init_model(config, seed=seed), seed=seed + 100).eval()


class TestOracleAgreement:
    """Test cases for agreement with exact Shapley values on affine models"""

    def test_deeplift_matches_shapley(self, identity_model):
        """Test DeepLIFT against the single-background oracle on 16 cells"""
        x, baseline = cells(0), cells(1)
        oracle = exact_shapley(identity_model, x, baseline)
        deeplift = deeplift_rescale(identity_model, x, baseline)
        np.testing.assert_allclose(deeplift.values, oracle.values, atol=1e-8)

    def test_deeplift_background_average_matches_mean_baseline(self, identity_model):
        """Test averaging over backgrounds equals the oracle at the mean background"""
        x = cells(2)
        backgrounds = np.stack([cells(s) for s in range(3, 8)])
        oracle = exact_shapley(identity_model, x, backgrounds.mean(axis=0))
        deeplift = deeplift_rescale(identity_model, x, backgrounds)
        assert deeplift.background_n == 5
        np.testing.assert_allclose(deeplift.values, oracle.values, atol=1e-8)

    def test_integrated_gradients_matches_shapley(self, identity_model):
        """Test integrated gradients against the oracle, independent of the step count"""
        x, baseline = cells(8), cells(9)
        oracle = exact_shapley(identity_model, x, baseline)
        for steps in (1, 7, 256):
            ig = integrated_gradients(identity_model, x, baseline, steps=steps)
            np.testing.assert_allclose(ig.values, oracle.values, atol=1e-8)

    def test_linear_closed_form(self, identity_model):
        """Test Shapley values equal gradient times displacement on an affine model"""
        x, baseline = cells(10), cells(11)
        weights = input_gradient(identity_model, x[None])[0]
        oracle = exact_shapley(identity_model, x, baseline)
        np.testing.assert_allclose(oracle.values, weights * (x - baseline), atol=1e-10)


class TestAxioms:
    """Test cases for completeness, symmetry, efficiency and nullity"""

    @pytest.mark.parametrize("seed", range(4))
    def test_deeplift_completeness(self, seed):
        """Test each background's attributions sum to f(x) - f(r) on 12-vertex tanh models"""
        model = tanh_model(seed)
        x = cells(seed, n_vertices=12, scale=2.0)
        backgrounds = np.stack([cells(seed + 10 + b, n_vertices=12, scale=2.0) for b in range(4)])
        attribution = deeplift_rescale(model, x, backgrounds)
        assert attribution.completeness_residual <= 1e-6
        expected = predict(model, x[None])[0, 0] - predict(model, backgrounds)[:, 0].mean()
        assert attribution.total == pytest.approx(expected, abs=1e-6)

    def test_integrated_gradients_completeness(self):
        """Test the midpoint residual is at most 1e-3 at 256 steps and shrinks from 64 steps"""
        model = tanh_model(5)
        x, baseline = cells(20, n_vertices=12, scale=2.0), cells(21, n_vertices=12, scale=2.0)
        coarse = integrated_gradients(model, x, baseline, steps=64)
        fine = integrated_gradients(model, x, baseline, steps=256)
        assert fine.completeness_residual <= 1e-3
        assert fine.completeness_residual < coarse.completeness_residual

    def test_zero_displacement(self):
        """Test an input equal to its reference gets zero attribution"""
        model = tanh_model(6)
        x = cells(22, n_vertices=12)
        assert np.all(deeplift_rescale(model, x, x.copy()).values == 0.0)
        assert np.all(integrated_gradients(model, x, x.copy(), steps=8).values == 0.0)

    def test_shapley_efficiency_and_symmetry(self):
        """Test efficiency, and equal values for cells at duplicated vertices"""
        model = tanh_model(7)
        x, baseline = cells(23), cells(24)
        x[3], baseline[3] = x[1], baseline[1]
        oracle = exact_shapley(model, x, baseline)
        assert oracle.completeness_residual <= 1e-9
        np.testing.assert_allclose(oracle.values[3], oracle.values[1], atol=1e-10)

    def test_nullity(self):
        """Test a channel with zero first-layer weights gets zero attribution from every method"""
        model = tanh_model(8)
        model.arrays["block0.weight"][2, :] = 0.0
        x, baseline = cells(25), cells(26)
        for attribution in (
            exact_shapley(model, x, baseline),
            deeplift_rescale(model, x, baseline),
            integrated_gradients(model, x, baseline, steps=32),
        ):
            np.testing.assert_allclose(attribution.values[:, 2], 0.0, atol=1e-10)

    def test_integrated_gradients_linear_in_model(self):
        """Test attributions of f + g equal those of f plus those of g"""
        f, g = tanh_model(9), tanh_model(10)
        x, baseline = cells(27, n_vertices=12), cells(28, n_vertices=12)
        combined = integrated_gradients([f, g], x, baseline, steps=32)
        separate = integrated_gradients(f, x, baseline, steps=32).values + integrated_gradients(g, x, baseline, steps=32).values
        np.testing.assert_allclose(combined.values, separate, atol=1e-9)

    def test_scale_reports_natural_units(self, identity_model):
        """Test the output scale multiplies values and outputs"""
        x, baseline = cells(29), cells(30)
        unit = deeplift_rescale(identity_model, x, baseline)
        weeks = deeplift_rescale(identity_model, x, baseline, scale=2.5)
        np.testing.assert_allclose(weeks.values, 2.5 * unit.values, rtol=1e-15)
        assert weeks.output == pytest.approx(2.5 * unit.output)


class TestErrors:
    """Test cases for attribution preconditions"""

    def test_train_mode_model(self, tiny_model):
        """Test train-mode models are refused"""
        with pytest.raises(ContractViolationError):
            deeplift_rescale(tiny_model.train(), cells(0), cells(1))

    def test_steps(self, tiny_model):
        """Test integrated gradients needs at least one step"""
        with pytest.raises(InvalidArgumentError):
            integrated_gradients(tiny_model, cells(0), cells(1), steps=0)

    def test_too_many_cells(self, tiny_model):
        """Test the oracle refuses more than 16 cells"""
        with pytest.raises(InvalidArgumentError):
            exact_shapley(tiny_model, cells(0, n_vertices=5), cells(1, n_vertices=5))

    def test_output_index(self, tiny_model):
        """Test an output index beyond the head is invalid"""
        with pytest.raises(InvalidArgumentError):
            deeplift_rescale(tiny_model, cells(0), cells(1), output_index=1)

    def test_background_shape(self, tiny_model):
        """Test backgrounds must match the input shape"""
        with pytest.raises(InvalidArgumentError):
            deeplift_rescale(tiny_model, cells(0), cells(1, n_vertices=5))

    def test_select_backgrounds(self):
        """Test background draws are sorted, seeded and capped by the pool"""
        pool = np.zeros((10, 3, 4))
        first = select_backgrounds(pool, 4, seed=1)
        assert first.tolist() == sorted(first.tolist())
        assert np.array_equal(first, select_backgrounds(pool, 4, seed=1))
        assert select_backgrounds(pool, 32, seed=1).tolist() == list(range(10))


class TestGroupMaps:
    """Test cases for preterm and term group maps"""

    def _explain(self, dataset, method=AttributionMethod.DEEPLIFT_RESCALE):
        stats = dataset_service.fit_standardization(dataset)
        model = init_model(ModelConfig(hidden_units=4, n_blocks=2), seed=0)
        attributions = attribution_service.explain(model, dataset, stats, Task.SCAN_AGE, method,
                                                   n_backgrounds=6, steps=16)
        return stats, attributions

    def test_explain_covers_val_and_test(self, small_cohort):
        """Test every validation and test subject is explained in weeks"""
        stats, attributions = self._explain(small_cohort)
        expected = {s.meta.subject_id for s in small_cohort.split(Split.VAL, Split.TEST)}
        assert {a.subject_id for a in attributions} == expected
        for attribution in attributions:
            assert attribution.values.shape == (42, 4)
            assert attribution.background_n == 6
            assert attribution.background_split == Split.TRAIN
            assert attribution.completeness_residual <= 1e-6 * stats.target_std["pma_scan"]

    def test_absent_group(self, small_cohort):
        """Test a group without subjects has no maps"""
        subjects = [
            s.model_copy(update={"meta": s.meta.model_copy(update={"ga_birth": 40.0})})
            for s in small_cohort.subjects
        ]
        dataset = small_cohort.with_subjects(subjects)
        maps = attribution_service.group_maps(dataset, "myelin", [])
        assert {m.group for m in maps} == {Group.TERM}
        assert attribution_service.channel_importance(dataset, [], Group.PRETERM) == {}
        assert attribution_service.channel_total_importance(dataset, [], Group.PRETERM) == {}

    def test_constant_channel_map(self, small_cohort):
        """Test a constant channel averages to that constant"""
        subjects = []
        for s in small_cohort.subjects:
            values = s.features.values.copy()
            values[3] = 1.5
            subjects.append(s.model_copy(update={"features": FeatureField(channel_names=s.features.channel_names,
                                                                        values=values)}))
        maps = attribution_service.group_maps(small_cohort.with_subjects(subjects), "myelin", [])
        for m in maps:
            assert m.statistic == GroupStatistic.MEAN_FEATURE
            assert m.name == "mean_myelin"
            np.testing.assert_allclose(m.values, 1.5, atol=1e-12)

    def test_attribution_maps_and_files(self, small_cohort, tmp_path):
        """Test signed and absolute maps per channel, exported as .sfeat with sidecars"""
        _, attributions = self._explain(small_cohort)
        maps = attribution_service.group_maps(small_cohort, None, attributions)
        statistics = {m.statistic for m in maps}
        assert statistics == {GroupStatistic.MEAN_FEATURE, GroupStatistic.MEAN_ATTRIBUTION,
                              GroupStatistic.MEAN_ABS_ATTRIBUTION}
        for m in maps:
            assert m.values.shape == (42,)

        path, sidecar = attribution_service.write_attribution(attributions[0], tmp_path / "subjects" / "a.sfeat")
        field = read_features(path)
        assert field.channel_names == ["attr_sulcal_depth", "attr_curvature", "attr_thickness", "attr_myelin"]
        assert json.loads(sidecar.read_text())["method"] == "deeplift_rescale"

        written = attribution_service.write_group_maps(maps, tmp_path / "groups", AttributionMethod.DEEPLIFT_RESCALE, 6)
        names = {p.name for p in written}
        for group in {m.group for m in maps}:
            assert f"{group.value}_mean_abs_attribution.sfeat" in names
        meta = json.loads((tmp_path / "groups" / written[0].name.replace(".sfeat", ".json")).read_text())
        assert meta["background_n"] == 6

    def test_importance_is_vertex_mean_of_abs_map(self, small_cohort):
        """Test channel importance averages the mean_abs_attribution map over vertices"""
        _, attributions = self._explain(small_cohort)
        maps = attribution_service.group_maps(small_cohort, None, attributions)
        for group in {m.group for m in maps}:
            importance = attribution_service.channel_importance(small_cohort, attributions, group)
            abs_maps = [m for m in maps if m.group == group and m.statistic == GroupStatistic.MEAN_ABS_ATTRIBUTION]
            assert {m.channel for m in abs_maps} == set(importance)
            for m in abs_maps:
                assert importance[m.channel] == pytest.approx(float(m.values.mean()), rel=1e-12)

    def test_total_importance_sums_vertices_first(self, small_cohort):
        """Test the total ranking uses the absolute per-subject sum over vertices"""
        _, attributions = self._explain(small_cohort)
        members = {s.meta.subject_id for s in small_cohort.split(Split.VAL, Split.TEST)
                   if attribution_service.group_of(s.meta) == Group.TERM}
        selected = [a for a in attributions if a.subject_id in members]
        totals = attribution_service.channel_total_importance(small_cohort, attributions, Group.TERM)
        expected = np.mean([abs(a.values[:, 3].sum()) for a in selected])
        assert totals["myelin"] == pytest.approx(expected, rel=1e-12)
        magnitude = attribution_service.channel_importance(small_cohort, attributions, Group.TERM)
        assert magnitude["myelin"] >= totals["myelin"] / 42 - 1e-15

    def test_integrated_gradients_explain(self, small_cohort):
        """Test the service runs integrated gradients against the mean background"""
        _, attributions = self._explain(small_cohort, AttributionMethod.INTEGRATED_GRADIENTS)
        assert all(a.method == AttributionMethod.INTEGRATED_GRADIENTS for a in attributions)
        assert len(attributions) == 8


class TestBiomarkerRecovery:
    """Test cases for recovering the signal channel after training"""

    def test_signal_channel_ranks_first(self, trained_synthetic):
        """Test the myelin channel carries the largest mean absolute attribution in both groups"""
        dataset, truth, outcome = trained_synthetic
        attributions = attribution_service.explain(outcome.model, dataset, outcome.stats, Task.SCAN_AGE)
        maps = attribution_service.group_maps(dataset, None, attributions)
        for group in (Group.PRETERM, Group.TERM):
            importance = attribution_service.channel_importance(dataset, attributions, group)
            assert importance, f"no {group.value} subjects"
            signal = importance.pop(truth.signal_channel)
            assert signal > max(importance.values()), group.value

            abs_maps = {m.channel: float(m.values.mean()) for m in maps
                        if m.group == group and m.statistic == GroupStatistic.MEAN_ABS_ATTRIBUTION}
            assert max(abs_maps, key=abs_maps.get) == truth.signal_channel

            totals = attribution_service.channel_total_importance(dataset, attributions, group)
            assert max(totals, key=totals.get) == truth.signal_channel

    def test_identity_activation_config(self):
        """Test the affine oracle model keeps its activation through a checkpoint config"""
        config = ModelConfig(activation=Activation.IDENTITY)
        assert ModelConfig(**config.model_dump(mode="json")).activation == Activation.IDENTITY


if __name__ == "__main__":
    pytest.main([__file__])
