"""
Test cases for the command line, run in-process through main()
"""

import json
import struct
from unittest.mock import patch

import numpy as np
import pytest

from corticast.cli.cli import parse_args, resolve_run_config
from corticast.main import main
from corticast.schemas.dataset import Split
from corticast.schemas.mesh import FeatureField
from corticast.schemas.reports import FoldResult
from corticast.services.dataset_service import dataset_service
from corticast.services.evaluation_service import EvaluationService
from corticast.services.mesh_service import mesh_service
from corticast.services.surface_io import read_features, write_features

FAST_FLAGS = ["--hidden-units", "6", "--n-blocks", "2", "--max-epochs", "5", "--batch-size", "8", "--patience", "3"]


def run(capsys, *argv):
    """Exit code, parsed stdout JSON (None when empty) and stderr of one command"""
    code = main([str(a) for a in argv])
    captured = capsys.readouterr()
    payload = json.loads(captured.out) if captured.out.strip() else None
    return code, payload, captured.err


@pytest.fixture
def cohort_dir(tmp_path, capsys):
    """Synthetic 40-subject cohort on an order-1 icosphere"""
    out = tmp_path / "cohort"
    code, payload, _ = run(capsys, "synth", "--subjects", 40, "--order", 1, "--seed", 3, "--out", out)
    assert code == 0
    assert payload["n_subjects"] == 40
    return out


class TestGeometryCommands:
    """Test cases for icosphere and resample"""

    @pytest.mark.parametrize("order,n_vertices,n_triangles", [(0, 12, 20), (6, 40962, 81920)])
    def test_icosphere_header(self, capsys, tmp_path, order, n_vertices, n_triangles):
        """Test the written header carries the vertex and triangle counts"""
        path = tmp_path / f"ico{order}.smesh"
        code, payload, _ = run(capsys, "icosphere", "--order", order, "--out", path)
        assert code == 0
        assert payload["n_vertices"] == n_vertices
        data = path.read_bytes()
        assert data[:4] == b"SMSH"
        assert struct.unpack("<II", data[8:16]) == (n_vertices, n_triangles)

    def test_icosphere_rerun_is_byte_identical(self, capsys, tmp_path):
        """Test two runs write the same bytes"""
        run(capsys, "icosphere", "--order", 3, "--out", tmp_path / "a.smesh")
        run(capsys, "icosphere", "--order", 3, "--out", tmp_path / "b.smesh")
        assert (tmp_path / "a.smesh").read_bytes() == (tmp_path / "b.smesh").read_bytes()

    def test_invalid_order(self, capsys, tmp_path):
        """Test an out-of-range order exits 2 with an error record"""
        code, payload, err = run(capsys, "icosphere", "--order", 9, "--out", tmp_path / "x.smesh")
        assert code == 2
        assert payload is None
        assert '"error_code":"INVALID_ARGUMENT"' in err
        assert not (tmp_path / "x.smesh").exists()

    def _mesh_and_field(self, capsys, tmp_path, values):
        mesh_path = tmp_path / "source.smesh"
        run(capsys, "icosphere", "--order", 2, "--out", mesh_path)
        field_path = tmp_path / "source.sfeat"
        write_features(FeatureField(channel_names=["thickness", "myelin"], values=values), field_path)
        return mesh_path, field_path

    def test_resample_identity(self, capsys, tmp_path):
        """Test resampling onto the same icosphere order reproduces the stored values"""
        values = np.random.default_rng(0).normal(size=(2, 162))
        mesh_path, field_path = self._mesh_and_field(capsys, tmp_path, values)
        out = tmp_path / "out.sfeat"
        code, payload, _ = run(capsys, "resample", "--mesh", mesh_path, "--features", field_path,
                               "--target-order", 2, "--out", out)
        assert code == 0
        assert payload["channels"] == ["thickness", "myelin"]
        assert np.array_equal(read_features(out).values, read_features(field_path).values)

    @pytest.mark.parametrize("mirror", [False, True])
    def test_resample_constant(self, capsys, tmp_path, mirror):
        """Test a constant field stays constant on a finer target, mirrored or not"""
        mesh_path, field_path = self._mesh_and_field(capsys, tmp_path, np.full((2, 162), 2.5))
        out = tmp_path / "out.sfeat"
        argv = ["resample", "--mesh", mesh_path, "--features", field_path, "--target-order", 3, "--out", out]
        code, payload, _ = run(capsys, *(argv + (["--mirror"] if mirror else [])))
        assert code == 0
        assert payload["n_vertices"] == 642
        assert payload["mirrored"] is mirror
        np.testing.assert_allclose(read_features(out).values, 2.5, atol=1e-6)

    def test_resample_vertex_mismatch(self, capsys, tmp_path):
        """Test features that do not match the mesh exit 3"""
        mesh_path, _ = self._mesh_and_field(capsys, tmp_path, np.zeros((2, 162)))
        field_path = tmp_path / "small.sfeat"
        write_features(FeatureField(channel_names=["myelin"], values=np.zeros((1, 12))), field_path)
        code, _, err = run(capsys, "resample", "--mesh", mesh_path, "--features", field_path,
                           "--out", tmp_path / "out.sfeat")
        assert code == 3
        assert "SCHEMA_ERROR" in err


class TestPipelineCommands:
    """Test cases for synth, summary, train, eval and explain"""

    def test_summary(self, capsys, cohort_dir):
        """Test cohort counts add up"""
        code, payload, _ = run(capsys, "summary", "--manifest", cohort_dir / "manifest.csv")
        assert code == 0
        assert payload["total"] == 40
        assert payload["male"] + payload["female"] == 40

    def test_train_then_eval(self, capsys, cohort_dir, tmp_path):
        """Test eval of the written checkpoint reproduces the test MAE of train_summary.json"""
        manifest = cohort_dir / "manifest.csv"
        out = tmp_path / "train"
        code, payload, _ = run(capsys, "train", "--manifest", manifest, "--out", out, "--seed", 1, *FAST_FLAGS)
        assert code == 0
        for name in ("model.mlpc", "train_log.csv", "train_summary.json"):
            assert (out / name).exists()
        summary = json.loads((out / "train_summary.json").read_text())
        assert summary["test_mae"] == payload["test_mae"]
        assert summary["test_subjects"] == 4

        code, report, _ = run(capsys, "eval", "--checkpoint", out / "model.mlpc", "--manifest", manifest,
                              "--report", tmp_path / "eval.json", "--csv", tmp_path / "eval.csv")
        assert code == 0
        assert report["mae"] == pytest.approx(summary["test_mae"], abs=1e-12)
        assert report["n_subjects"] == 4
        assert (tmp_path / "eval.csv").read_text().splitlines()[0] == "run_or_fold,mae_weeks"

    def test_train_is_deterministic(self, capsys, cohort_dir, tmp_path):
        """Test equal seeds write byte-identical checkpoints"""
        manifest = cohort_dir / "manifest.csv"
        for name in ("a", "b"):
            code, _, _ = run(capsys, "train", "--manifest", manifest, "--out", tmp_path / name, "--seed", 4, *FAST_FLAGS)
            assert code == 0
        assert (tmp_path / "a" / "model.mlpc").read_bytes() == (tmp_path / "b" / "model.mlpc").read_bytes()

    def test_explain(self, capsys, cohort_dir, tmp_path):
        """Test explain writes one attribution file per validation and test subject plus group maps"""
        manifest = cohort_dir / "manifest.csv"
        run(capsys, "train", "--manifest", manifest, "--out", tmp_path / "train", *FAST_FLAGS)
        out = tmp_path / "explain"
        code, payload, _ = run(capsys, "explain", "--checkpoint", tmp_path / "train" / "model.mlpc",
                               "--manifest", manifest, "--out", out, "--backgrounds", 8)
        assert code == 0
        assert payload["n_subjects"] == 8
        assert payload["max_completeness_residual"] <= 1e-5
        assert len(list((out / "subjects").glob("*.sfeat"))) == 8
        assert payload["group_files"]
        for key in ("importance", "total_importance"):
            for ranking in payload[key].values():
                assert set(ranking) <= {"sulcal_depth", "curvature", "thickness", "myelin"}

    def test_missing_metadata(self, capsys, tmp_path):
        """Test a train subject without GA at birth fails birth-age training with exit 4"""
        dataset, _ = dataset_service.generate_synthetic(40, 0, seed=1)
        victim = dataset.split(Split.TRAIN)[0].meta.subject_id
        dataset = dataset.with_subjects([
            s.model_copy(update={"meta": s.meta.model_copy(update={"ga_birth": None})})
            if s.meta.subject_id == victim else s
            for s in dataset.subjects
        ])
        manifest = tmp_path / "manifest.csv"
        dataset_service.save_manifest(dataset, manifest)
        code, _, err = run(capsys, "train", "--manifest", manifest, "--out", tmp_path / "train",
                           "--task", "birth_age", *FAST_FLAGS)
        assert code == 4
        assert "MISSING_METADATA" in err
        assert victim in err

    def test_missing_manifest_flag(self, capsys, tmp_path):
        """Test a command without its manifest is a usage error"""
        code, _, err = run(capsys, "train", "--out", tmp_path)
        assert code == 2
        assert "--manifest" in err


class TestProtocolCommands:
    """Test cases for cv and protocol"""

    def test_cv_ten_folds(self, capsys, tmp_path):
        """Test ten folds over 514 manifest rows give ten CSV rows"""
        out = tmp_path / "cohort"
        run(capsys, "synth", "--subjects", 514, "--order", 0, "--out", out)

        def _run(dataset, task, seed, train_config, model_overrides, index):
            return FoldResult(index=index, seed=seed, mae=1.0 + index / 10, n_test=len(dataset.split(Split.TEST)))

        with patch.object(EvaluationService, "_train_and_evaluate", side_effect=_run):
            code, payload, _ = run(capsys, "cv", "--manifest", out / "manifest.csv", "--out", tmp_path / "cv",
                                   "--folds", 10)
        assert code == 0
        assert payload["protocol"] == "cv"
        lines = (tmp_path / "cv" / "report.csv").read_text().splitlines()
        assert len(lines) == 11
        assert sum(r["n_test"] for r in payload["results"]) == 514

    def test_protocol_seeds(self, capsys, cohort_dir, tmp_path):
        """Test explicit seeds set the run count"""
        with patch.object(EvaluationService, "_train_and_evaluate",
                          side_effect=lambda d, t, seed, c, m, index: FoldResult(index=index, seed=seed, mae=0.5, n_test=4)):
            code, payload, _ = run(capsys, "protocol", "--manifest", cohort_dir / "manifest.csv",
                                   "--out", tmp_path / "runs", "--seeds", 7, 8, 9)
        assert code == 0
        assert [r["seed"] for r in payload["results"]] == [7, 8, 9]
        assert payload["best"] == 0.5


class TestConfiguration:
    """Test cases for flags, config files and help"""

    def test_help(self):
        """Test --help exits cleanly"""
        with pytest.raises(SystemExit) as excinfo:
            main(["--help"])
        assert excinfo.value.code == 0

    def test_unknown_command(self):
        """Test argparse rejects unknown commands with exit 2"""
        with pytest.raises(SystemExit) as excinfo:
            main(["fly"])
        assert excinfo.value.code == 2

    def test_precedence(self, tmp_path):
        """Test flags override the config file, which overrides defaults"""
        config = tmp_path / "run.json"
        config.write_text(json.dumps({"seed": 5, "hidden_units": 6, "task": "birth_age"}))
        args = parse_args(["train", "--config", str(config), "--seed", "7"])
        resolved = resolve_run_config(args)
        assert resolved.seed == 7
        assert resolved.hidden_units == 6
        assert resolved.task.value == "birth_age"
        assert resolved.batch_size == 32

    def test_unknown_config_key(self, capsys, tmp_path):
        """Test an unknown config key is a usage error"""
        config = tmp_path / "run.json"
        config.write_text(json.dumps({"learning_rat": 0.1}))
        code, _, err = run(capsys, "train", "--config", config, "--manifest", "m.csv", "--out", tmp_path)
        assert code == 2
        assert "INVALID_ARGUMENT" in err

    def test_icosphere_counts_match_service(self, capsys, tmp_path):
        """Test the command reports the counts of the service's mesh"""
        _, payload, _ = run(capsys, "icosphere", "--order", 2, "--out", tmp_path / "ico2.smesh")
        mesh = mesh_service.icosphere(2)
        assert (payload["n_vertices"], payload["n_triangles"]) == (mesh.n_vertices, mesh.n_triangles)


if __name__ == "__main__":
    pytest.main([__file__])
