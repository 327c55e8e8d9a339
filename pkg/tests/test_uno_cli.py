import json

import numpy as np
import pandas as pd
import pytest

from metrics import REPORT_KEYS
from openset_net import load_model
from synthgen import load_bundle
from tensor_io import directory_digest, load_tensor
from uno_cli import evaluate_image_wide, main, outlier_sets

SMALL = ["--set", "seed=0", "--set", "n_train=120", "--set", "n_val=60", "--set", "n_test=60",
         "--set", "n_negatives=120", "--set", "n_near=60", "--set", "n_far=60"]


@pytest.fixture(autouse=True)
def workspace(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv("UNO_OUTPUT_DIR", str(tmp_path / "runs"))
    monkeypatch.setenv("UNO_WORKERS", "1")
    return tmp_path


def _write(path, payload):
    path.write_text(json.dumps(payload))
    return str(path)


@pytest.fixture
def bundle_dir(workspace):
    assert main(["gen-data", "--out", str(workspace / "data"), *SMALL]) == 0
    return workspace / "data"


@pytest.fixture
def trained(workspace, bundle_dir, fast_cfg):
    cfg = _write(workspace / "train.json", fast_cfg.model_dump(mode="json"))
    assert main(["train", "closed", "--data", str(bundle_dir), "--config", cfg, "--out", str(workspace / "closed")]) == 0
    assert main(["train", "finetune-real", "--data", str(bundle_dir), "--config", cfg,
                 "--model", str(workspace / "closed" / "model"), "--out", str(workspace / "real")]) == 0
    return workspace / "real" / "model"


class TestGenData:
    def test_reruns_are_identical(self, workspace, bundle_dir, capsys):
        capsys.readouterr()
        assert main(["gen-data", "--out", str(workspace / "again"), *SMALL]) == 0
        assert "digest" in capsys.readouterr().out
        assert directory_digest(bundle_dir) == directory_digest(workspace / "again")
        assert load_bundle(bundle_dir).spec.n_train == 120

    def test_usage_errors(self, workspace):
        assert main(["gen-data"]) == 2
        assert main(["frobnicate"]) == 2
        assert main(["train", "sideways", "--data", "x"]) == 2

    def test_help_writes_nothing(self, workspace):
        assert main(["--help"]) == 0
        assert main(["eval", "--model", "m"]) == 2
        assert not (workspace / "runs").exists()
        assert not (workspace / "uno_runs").exists()

    def test_bad_spec_key(self, workspace, capsys):
        assert main(["gen-data", "--out", str(workspace / "d"), "--set", "seed=0", "--set", "colour=red"]) == 1
        assert "colour" in capsys.readouterr().err


class TestTrain:
    def test_finetune_needs_a_model(self, bundle_dir, capsys):
        assert main(["train", "finetune-real", "--data", str(bundle_dir), "--set", "seed=0"]) == 1
        assert "--model" in capsys.readouterr().err

    def test_negatives_flag_is_dense_only(self, bundle_dir):
        assert main(["train", "closed", "--data", str(bundle_dir), "--set", "seed=0", "--negatives", "flow"]) == 1

    def test_missing_bundle(self, workspace):
        assert main(["train", "closed", "--data", str(workspace / "nowhere"), "--set", "seed=0"]) == 1

    def test_artifacts(self, workspace, trained):
        run = workspace / "real"
        for name in ("config.json", "loss_log.csv", "model/manifest.json"):
            assert (run / name).exists()
        assert json.loads((run / "config.json").read_text())["seed"] == 0
        assert len(pd.read_csv(run / "loss_log.csv")) == 40

    def test_default_output_dir(self, workspace, bundle_dir, fast_cfg):
        cfg = _write(workspace / "train.json", fast_cfg.model_dump(mode="json"))
        assert main(["train", "closed", "--data", str(bundle_dir), "--config", cfg]) == 0
        assert (workspace / "runs" / "closed" / "model" / "manifest.json").exists()


class TestEval:
    def test_report_shape(self, workspace, bundle_dir, trained):
        out = workspace / "eval.json"
        assert main(["eval", "--model", str(trained), "--data", str(bundle_dir), "--out", str(out)]) == 0
        payload = json.loads(out.read_text())
        assert set(REPORT_KEYS) <= set(payload)
        assert payload["primary_set"] == "union" and payload["model_kind"] == "openset-model"
        assert sorted(payload["sets"]) == ["far", "near", "union"]
        assert (payload["n_pos"], payload["n_neg"]) == (120, 60)
        assert np.array(payload["cosine"]).shape == (4, 4)
        curves = workspace / "eval_curves"
        for name in ("union_uno_roc.csv", "near_uno_pr.csv", "far_uno_hist.csv"):
            assert (curves / name).exists()

    def test_reruns_are_byte_identical(self, workspace, bundle_dir, trained):
        outs = [workspace / "a.json", workspace / "b.json"]
        for out, workers in zip(outs, ("1", "3")):
            assert main(["eval", "--model", str(trained), "--data", str(bundle_dir), "--score", "unc",
                         "--workers", workers, "--out", str(out)]) == 0
        assert outs[0].read_bytes() == outs[1].read_bytes()

    def test_matches_library(self, workspace, bundle_dir, trained):
        out = workspace / "eval.json"
        assert main(["eval", "--model", str(trained), "--data", str(bundle_dir), "--score", "no", "--out", str(out)]) == 0
        payload, scored = evaluate_image_wide(load_model(trained), load_bundle(bundle_dir), "no")
        assert json.loads(out.read_text()) == json.loads(json.dumps(payload))
        assert list(scored) == list(outlier_sets(load_bundle(bundle_dir)))

    def test_bad_arguments(self, workspace, bundle_dir, trained):
        args = ["eval", "--model", str(trained), "--data", str(bundle_dir), "--out", str(workspace / "e.json")]
        assert main(args + ["--workers", "0"]) == 1
        assert main(args + ["--score", "energy"]) == 2
        assert main(["eval", "--model", str(workspace / "none"), "--data", str(bundle_dir),
                     "--out", str(workspace / "e.json")]) == 1


class TestDiagnose:
    def test_tables(self, workspace, bundle_dir, trained):
        out = workspace / "diag"
        assert main(["diagnose", "--model", str(trained), "--data", str(bundle_dir), "--out", str(out)]) == 0
        samples = pd.read_csv(out / "samples.csv")
        assert len(samples) == 60 + 60 + 60
        assert samples["angle"].between(0.0, np.pi).all()
        assert set(samples["dataset"]) == {"test", "near", "far"}
        assert (samples.loc[samples["dataset"] != "test", "label"] == 3).all()
        cos = pd.read_csv(out / "cosine_matrix.csv", index_col="class")
        assert cos.shape == (4, 4)
        np.testing.assert_allclose(np.diag(cos.to_numpy()), 1.0)

    def test_closed_checkpoint_has_no_negative(self, workspace, bundle_dir, trained):
        assert main(["diagnose", "--model", str(workspace / "closed" / "model"), "--data", str(bundle_dir),
                     "--out", str(workspace / "diag")]) == 1

    def test_ood_head_checkpoint(self, workspace, bundle_dir, trained, fast_cfg):
        cfg = _write(workspace / "train.json", fast_cfg.model_dump(mode="json"))
        assert main(["train", "ood-head", "--data", str(bundle_dir), "--config", cfg,
                     "--model", str(workspace / "closed" / "model"), "--out", str(workspace / "ood")]) == 0
        assert main(["diagnose", "--model", str(workspace / "ood" / "model"), "--data", str(bundle_dir)]) == 0
        out = workspace / "runs" / "diagnose"
        samples = pd.read_csv(out / "samples.csv")
        assert len(samples) == 60 + 60 + 60
        assert samples["s_no"].between(0.0, 1.0).all()
        assert samples["angle"].isna().all()
        assert pd.read_csv(out / "cosine_matrix.csv", index_col="class").shape == (3, 3)


class TestDense:
    def test_dense_pipeline(self, workspace, dense_spec, fast_dense_cfg):
        spec = _write(workspace / "spec.json", dense_spec.model_dump(mode="json"))
        cfg = _write(workspace / "dense.json", fast_dense_cfg.model_dump(mode="json"))
        data = str(workspace / "dense_data")
        assert main(["gen-data", "--spec", spec, "--out", data]) == 0
        assert main(["train", "dense", "--data", data, "--config", cfg, "--out", str(workspace / "dense")]) == 0
        out = workspace / "dense_eval.json"
        assert main(["eval", "--model", str(workspace / "dense" / "model"), "--data", data, "--out", str(out)]) == 0
        payload = json.loads(out.read_text())
        assert payload["model_kind"] == "dense-model"
        assert payload["n_pos"] > 0 and payload["n_neg"] > 0
        assert "uno_ap" in payload["dense"]
        curves = workspace / "dense_eval_curves"
        pixels = pd.read_csv(curves / "pixels.csv")
        assert len(pixels) == 4 * 8 * 8
        assert load_tensor(curves / "maps" / "scene_0000_uno.unot").shape == (8, 8)
        assert main(["diagnose", "--model", str(workspace / "dense" / "model"), "--data", data,
                     "--out", str(workspace / "diag")]) == 1
