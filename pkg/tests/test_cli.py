"""Tests for the command-line interface."""

import io
import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from scipy.special import expit

from glmpath.cli import build_parser, main
from glmpath.config import Settings

ENV_VARS = [f"GLMPATH_{name.upper()}" for name in Settings.model_fields]


@pytest.fixture(autouse=True)
def clean_env(monkeypatch, tmp_path):
    """Run every command from an empty directory with no GLMPATH_* variables."""
    monkeypatch.chdir(tmp_path)
    for var in ENV_VARS:
        # registered with monkeypatch so values loaded from .env files are undone too
        monkeypatch.setenv(var, "")
        monkeypatch.delenv(var)


@pytest.fixture
def gaussian_csv(tmp_path) -> Path:
    rng = np.random.default_rng(51)
    X = rng.normal(size=(40, 3))
    frame = pd.DataFrame(X, columns=["x1", "x2", "x3"])
    frame.insert(0, "y", 2.0 + X[:, 0] - X[:, 1] + rng.normal(size=40))
    path = tmp_path / "train.csv"
    frame.to_csv(path, index=False)
    return path


@pytest.fixture
def binomial_csv(tmp_path) -> Path:
    rng = np.random.default_rng(52)
    X = rng.normal(size=(60, 2))
    frame = pd.DataFrame(X, columns=["x1", "x2"])
    frame["y"] = (rng.random(60) < expit(2.0 * X[:, 0])).astype(int)
    path = tmp_path / "binary.csv"
    frame.to_csv(path, index=False)
    return path


@pytest.fixture
def survival_csv(tmp_path) -> Path:
    rng = np.random.default_rng(53)
    X = rng.normal(size=(50, 2))
    frame = pd.DataFrame(X, columns=["x1", "x2"])
    frame["time"] = rng.exponential(np.exp(-X[:, 0])) + 0.01
    frame["status"] = (rng.random(50) < 0.8).astype(int)
    frame["group"] = np.where(np.arange(50) % 2 == 0, "a", "b")
    path = tmp_path / "surv.csv"
    frame.to_csv(path, index=False)
    return path


def _last_error(capsys: pytest.CaptureFixture[str]) -> dict:
    err = capsys.readouterr().err
    return json.loads(err.strip().splitlines()[-1])


def _stdout_frame(capsys: pytest.CaptureFixture[str]) -> pd.DataFrame:
    return pd.read_csv(io.StringIO(capsys.readouterr().out))


class TestParser:
    def test_version(self, capsys):
        with pytest.raises(SystemExit) as exc_info:
            main(["--version"])
        assert exc_info.value.code == 0
        assert "glmpath" in capsys.readouterr().out

    def test_stop_is_an_alias_for_time(self):
        args = build_parser().parse_args(["fit", "--data", "d.csv", "--stop", "t", "--out", "m.json"])
        assert args.time == "t"

    def test_command_required(self):
        with pytest.raises(SystemExit):
            main([])


class TestFitAndPredict:
    """fit followed by predict."""

    def test_fit_writes_model(self, gaussian_csv, tmp_path, capsys):
        out = tmp_path / "model.json"
        assert main(["fit", "--data", str(gaussian_csv), "--response", "y", "--out", str(out), "--summary"]) == 0
        doc = json.loads(out.read_text(encoding="utf-8"))
        assert doc["document"] == "model"
        assert doc["feature_names"] == ["x1", "x2", "x3"]
        assert "%Dev" in capsys.readouterr().out

    def test_lambda_max_predicts_the_mean(self, gaussian_csv, tmp_path, capsys):
        out = tmp_path / "model.json"
        main(["fit", "--data", str(gaussian_csv), "--response", "y", "--out", str(out)])
        capsys.readouterr()
        assert main(["predict", "--data", str(gaussian_csv), "--model", str(out), "--s", "lambda.max"]) == 0
        preds = _stdout_frame(capsys)
        assert list(preds.columns) == ["row", "s=lambda.max"]
        y = pd.read_csv(gaussian_csv)["y"].to_numpy()
        np.testing.assert_allclose(preds["s=lambda.max"], y.mean(), rtol=1e-10)

    def test_default_predicts_every_lambda(self, gaussian_csv, tmp_path, capsys):
        out = tmp_path / "model.json"
        main(["fit", "--data", str(gaussian_csv), "--response", "y", "--nlambda", "7", "--out", str(out)])
        n_lambdas = len(json.loads(out.read_text(encoding="utf-8"))["lambdas"])
        capsys.readouterr()
        pred_out = tmp_path / "preds.csv"
        main(["predict", "--data", str(gaussian_csv), "--model", str(out), "--out", str(pred_out)])
        assert pd.read_csv(pred_out).shape == (40, n_lambdas + 1)

    def test_cv_alias_on_plain_model(self, gaussian_csv, tmp_path, capsys):
        out = tmp_path / "model.json"
        main(["fit", "--data", str(gaussian_csv), "--response", "y", "--out", str(out)])
        capsys.readouterr()
        assert main(["predict", "--data", str(gaussian_csv), "--model", str(out), "--s", "lambda.min"]) == 1
        error = _last_error(capsys)
        assert error["error"] == "ConfigError"
        assert "cross-validation" in error["message"]

    def test_relaxed_columns(self, gaussian_csv, tmp_path, capsys):
        out = tmp_path / "model.json"
        main(["fit", "--data", str(gaussian_csv), "--response", "y", "--relax", "--nlambda", "5", "--out", str(out)])
        capsys.readouterr()
        main(["predict", "--data", str(gaussian_csv), "--model", str(out), "--s", "0.1", "--gamma", "0,1"])
        assert list(_stdout_frame(capsys).columns) == ["row", "s=0.1,gamma=0", "s=0.1,gamma=1"]

    def test_gamma_needs_relaxed_model(self, gaussian_csv, tmp_path, capsys):
        out = tmp_path / "model.json"
        main(["fit", "--data", str(gaussian_csv), "--response", "y", "--out", str(out)])
        capsys.readouterr()
        assert main(["predict", "--data", str(gaussian_csv), "--model", str(out), "--gamma", "0.5"]) == 1
        assert "--relax" in _last_error(capsys)["message"]


class TestCv:
    def test_cv_writes_document_and_plot(self, gaussian_csv, tmp_path, capsys):
        out = tmp_path / "cv.json"
        args = ["cv", "--data", str(gaussian_csv), "--response", "y", "--nfolds", "4", "--nlambda", "20"]
        assert main([*args, "--out", str(out)]) == 0
        doc = json.loads(out.read_text(encoding="utf-8"))
        assert doc["document"] == "cv"
        assert doc["nfolds"] == 4
        plot = pd.read_csv(tmp_path / "cv.plot.csv")
        assert list(plot.columns) == ["log_lambda", "cvm", "cvup", "cvlo", "nzero"]

        capsys.readouterr()
        main(["predict", "--data", str(gaussian_csv), "--model", str(out)])
        assert list(_stdout_frame(capsys).columns) == ["row", "s=lambda.1se"]

    def test_seed_from_environment(self, gaussian_csv, tmp_path, monkeypatch):
        monkeypatch.setenv("GLMPATH_SEED", "9")
        out = tmp_path / "cv.json"
        main(["cv", "--data", str(gaussian_csv), "--response", "y", "--nfolds", "3", "--nlambda", "5", "--out", str(out)])
        assert json.loads(out.read_text(encoding="utf-8"))["seed"] == 9


class TestAssess:
    def test_model_mode(self, gaussian_csv, tmp_path, capsys):
        out = tmp_path / "model.json"
        main(["fit", "--data", str(gaussian_csv), "--response", "y", "--out", str(out)])
        capsys.readouterr()
        assert main(["assess", "--data", str(gaussian_csv), "--response", "y", "--model", str(out), "--s", "lambda.max,0.01"]) == 0
        table = _stdout_frame(capsys)
        assert list(table.columns) == ["s", "lambda", "deviance", "mse", "mae"]
        assert table["mse"].iloc[1] < table["mse"].iloc[0]

    def test_confusion_and_roc(self, binomial_csv, tmp_path, capsys):
        out = tmp_path / "model.json"
        main(["fit", "--data", str(binomial_csv), "--response", "y", "--family", "binomial", "--out", str(out)])
        capsys.readouterr()
        roc = tmp_path / "roc.csv"
        args = ["assess", "--data", str(binomial_csv), "--response", "y", "--model", str(out), "--s", "0.01"]
        assert main([*args, "--confusion", "--roc-out", str(roc)]) == 0
        assert "Percent Correct" in capsys.readouterr().out
        curve = pd.read_csv(roc)
        assert curve["fpr"].iloc[0] == 0.0
        assert curve["tpr"].iloc[-1] == 1.0

    def test_predictions_mode(self, gaussian_csv, tmp_path, capsys):
        out = tmp_path / "model.json"
        main(["fit", "--data", str(gaussian_csv), "--response", "y", "--out", str(out)])
        preds = tmp_path / "preds.csv"
        main(["predict", "--data", str(gaussian_csv), "--model", str(out), "--s", "lambda.max", "--out", str(preds)])
        capsys.readouterr()
        assert main(["assess", "--data", str(gaussian_csv), "--response", "y", "--predictions", str(preds)]) == 0
        table = _stdout_frame(capsys)
        assert table["prediction"].tolist() == ["s=lambda.max"]
        y = pd.read_csv(gaussian_csv)["y"].to_numpy()
        assert table["mse"].iloc[0] == pytest.approx(np.mean((y - y.mean()) ** 2), rel=1e-8)

    def test_model_or_predictions_required(self, gaussian_csv, capsys):
        assert main(["assess", "--data", str(gaussian_csv), "--response", "y"]) == 1
        assert _last_error(capsys)["error"] == "ConfigError"


class TestSurvcurve:
    def test_stratified_curves(self, survival_csv, tmp_path, capsys):
        out = tmp_path / "cox.json"
        fit_args = ["fit", "--data", str(survival_csv), "--family", "cox", "--time", "time", "--status", "status"]
        assert main([*fit_args, "--strata", "group", "--nlambda", "10", "--out", str(out)]) == 0
        capsys.readouterr()
        assert main(["survcurve", "--data", str(survival_csv), "--model", str(out), "--strata", "group"]) == 0
        curves = _stdout_frame(capsys)
        assert list(curves.columns) == ["time", "survival", "stratum", "row"]
        assert set(curves["stratum"]) == {"a", "b"}
        assert curves["survival"].between(0.0, 1.0).all()

    def test_off_path_lambda_needs_training_data(self, survival_csv, tmp_path, capsys):
        out = tmp_path / "cox.json"
        fit_args = ["fit", "--data", str(survival_csv), "--family", "cox", "--time", "time", "--status", "status"]
        main([*fit_args, "--strata", "group", "--out", str(out)])
        capsys.readouterr()
        args = ["survcurve", "--data", str(survival_csv), "--model", str(out), "--strata", "group", "--s", "0.0123"]
        assert main(args) == 1
        assert "--train" in _last_error(capsys)["message"]
        assert main([*args, "--train", str(survival_csv), "--time", "time", "--status", "status"]) == 0

    def test_glm_model_rejected(self, gaussian_csv, tmp_path, capsys):
        out = tmp_path / "model.json"
        main(["fit", "--data", str(gaussian_csv), "--response", "y", "--out", str(out)])
        capsys.readouterr()
        assert main(["survcurve", "--data", str(gaussian_csv), "--model", str(out)]) == 1
        assert _last_error(capsys)["error"] == "FamilyError"


class TestErrors:
    """Failures are reported as one JSON object on stderr."""

    def test_missing_file(self, tmp_path, capsys):
        code = main(["fit", "--data", str(tmp_path / "nope.csv"), "--response", "y", "--out", str(tmp_path / "m.json")])
        assert code == 1
        error = _last_error(capsys)
        assert error["error"] == "DataError"
        assert error["details"]["path"].endswith("nope.csv")

    def test_undecodable_csv(self, tmp_path, capsys):
        data = tmp_path / "bad.csv"
        data.write_bytes(b"x,y\n1,2\n\xff\xfe,3\n")
        code = main(["fit", "--data", str(data), "--response", "y", "--out", str(tmp_path / "m.json")])
        assert code == 1
        error = _last_error(capsys)
        assert error["error"] == "DataError"
        assert "not valid UTF-8" in error["message"]
        assert not (tmp_path / "m.json").exists()

    def test_invalid_alpha(self, gaussian_csv, tmp_path, capsys):
        code = main(["fit", "--data", str(gaussian_csv), "--response", "y", "--alpha", "2", "--out", str(tmp_path / "m.json")])
        assert code == 1
        error = _last_error(capsys)
        assert error["error"] == "ConfigError"
        assert error["details"]["errors"][0]["field"] == "alpha"

    def test_invalid_environment(self, gaussian_csv, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("GLMPATH_THREADS", "zero")
        code = main(["fit", "--data", str(gaussian_csv), "--response", "y", "--out", str(tmp_path / "m.json")])
        assert code == 1
        assert _last_error(capsys)["details"]["variable"] == "GLMPATH_THREADS"

    def test_cox_without_status(self, survival_csv, tmp_path, capsys):
        code = main(["fit", "--data", str(survival_csv), "--family", "cox", "--out", str(tmp_path / "m.json")])
        assert code == 1
        assert _last_error(capsys)["error"] == "DataError"
