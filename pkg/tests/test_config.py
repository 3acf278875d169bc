"""Tests for environment-driven settings."""

import pytest

from glmpath.config import Settings
from glmpath.exceptions import ConfigError

ENV_VARS = [f"GLMPATH_{name.upper()}" for name in Settings.model_fields]


@pytest.fixture(autouse=True)
def clean_env(monkeypatch, tmp_path):
    monkeypatch.chdir(tmp_path)
    for var in ENV_VARS:
        # registered with monkeypatch so values loaded from .env files are undone too
        monkeypatch.setenv(var, "")
        monkeypatch.delenv(var)


class TestSettings:
    """Settings.from_env."""

    def test_defaults(self):
        settings = Settings.from_env(load_files=False)
        assert settings.log_level == "INFO"
        assert settings.threads == 1
        assert settings.seed == 0
        assert settings.tol == 1e-7

    def test_environment_values(self, monkeypatch):
        monkeypatch.setenv("GLMPATH_THREADS", "4")
        monkeypatch.setenv("GLMPATH_LOG_LEVEL", " debug ")
        monkeypatch.setenv("GLMPATH_TOL", "1e-9")
        settings = Settings.from_env(load_files=False)
        assert settings.threads == 4
        assert settings.log_level == "DEBUG"
        assert settings.tol == 1e-9

    def test_blank_values_use_defaults(self, monkeypatch):
        monkeypatch.setenv("GLMPATH_SEED", "   ")
        assert Settings.from_env(load_files=False).seed == 0

    def test_dotenv_file(self, tmp_path):
        """Test that a .env file in the working directory is read."""
        (tmp_path / ".env").write_text("GLMPATH_SEED=17\n", encoding="utf-8")
        assert Settings.from_env().seed == 17

    def test_environment_wins_over_dotenv(self, tmp_path, monkeypatch):
        (tmp_path / ".env").write_text("GLMPATH_SEED=17\n", encoding="utf-8")
        monkeypatch.setenv("GLMPATH_SEED", "3")
        assert Settings.from_env().seed == 3

    @pytest.mark.parametrize(
        "variable, value",
        [("GLMPATH_THREADS", "0"), ("GLMPATH_LOG_LEVEL", "LOUD"), ("GLMPATH_TOL", "-1"), ("GLMPATH_SEED", "x")],
    )
    def test_invalid_values(self, monkeypatch, variable, value):
        monkeypatch.setenv(variable, value)
        with pytest.raises(ConfigError, match=f"Invalid value for {variable}") as exc_info:
            Settings.from_env(load_files=False)
        assert exc_info.value.details == {"variable": variable}
