"""Runtime settings read from the environment and optional .env files."""

import logging
import os
from pathlib import Path

from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError, field_validator

from .exceptions import ConfigError

logger = logging.getLogger(__name__)

ENV_PREFIX = "GLMPATH_"
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


class Settings(BaseModel):
    """Process-wide defaults. Command-line flags take precedence over these."""

    log_level: str = Field(default="INFO", description="Root logging level")
    threads: int = Field(default=1, ge=1, description="Worker threads for CV folds and relaxed refits")
    seed: int = Field(default=0, ge=0, description="Seed for CV fold assignment")
    tol: float = Field(default=1e-7, gt=0, description="Coordinate descent convergence tolerance")
    max_passes: int = Field(default=100_000, ge=1, description="Maximum coordinate descent sweeps per solve")

    @field_validator("log_level")
    @classmethod
    def check_log_level(cls, v: str) -> str:
        """Normalise and validate the log level name."""
        level = v.strip().upper()
        if level not in LOG_LEVELS:
            raise ValueError(f"log level must be one of {', '.join(LOG_LEVELS)}")
        return level

    @classmethod
    def from_env(cls, load_files: bool = True) -> "Settings":
        """Build settings from GLMPATH_* environment variables.

        A ``.env`` file in the working directory is loaded first, then the default
        dotenv search. Variables already set in the environment win.
        """
        if load_files:
            cwd_env = Path.cwd() / ".env"
            if cwd_env.exists():
                load_dotenv(cwd_env)
                logger.debug(f"Loaded environment from {cwd_env}")
            load_dotenv()

        values: dict[str, str] = {}
        for name in cls.model_fields:
            raw = os.getenv(f"{ENV_PREFIX}{name.upper()}")
            if raw is not None and raw.strip():
                values[name] = raw.strip()

        try:
            return cls(**values)
        except ValidationError as e:
            first = e.errors()[0]
            field = str(first["loc"][0]) if first["loc"] else "?"
            raise ConfigError(
                f"Invalid value for {ENV_PREFIX}{field.upper()}: {first['msg']}",
                variable=f"{ENV_PREFIX}{field.upper()}",
            ) from e
