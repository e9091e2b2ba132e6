"""
Settings
- read from the environment; a .env file (python-dotenv) fills in unset values
- every value has a default, so an empty environment works
- CLI flags override these per invocation
"""

import os
from pathlib import Path
from typing import Optional

from dotenv import dotenv_values, find_dotenv
from pydantic import BaseModel, Field, field_validator

from .engine import DEFAULT_MAX_TRIPS
from .libdb import DEFAULT_DB_PATH

ENV_PREFIX = "TAINTMODEL_"


class Settings(BaseModel):
    libdb: Path = Field(DEFAULT_DB_PATH, description="Library database used for extern calls")
    max_trips: int = Field(DEFAULT_MAX_TRIPS, ge=1, description="Loop guard: iterations per loop entry")
    cov_threshold: float = Field(0.1, gt=0, description="CoV above which a series is excluded")
    terms: int = Field(2, ge=1, le=3, description="Maximum number of terms per parameter")
    log_level: Optional[str] = Field(None, description="Overrides the -v flags when set")

    @field_validator("log_level")
    @classmethod
    def known_level(cls, level: Optional[str]) -> Optional[str]:
        if level is None:
            return None
        level = level.upper()
        if level not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            raise ValueError(f"unknown log level {level!r}")
        return level


def load_settings(env_file: Optional[Path] = None) -> Settings:
    """Settings from TAINTMODEL_* variables. The .env file (by default the nearest one
    above the working directory) only fills in variables the environment leaves unset."""
    path = env_file if env_file is not None else find_dotenv(usecwd=True)
    env = {**(dotenv_values(path) if path else {}), **os.environ}
    values = {}
    for name in Settings.model_fields:
        raw = env.get(ENV_PREFIX + name.upper())
        if raw is not None and raw.strip():
            values[name] = raw.strip()
    return Settings(**values)
