"""
Process-level settings for fedpost.
Values come from the environment (``FEDPOST_`` prefix) or a ``.env`` file.
"""

import logging
from functools import lru_cache
from pathlib import Path
from typing import Optional

from pydantic import Field, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

logger = logging.getLogger(__name__)


class Settings(BaseSettings):
    """Runtime settings with validation."""

    PROJECT_NAME: str = "fedpost"
    VERSION: str = "0.1.0"
    ENVIRONMENT: str = Field(default="development")

    # Logging
    LOG_LEVEL: str = Field(default="INFO")
    LOG_FORMAT: str = Field(default="text")
    LOG_FILE: Optional[Path] = Field(default=None)

    # Data
    DATA_DIR: Path = Field(default=Path("data"))

    # Execution
    MAX_WORKERS: int = Field(default=1, ge=1)
    DEGENERATE_MAX_REDRAWS: int = Field(default=20, ge=0)

    model_config = SettingsConfigDict(
        env_prefix="FEDPOST_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=True,
        extra="ignore",
    )

    @field_validator("ENVIRONMENT")
    @classmethod
    def validate_environment(cls, v: str) -> str:
        allowed = ["development", "testing", "production"]
        if v not in allowed:
            raise ValueError(f"Environment must be one of: {allowed}")
        return v

    @field_validator("LOG_LEVEL")
    @classmethod
    def validate_log_level(cls, v: str) -> str:
        level = v.upper()
        if level not in logging.getLevelNamesMapping():
            raise ValueError(f"Unknown log level: {v}")
        return level

    @field_validator("LOG_FORMAT")
    @classmethod
    def validate_log_format(cls, v: str) -> str:
        if v not in ("text", "json"):
            raise ValueError("LOG_FORMAT must be 'text' or 'json'")
        return v

    @model_validator(mode="after")
    def force_json_in_production(self) -> "Settings":
        if self.ENVIRONMENT == "production":
            self.LOG_FORMAT = "json"
        return self

    def dataset_path(self, filename: str) -> Path:
        """Resolve a dataset file name against ``DATA_DIR``."""
        return self.DATA_DIR / filename


@lru_cache()
def get_settings() -> Settings:
    """Get cached settings."""
    return Settings()
