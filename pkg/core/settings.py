from __future__ import annotations

from functools import lru_cache

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class ProjectSettings(BaseSettings):
    """Process-wide configuration pulled from environment/.env."""

    seed: int = Field(0, alias="MST_SEED")
    # NaN/Inf assertion after every tensor op
    debug_finite: bool = Field(True, alias="MST_DEBUG_FINITE")
    log_level: str = Field("INFO", alias="MST_LOG_LEVEL")
    json_logs: bool = Field(False, alias="JSON_LOGS")
    data_workers: int = Field(4, alias="MST_DATA_WORKERS")

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    @field_validator("seed", mode="before")
    @classmethod
    def _parse_seed(cls, value) -> int:
        if value is None or str(value).strip() == "":
            return 0
        return int(str(value).strip())

    @field_validator("debug_finite", "json_logs", mode="before")
    @classmethod
    def _parse_bool(cls, value) -> bool:
        if isinstance(value, bool):
            return value
        if value is None or value == "":
            return False
        return str(value).strip().lower() in {"1", "true", "yes", "on"}

    @field_validator("log_level", mode="before")
    @classmethod
    def _normalize_level(cls, value: str | None) -> str:
        val = (value or "INFO").strip().upper()
        if val not in {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}:
            return "INFO"
        return val

    @field_validator("data_workers", mode="before")
    @classmethod
    def _clamp_workers(cls, value) -> int:
        try:
            n = int(str(value).strip())
        except Exception:
            return 4
        return max(1, n)


@lru_cache(maxsize=1)
def get_settings() -> ProjectSettings:
    return ProjectSettings()


def reset_settings_cache() -> None:
    """Testing helper to clear cached settings."""
    get_settings.cache_clear()
