"""
Process settings using pydantic-settings.
Loads environment variables (prefix SPEAKER_UAP_) and an optional .env file.
"""

from pathlib import Path

from pydantic_settings import BaseSettings, SettingsConfigDict


def find_env_file() -> str:
    """Find the .env file in the project root."""
    project_root = Path(__file__).parent.parent.parent
    return str(project_root / ".env")


class Settings(BaseSettings):
    """Settings that vary per machine rather than per experiment."""

    model_config = SettingsConfigDict(
        env_file=find_env_file(),
        env_file_encoding="utf-8",
        env_prefix="SPEAKER_UAP_",
        case_sensitive=False,
        extra="ignore",
    )

    log_level: str = "INFO"

    # Worker cap for per-utterance evaluation; --threads overrides it
    max_workers: int = 4

    # Retry configuration for artifact writes
    max_retries: int = 3
    retry_min_wait: int = 1
    retry_max_wait: int = 10


# Global settings instance
settings = Settings()
