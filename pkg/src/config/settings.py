"""
Configuration settings for dgtta.

Uses pydantic-settings for environment variable management and validation.
"""

import logging
from typing import Literal, Optional

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Application settings loaded from environment variables."""

    model_config = SettingsConfigDict(
        env_prefix="DGTTA_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    # Application Settings
    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = Field(
        default="INFO", description="Logging level"
    )

    # Compute Configuration
    device: str = Field(default="cpu", description="Torch device for training and inference")
    workers: int = Field(default=1, description="Worker threads for generation and ensemble members")
    seed: int = Field(default=0, description="Global RNG seed")

    # Paths
    output_dir: str = Field(default="runs", description="Default artifact directory")
    run_config: Optional[str] = Field(
        default=None, description="Default run-config file when --config is omitted"
    )

    @field_validator("workers")
    def validate_workers(cls, v: int) -> int:
        """Validate worker count."""
        if v < 1:
            raise ValueError("Worker count must be at least 1")
        return v

    @field_validator("device")
    def validate_device(cls, v: str) -> str:
        """Validate device string prefix."""
        if not (v == "cpu" or v.startswith("cuda") or v == "mps"):
            raise ValueError("Device must be 'cpu', 'cuda[:N]' or 'mps'")
        return v


# Global settings instance
settings = Settings()


def configure_logging(level: Optional[str] = None) -> None:
    """Install a rich log handler on the root logger."""
    from rich.logging import RichHandler

    logging.basicConfig(
        level=getattr(logging, (level or settings.log_level).upper()),
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(rich_tracebacks=True, show_path=False)],
        force=True,
    )

