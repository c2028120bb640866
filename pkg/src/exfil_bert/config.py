"""Configuration objects for the exfil-bert pipeline."""
from __future__ import annotations

import logging
from functools import lru_cache
from pathlib import Path
from typing import Optional

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


class ExfilBertSettings(BaseSettings):
    log_level: str = "INFO"
    max_len: int = Field(default=128, ge=3)
    output_dir: Path = Path("runs")
    psl_path: Optional[Path] = None
    deterministic: bool = False
    score_batch_size: int = Field(default=256, ge=1)
    service_checkpoint: Optional[Path] = None
    service_operating_point: Optional[Path] = None

    model_config = SettingsConfigDict(env_prefix="EXFIL_BERT_", env_file=".env", extra="ignore")


@lru_cache(maxsize=1)
def get_settings() -> ExfilBertSettings:
    return ExfilBertSettings()  # type: ignore[arg-type]


def configure_logging(level: str | int = "INFO") -> None:
    """Install a single stream handler on the root logger."""

    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)
    handler = logging.StreamHandler()
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root.addHandler(handler)
    root.setLevel(level if isinstance(level, int) else level.upper())
