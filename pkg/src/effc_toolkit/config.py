"""
Configuration Module
Run configuration for the command line and the environment it runs in
"""

import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .analytic import ModelParams

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0"

COMMANDS = ("analytic", "simulate", "excursions", "dimension", "hitting", "oracle", "validate")


def load_environment() -> None:
    """Load a .env file from the project root, falling back to the current directory"""
    env_path = Path(__file__).parent.parent.parent / ".env"
    if env_path.exists():
        load_dotenv(env_path)
    else:
        load_dotenv()


def thread_cap() -> int:
    """Worker cap from EFFC_THREADS, defaulting to the CPU count"""
    raw = os.getenv("EFFC_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            logger.warning("ignoring non-integer EFFC_THREADS=%r", raw)
    return os.cpu_count() or 1


def log_level() -> str:
    return os.getenv("EFFC_LOG_LEVEL", "WARNING").upper()


class RunConfig(BaseModel):
    """Everything one CLI invocation needs; flags override JSON which overrides defaults"""

    model_config = ConfigDict(frozen=True, populate_by_name=True, extra="forbid")

    command: str = Field("analytic", description="Subcommand to run")
    c: float = Field(1.0, gt=0, description="Coalescence rate per pair")
    lam: float = Field(0.2, gt=0, alias="lambda", description="Shatter rate per block")
    n_max: int = Field(10_000, ge=2, description="Ceiling standing in for infinitely many blocks")
    t_end: float = Field(10.0, gt=0, description="Simulation horizon")
    replicas: int = Field(1, ge=1, description="Independent replicas")
    seed: int = Field(0, ge=0, lt=2**64, description="Root seed")
    k: int = Field(10, ge=1, description="Target block count for hitting experiments")
    k_max: int = Field(20, ge=1, description="Largest block count in analytic tables")
    initial: Optional[int] = Field(None, ge=1, description="Initial block count; defaults to the ceiling")
    scales: List[float] = Field(default_factory=list, description="Box sizes for the dimension estimate")
    j_window: List[int] = Field(default_factory=lambda: [100, 1000], description="Levels for the speed statistic")
    max_events: int = Field(50_000_000, ge=1, description="Event budget per trajectory")
    suite: str = Field("quick", description="Acceptance suite: quick or full")
    output_dir: Path = Field(Path("effc_output"), description="Directory receiving artifact files")
    threads: Optional[int] = Field(None, ge=1, description="Worker cap; overrides EFFC_THREADS")

    @field_validator("command")
    @classmethod
    def _known_command(cls, value: str) -> str:
        if value not in COMMANDS:
            raise ValueError(f"unknown command {value!r}; expected one of {', '.join(COMMANDS)}")
        return value

    @field_validator("suite")
    @classmethod
    def _known_suite(cls, value: str) -> str:
        if value not in ("quick", "full"):
            raise ValueError("suite must be 'quick' or 'full'")
        return value

    @field_validator("scales")
    @classmethod
    def _positive_scales(cls, value: List[float]) -> List[float]:
        if any(s <= 0 for s in value):
            raise ValueError("scales must be positive")
        return value

    @field_validator("j_window")
    @classmethod
    def _positive_levels(cls, value: List[int]) -> List[int]:
        if not value or any(j < 1 for j in value):
            raise ValueError("j_window needs at least one level >= 1")
        return value

    @property
    def params(self) -> ModelParams:
        return ModelParams(c=self.c, lam=self.lam)

    @classmethod
    def from_sources(cls, json_path: Optional[Path] = None, overrides: Optional[Dict[str, Any]] = None) -> "RunConfig":
        """
        Merge a JSON config file with explicit overrides

        Args:
            json_path: Optional path to a JSON object of field values
            overrides: Field values from flags; None entries are ignored

        Returns:
            Validated RunConfig
        """
        data: Dict[str, Any] = {}
        if json_path is not None:
            with open(json_path, "r", encoding="utf-8") as f:
                loaded = json.load(f)
            if not isinstance(loaded, dict):
                raise ValueError(f"{json_path} must contain a JSON object")
            data.update(loaded)
        if "lambda" in data:
            data["lam"] = data.pop("lambda")
        for key, value in (overrides or {}).items():
            if value is not None:
                data[key] = value
        return cls.model_validate(data)
