"""Runtime settings: compute resources, output paths and plot format."""

import os
from pathlib import Path
from typing import Literal

try:
    from typing import Self
except ImportError:  # Python < 3.11
    from typing_extensions import Self

import yaml
from pydantic import BaseModel, Field, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

PROJECT_ROOT = Path(__file__).parent.parent.parent
CONFIG_ENV_VAR = "SFR_CONFIG"
WORKERS_ENV_VAR = "SFR_WORKERS"


def _absolute(path: Path) -> Path:
    return path if path.is_absolute() else (PROJECT_ROOT / path).resolve()


class RuntimeConfig(BaseModel):
    """Compute resources used by training runs."""

    workers: int = Field(default=1, ge=1)
    device: str = "cpu"
    deterministic: bool = True
    torch_threads: int | None = Field(default=None, ge=1)


class PathsConfig(BaseModel):
    """Where runs are written and scenes are looked up; relative to the project root."""

    output_dir: Path = Path("./runs")
    scenes_dir: Path = Path("./scenes")

    @model_validator(mode="after")
    def make_absolute(self) -> Self:
        self.output_dir = _absolute(self.output_dir)
        self.scenes_dir = _absolute(self.scenes_dir)
        return self


class PlotsConfig(BaseModel):
    """Static plot output."""

    format: Literal["svg", "pdf", "png"] = "svg"
    dpi: int = Field(default=100, ge=10)


def _dotenv_path() -> Path | None:
    candidate = PROJECT_ROOT / ".env"
    return candidate if candidate.is_file() else None


class Config(BaseSettings):
    """Settings shared by every command."""

    model_config = SettingsConfigDict(
        env_file=_dotenv_path(),
        env_file_encoding="utf-8",
        extra="ignore",
    )

    runtime: RuntimeConfig = Field(default_factory=RuntimeConfig)
    paths: PathsConfig = Field(default_factory=PathsConfig)
    plots: PlotsConfig = Field(default_factory=PlotsConfig)
    log_level: str = "INFO"

    @model_validator(mode="after")
    def apply_env_workers(self) -> Self:
        """SFR_WORKERS wins over the file value."""
        workers = os.getenv(WORKERS_ENV_VAR)
        if workers:
            self.runtime.workers = max(1, int(workers))
        return self


def load_config(config_path: Path | None = None) -> Config:
    """
    Build the settings from a YAML file and the environment.

    The file is ``config_path`` if given, else the path in SFR_CONFIG, else
    ``config.yaml`` in the project root. A missing file means defaults.
    """
    if config_path is None:
        config_path = Path(os.getenv(CONFIG_ENV_VAR) or PROJECT_ROOT / "config.yaml")
    data: dict = {}
    if config_path.is_file():
        data = yaml.safe_load(config_path.read_text(encoding="utf-8")) or {}
    return Config(**data)


_config: Config | None = None


def get_config() -> Config:
    """Process-wide settings, loaded on first use."""
    global _config
    if _config is None:
        _config = load_config()
    return _config


def set_config(config: Config | None) -> None:
    """Replace the process-wide settings; None forces a reload on next use."""
    global _config
    _config = config
