import json
import logging
import os
import tomllib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from dotenv import load_dotenv

from .core import DEFAULT_CHANNEL_PROBS, GENERATOR_VERSION, STAGE_NAMES, InvalidConfigError
from .rng import parse_seed

logger = logging.getLogger(__name__)

load_dotenv()

RUN_CONFIG_FILE = "run_config.json"
MODEL_CHOICES = ("attn", "cnnae")
VARIANT_CHOICES = ("recon", "attn", "combined")


def _env_flag(name: str) -> bool:
    return os.environ.get(name, "").strip().lower() in ("1", "true", "yes", "on")


class Config:
    # Output root for every subcommand unless --out is given
    OUTPUT_ROOT = os.environ.get("ISHM_OUTPUT_ROOT", "data/outputs")

    LOG_LEVEL = os.environ.get("ISHM_LOG_LEVEL", "INFO").upper()
    LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

    # NaN/Inf check after every tensor op
    DEBUG_NUMERICS = _env_flag("ISHM_DEBUG_NUMERICS")

    @classmethod
    def validate(cls) -> None:
        """Validate configuration settings"""
        if not cls.OUTPUT_ROOT:
            raise InvalidConfigError("ISHM_OUTPUT_ROOT must not be empty")
        if cls.LOG_LEVEL not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            raise InvalidConfigError(f"Unknown ISHM_LOG_LEVEL {cls.LOG_LEVEL!r}")


@dataclass
class RunConfig:
    """Fully resolved settings of one CLI invocation."""
    command: str = ""
    stages: List[int] = field(default_factory=lambda: [1])
    seed: int = 0
    n: int = 3000
    n_train: int = 2000
    n_test: int = 3000
    models: List[str] = field(default_factory=lambda: ["attn"])
    variants: List[str] = field(default_factory=lambda: ["attn"])
    alpha: float = 0.5
    epochs: int = 30
    batch_size: int = 32
    lr: float = 1e-3
    anomaly_rate: float = 0.10
    spike_channel_probs: Optional[List[float]] = None
    localdev_channel_probs: Optional[List[float]] = None
    workers: int = 1
    min_profile_instances: int = 100
    out_dir: str = Config.OUTPUT_ROOT
    data_dir: Optional[str] = None
    model_dir: Optional[str] = None

    def __post_init__(self):
        self.seed = parse_seed(self.seed)
        self.validate()

    def validate(self) -> None:
        unknown_stages = [s for s in self.stages if s not in STAGE_NAMES]
        if not self.stages or unknown_stages:
            raise InvalidConfigError(f"Stages must be drawn from 1..8, got {self.stages}")
        for name, value in (("models", self.models), ("variants", self.variants)):
            allowed = MODEL_CHOICES if name == "models" else VARIANT_CHOICES
            bad = [v for v in value if v not in allowed]
            if not value or bad:
                raise InvalidConfigError(f"{name} must be drawn from {allowed}, got {value}")
        for name in ("n", "n_train", "n_test", "epochs", "batch_size", "workers", "min_profile_instances"):
            if getattr(self, name) < 1:
                raise InvalidConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0.0 <= self.alpha <= 1.0:
            raise InvalidConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not 0.0 <= self.anomaly_rate <= 1.0:
            raise InvalidConfigError(f"anomaly_rate must lie in [0, 1], got {self.anomaly_rate}")

    def channel_probs(self) -> Tuple[Tuple[float, ...], Tuple[float, ...]]:
        spike = tuple(self.spike_channel_probs or DEFAULT_CHANNEL_PROBS)
        localdev = tuple(self.localdev_channel_probs or DEFAULT_CHANNEL_PROBS)
        return spike, localdev

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def load_config_file(path: str) -> Dict[str, Any]:
    """
    Read a TOML run-config file. Keys are RunConfig field names; a ``[run]``
    table is accepted as well as top-level keys.

    Raises:
        FileNotFoundError: If the file does not exist
        InvalidConfigError: If the file is not valid TOML or names unknown keys
    """
    config_path = Path(path)
    if not config_path.exists():
        raise FileNotFoundError(f"Config file not found: {config_path}")
    try:
        with open(config_path, "rb") as f:
            values = tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise InvalidConfigError(f"{config_path}: {e}") from e
    values = values.get("run", values)
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise InvalidConfigError(f"{config_path}: unknown keys {unknown}")
    return values


def resolve_run_config(file_values: Dict[str, Any], overrides: Dict[str, Any]) -> RunConfig:
    """File values first, then every CLI flag that was actually given."""
    merged = dict(file_values)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return RunConfig(**merged)
    except TypeError as e:
        raise InvalidConfigError(str(e)) from e


def write_run_config(cfg: RunConfig, directory: str) -> Path:
    """Echo the resolved config and version strings into an artifact directory."""
    from . import __version__

    out_dir = Path(directory)
    out_dir.mkdir(parents=True, exist_ok=True)
    record = {"version": __version__, "generator_version": GENERATOR_VERSION, "config": cfg.to_dict()}
    path = out_dir / RUN_CONFIG_FILE
    path.write_text(json.dumps(record, indent=2, sort_keys=True), encoding="utf-8")
    return path


# Validate config on import
Config.validate()
