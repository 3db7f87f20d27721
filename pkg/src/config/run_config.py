"""
Experiment configuration file (TOML, ``key = value`` lines under ``[section]`` headers).

Every numeric hyperparameter and every seed of a run lives here; command-line
flags only select the file, the subcommand and the output directory.
"""

import logging
import tomllib
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from attack.universal import AttackConfig
from audio.corpus import SynthConfig
from evaluation.benchmark import BenchConfig
from features.mfcc import MfccConfig
from room.rir_set import RirSetConfig, RoomTemplate
from utils.errors import ConfigError
from xvector.model import ArchitectureConfig
from xvector.trainer import TrainConfig

logger = logging.getLogger(__name__)

RUN_CONFIG_VERSION = 1


class PathsConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    out_dir: str = "runs/default"


class EvaluateConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    # None means every enrolled speaker
    targets: Optional[list[int]] = None
    channel: Literal["none", "train-rir", "test-rir"] = "none"
    epsilons: list[float] = Field(default_factory=lambda: [0.05, 0.01, 0.002])


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    format_version: int
    paths: PathsConfig = PathsConfig()
    corpus: SynthConfig
    mfcc: MfccConfig = MfccConfig()
    model: ArchitectureConfig
    train: TrainConfig
    room: RoomTemplate = RoomTemplate()
    rirs: RirSetConfig
    attack: AttackConfig
    evaluate: EvaluateConfig = EvaluateConfig()
    bench: BenchConfig = BenchConfig()

    @model_validator(mode="after")
    def _check_consistency(self):
        if self.format_version != RUN_CONFIG_VERSION:
            raise ValueError(f"format_version {self.format_version} is not supported (expected {RUN_CONFIG_VERSION})")
        for section, rate in (("mfcc", self.mfcc.sample_rate), ("room", self.room.sample_rate)):
            if rate != self.corpus.sample_rate:
                raise ValueError(
                    f"{section}.sample_rate {rate} differs from corpus.sample_rate {self.corpus.sample_rate}"
                )
        if self.attack.target >= self.corpus.n_speakers:
            raise ValueError(f"attack.target {self.attack.target} >= corpus.n_speakers {self.corpus.n_speakers}")
        for target in self.evaluate.targets or []:
            if not 0 <= target < self.corpus.n_speakers:
                raise ValueError(f"evaluate.targets entry {target} is not a speaker index")
        return self

    @property
    def target_list(self) -> list[int]:
        if self.evaluate.targets is None:
            return list(range(self.corpus.n_speakers))
        return list(self.evaluate.targets)


def _describe(error: ValidationError) -> str:
    parts = []
    for item in error.errors():
        key = ".".join(str(part) for part in item["loc"]) or "<root>"
        parts.append(f"{key}: {item['msg']}")
    return "; ".join(parts)


def parse_run_config(data: dict) -> RunConfig:
    """Validate an already parsed TOML document."""
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(_describe(e)) from e


def load_run_config(path: str | Path) -> RunConfig:
    """
    Read and validate a run configuration.

    Raises:
        ConfigError: unreadable file, TOML syntax error, unknown or missing key
    """
    path = Path(path)
    try:
        with open(path, "rb") as handle:
            data = tomllib.load(handle)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from e
    config = parse_run_config(data)
    logger.debug(f"Loaded run config {path}")
    return config
