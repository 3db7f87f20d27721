"""
Sets of simulated RIRs at random source/microphone locations, with
train/test split and on-disk persistence.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from audio.corpus import SplitTag
from audio.wav_io import DEFAULT_SAMPLE_RATE, Waveform, read_float_wav, write_float_wav
from room.rir import Point, Rir, RirNormalization, RoomSpec, image_source_rir, normalize_rir
from utils.errors import DataError, RoomSpecError
from utils.retry import retry_with_backoff, reraise_transient

logger = logging.getLogger(__name__)

INDEX_NAME = "index.json"


class RoomTemplate(BaseModel):
    """Room shared by every location of a RIR set."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    dimensions: Point = (5.0, 5.0, 3.0)
    absorption: float = Field(0.1, gt=0, le=1)
    max_order: int = Field(15, ge=0, le=20)
    sample_rate: int = Field(DEFAULT_SAMPLE_RATE, gt=0)
    speed_of_sound: float = Field(343.0, gt=0)


class RirSetConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    n_locations: int = Field(25, ge=1)
    n_train: int = Field(20, ge=0)
    wall_margin: float = Field(0.2, ge=0)
    min_distance: float = Field(0.5, gt=0)
    normalize: RirNormalization = "reference"
    seed: int

    @model_validator(mode="after")
    def _check_split(self):
        if self.n_train > self.n_locations:
            raise ValueError(f"n_train {self.n_train} exceeds n_locations {self.n_locations}")
        return self


class _RirRecord(BaseModel):
    room: Optional[RoomSpec] = None
    split: SplitTag


@dataclass
class RirSet:
    rirs: list[Rir]
    splits: list[SplitTag]
    sample_rate: int

    def subset(self, tag: SplitTag) -> list[Rir]:
        return [rir for rir, split in zip(self.rirs, self.splits) if split == tag]

    @property
    def train(self) -> list[Rir]:
        return self.subset("train")

    @property
    def test(self) -> list[Rir]:
        return self.subset("test")

    @retry_with_backoff
    def save(self, directory: str | Path) -> None:
        """One float WAV per RIR plus a JSON sidecar holding its RoomSpec and split."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        names = []
        try:
            for index, (rir, split) in enumerate(zip(self.rirs, self.splits)):
                name = f"rir_{index:03d}"
                write_float_wav(directory / f"{name}.wav", Waveform(rir.taps, rir.sample_rate))
                record = _RirRecord(room=rir.provenance, split=split)
                (directory / f"{name}.json").write_text(record.model_dump_json(indent=2), encoding="utf-8")
                names.append(name)
            index_doc = {"sample_rate": self.sample_rate, "rirs": names}
            (directory / INDEX_NAME).write_text(json.dumps(index_doc, indent=2), encoding="utf-8")
        except OSError as e:
            reraise_transient(e)

    @classmethod
    def load(cls, directory: str | Path) -> "RirSet":
        directory = Path(directory)
        try:
            index_doc = json.loads((directory / INDEX_NAME).read_text(encoding="utf-8"))
        except (OSError, ValueError) as e:
            raise DataError(f"cannot read RIR index in {directory}: {e}") from e
        rirs, splits = [], []
        for name in index_doc["rirs"]:
            record = _RirRecord.model_validate_json((directory / f"{name}.json").read_text(encoding="utf-8"))
            wave = read_float_wav(directory / f"{name}.wav")
            if wave.sample_rate != index_doc["sample_rate"]:
                raise DataError(f"{name}.wav is {wave.sample_rate} Hz, index says {index_doc['sample_rate']} Hz")
            rirs.append(Rir(wave.samples, wave.sample_rate, record.room))
            splits.append(record.split)
        return cls(rirs, splits, index_doc["sample_rate"])


def sample_rir_set(room: RoomTemplate, config: RirSetConfig) -> RirSet:
    """
    Simulate config.n_locations RIRs with uniformly drawn source and mic positions.

    The first config.n_train locations form the train split and the rest the
    test split. The result is a pure function of (room, config).

    Raises:
        RoomSpecError: wall margin leaves no room for positions
    """
    dims = np.asarray(room.dimensions)
    low, high = config.wall_margin, dims - config.wall_margin
    if np.any(high <= low):
        raise RoomSpecError(f"wall margin {config.wall_margin} m leaves no interior in room {room.dimensions}")
    if np.linalg.norm(high - low) < config.min_distance:
        raise RoomSpecError(f"no two positions inside the margins are {config.min_distance} m apart")

    rng = np.random.default_rng(config.seed)
    rirs, splits = [], []
    for index in range(config.n_locations):
        source = rng.uniform(low, high)
        mic = rng.uniform(low, high)
        while np.linalg.norm(source - mic) < config.min_distance:
            mic = rng.uniform(low, high)
        spec = RoomSpec(
            dimensions=room.dimensions,
            absorption=room.absorption,
            source_pos=tuple(source.tolist()),
            mic_pos=tuple(mic.tolist()),
            max_order=room.max_order,
            sample_rate=room.sample_rate,
            speed_of_sound=room.speed_of_sound,
        )
        rir = image_source_rir(spec)
        rir = normalize_rir(rir, config.normalize)
        rirs.append(rir)
        splits.append("train" if index < config.n_train else "test")

    logger.info(
        f"✓ Simulated {config.n_locations} RIRs ({config.n_train} train / "
        f"{config.n_locations - config.n_train} test), mean length {np.mean([len(r) for r in rirs]):.0f} taps"
    )
    return RirSet(rirs, splits, room.sample_rate)
