"""
Shoebox-room image-source RIR generator.

Images of the source are enumerated over the 3D reflection lattice up to
max_order reflections. Each image adds a Hann-windowed sinc (fractional
delay) of amplitude beta^order / (4 pi d), beta = sqrt(1 - absorption).
"""

import logging
from dataclasses import dataclass
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from audio.wav_io import DEFAULT_SAMPLE_RATE

logger = logging.getLogger(__name__)

SINC_TAPS = 81
TRIM_THRESHOLD = 1e-6

Point = tuple[float, float, float]


class RoomSpec(BaseModel):
    """Room geometry, wall absorption and source/microphone positions (meters)."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    dimensions: Point = (5.0, 5.0, 3.0)
    absorption: float = Field(0.3, gt=0, le=1)
    source_pos: Point
    mic_pos: Point
    max_order: int = Field(6, ge=0, le=20)
    sample_rate: int = Field(DEFAULT_SAMPLE_RATE, gt=0)
    speed_of_sound: float = Field(343.0, gt=0)

    @model_validator(mode="after")
    def _check_positions(self):
        if min(self.dimensions) <= 0:
            raise ValueError(f"room dimensions must be positive, got {self.dimensions}")
        for label, pos in (("source_pos", self.source_pos), ("mic_pos", self.mic_pos)):
            if not all(0.0 < c < d for c, d in zip(pos, self.dimensions)):
                raise ValueError(f"{label} {pos} is not strictly inside the room {self.dimensions}")
        if np.allclose(self.source_pos, self.mic_pos):
            raise ValueError("source and microphone must not coincide")
        return self

    @property
    def reflection_coefficient(self) -> float:
        return float(np.sqrt(1.0 - self.absorption))


@dataclass(frozen=True)
class ImageSource:
    position: np.ndarray
    order: int
    distance: float
    delay: float  # samples
    amplitude: float


@dataclass(frozen=True)
class Rir:
    taps: np.ndarray
    sample_rate: int
    provenance: RoomSpec | None = None

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.float64).ravel()
        if taps.size == 0 or not np.all(np.isfinite(taps)):
            raise ValueError("RIR taps must be non-empty and finite")
        object.__setattr__(self, "taps", taps)

    def __len__(self) -> int:
        return self.taps.shape[0]

    @classmethod
    def identity(cls, sample_rate: int) -> "Rir":
        return cls(np.array([1.0]), sample_rate)


def _axis_images(max_order: int) -> np.ndarray:
    """Rows (n, p, reflections) per axis; the image coordinate is (1 - 2p) s + 2 n L."""
    images = []
    for n in range(-max_order, max_order + 1):
        for p in (0, 1):
            reflections = abs(n - p) + abs(n)
            if reflections <= max_order:
                images.append((n, p, reflections))
    return np.array(images, dtype=np.int64)


def _lattice(spec: RoomSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(positions (M, 3), orders (M,), distances (M,)) of every image within max_order."""
    axis = _axis_images(spec.max_order)
    grid = np.stack(np.meshgrid(np.arange(len(axis)), np.arange(len(axis)), np.arange(len(axis)), indexing="ij"), -1)
    rows = axis[grid.reshape(-1, 3)]  # (M, 3 axes, (n, p, reflections))
    orders = rows[:, :, 2].sum(axis=1)
    rows = rows[orders <= spec.max_order]
    orders = orders[orders <= spec.max_order]

    n, p = rows[:, :, 0], rows[:, :, 1]
    positions = (1 - 2 * p) * np.asarray(spec.source_pos) + 2 * n * np.asarray(spec.dimensions)
    distances = np.linalg.norm(positions - np.asarray(spec.mic_pos), axis=1)
    return positions, orders, distances


def image_sources(spec: RoomSpec) -> list[ImageSource]:
    """All lattice images with at most spec.max_order reflections."""
    positions, orders, distances = _lattice(spec)
    beta = spec.reflection_coefficient
    return [
        ImageSource(
            position=position,
            order=int(order),
            distance=float(distance),
            delay=float(distance) / spec.speed_of_sound * spec.sample_rate,
            amplitude=beta ** int(order) / (4.0 * np.pi * float(distance)),
        )
        for position, order, distance in zip(positions, orders, distances)
    ]


def image_source_rir(spec: RoomSpec) -> Rir:
    """
    Simulate the impulse response from spec.source_pos to spec.mic_pos.

    Returns:
        Rir trimmed after its last tap above TRIM_THRESHOLD times the peak
    """
    _, orders, distances = _lattice(spec)
    amplitudes = spec.reflection_coefficient ** orders / (4.0 * np.pi * distances)
    keep = amplitudes > 0.0
    amplitudes, delays = amplitudes[keep], distances[keep] / spec.speed_of_sound * spec.sample_rate

    half = SINC_TAPS // 2
    length = int(np.ceil(delays.max())) + half + 1
    positions = np.floor(delays).astype(np.int64)[:, None] + np.arange(-half, half + 1)
    t = positions - delays[:, None]
    window = np.where(np.abs(t) <= SINC_TAPS / 2, 0.5 * (1.0 + np.cos(2.0 * np.pi * t / SINC_TAPS)), 0.0)
    contributions = amplitudes[:, None] * window * np.sinc(t)
    valid = (positions >= 0) & (positions < length)
    taps = np.bincount(positions[valid], weights=contributions[valid], minlength=length)

    significant = np.flatnonzero(np.abs(taps) > TRIM_THRESHOLD * np.max(np.abs(taps)))
    taps = taps[: significant[-1] + 1]
    logger.debug(f"Image-source RIR: {amplitudes.shape[0]} images, {taps.shape[0]} taps")
    return Rir(taps, spec.sample_rate, spec)


RirNormalization = Literal["reference", "peak", "none"]

# Distance at which the free-field path has unit gain under "reference" scaling
REFERENCE_DISTANCE_M = 1.0


def normalize_rir(rir: Rir, mode: RirNormalization) -> Rir:
    """
    Rescale an RIR.

    "reference" multiplies by 4 pi REFERENCE_DISTANCE_M, so a direct path at
    that distance has unit gain while propagation delay, distance attenuation
    and the direct-to-reverberant ratio are kept. "peak" scales the largest
    tap to 1, discarding the distance attenuation. "none" leaves the taps as
    simulated.
    """
    if mode == "none":
        return rir
    if mode == "peak":
        scale = 1.0 / np.max(np.abs(rir.taps))
    elif mode == "reference":
        scale = 4.0 * np.pi * REFERENCE_DISTANCE_M
    else:
        raise ValueError(f"unknown RIR normalization {mode!r}")
    return Rir(rir.taps * scale, rir.sample_rate, rir.provenance)
