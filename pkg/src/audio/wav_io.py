"""
WAV reading and writing.
16-bit PCM mono for corpus audio; 64-bit float WAV for perturbations.
"""

import logging
import wave
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.io import wavfile

from utils.errors import WavDecodeError
from utils.retry import retry_with_backoff, reraise_transient

logger = logging.getLogger(__name__)

PCM_SCALE = 32768.0
DEFAULT_SAMPLE_RATE = 16000


@dataclass(frozen=True)
class Waveform:
    """Mono audio samples (nominally in [-1, 1]) with their sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=np.float64).ravel())

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate

    @property
    def peak(self) -> float:
        return float(np.max(np.abs(self.samples))) if len(self) else 0.0


def quantize_pcm16(samples: np.ndarray) -> np.ndarray:
    """Clamp to [-1, 1] and quantize to int16 (1.0 -> 32767, -1.0 -> -32768)."""
    clamped = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    return np.clip(np.rint(clamped * PCM_SCALE), -32768, 32767).astype("<i2")


def _header_field(message: str) -> str:
    """Map a wave.Error message onto the header field it complains about."""
    if "format" in message:
        return "format"
    if "sample width" in message:
        return "sample width"
    if "channels" in message:
        return "channels"
    return "riff header"


def read_wav(path: str | Path, expected_rate: Optional[int] = None) -> Waveform:
    """
    Read a 16-bit PCM mono WAV file.

    Args:
        path: WAV file path
        expected_rate: Reject files with a different sample rate

    Returns:
        Waveform with samples scaled by 1/32768

    Raises:
        WavDecodeError: naming the offending header field
    """
    path = str(path)
    try:
        handle = wave.open(path, "rb")
    except wave.Error as e:
        raise WavDecodeError(path, _header_field(str(e)), str(e)) from e
    except EOFError as e:
        raise WavDecodeError(path, "riff header", "file ends inside the header") from e

    try:
        if handle.getcomptype() != "NONE":
            raise WavDecodeError(path, "format", f"compression {handle.getcomptype()!r}")
        if handle.getnchannels() != 1:
            raise WavDecodeError(path, "channels", f"{handle.getnchannels()} (mono required)")
        if handle.getsampwidth() != 2:
            raise WavDecodeError(path, "sample width", f"{8 * handle.getsampwidth()} bits (16 required)")
        rate = handle.getframerate()
        if expected_rate is not None and rate != expected_rate:
            raise WavDecodeError(path, "sample rate", f"{rate} Hz (expected {expected_rate} Hz)")
        n_frames = handle.getnframes()
        raw = handle.readframes(n_frames)
    finally:
        handle.close()

    if len(raw) % 2:
        raise WavDecodeError(path, "data", f"chunk holds {len(raw)} bytes, not a whole number of 16-bit samples")
    pcm = np.frombuffer(raw, dtype="<i2")
    if pcm.shape[0] != n_frames:
        raise WavDecodeError(path, "riff header", f"declares {n_frames} frames, holds {pcm.shape[0]}")
    return Waveform(pcm.astype(np.float64) / PCM_SCALE, rate)


@retry_with_backoff
def write_wav(path: str | Path, w: Waveform) -> None:
    """Write a waveform as 16-bit PCM mono, clamping to [-1, 1] first."""
    pcm = quantize_pcm16(w.samples)
    try:
        with wave.open(str(path), "wb") as handle:
            handle.setnchannels(1)
            handle.setsampwidth(2)
            handle.setframerate(w.sample_rate)
            handle.writeframes(pcm.tobytes())
    except OSError as e:
        reraise_transient(e)


@retry_with_backoff
def write_float_wav(path: str | Path, w: Waveform) -> None:
    """Write a waveform losslessly as 64-bit IEEE float WAV."""
    try:
        wavfile.write(str(path), w.sample_rate, w.samples.astype(np.float64))
    except OSError as e:
        reraise_transient(e)


def read_float_wav(path: str | Path) -> Waveform:
    """Read a float WAV written by write_float_wav."""
    try:
        rate, data = wavfile.read(str(path))
    except ValueError as e:
        raise WavDecodeError(str(path), "format", str(e)) from e
    if data.ndim != 1:
        raise WavDecodeError(str(path), "channels", f"{data.shape[1]} (mono required)")
    if data.dtype.kind != "f":
        raise WavDecodeError(str(path), "format", f"{data.dtype} samples (float required)")
    return Waveform(data.astype(np.float64), int(rate))
