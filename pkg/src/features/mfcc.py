"""
Differentiable MFCC front end.

Pipeline: pre-emphasis -> framing -> window -> |FFT|^2 -> mel filterbank ->
log(max(., floor)) -> DCT-II (orthonormal), first n_coeffs kept.
mfcc_backward is the exact adjoint of this pipeline, so a loss on the
features can be differentiated with respect to the waveform samples.
"""

from dataclasses import dataclass
from functools import lru_cache
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.fft import dct, idct

from audio.wav_io import DEFAULT_SAMPLE_RATE, Waveform
from utils.errors import InputTooShortError, ShapeMismatchError


class MfccConfig(BaseModel):
    """Front-end configuration; stored in every model checkpoint."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    sample_rate: int = Field(DEFAULT_SAMPLE_RATE, gt=0)
    n_coeffs: int = Field(30, gt=0)
    frame_len_ms: float = Field(25.0, gt=0)
    frame_shift_ms: float = Field(10.0, gt=0)
    n_mels: int = Field(40, gt=0)
    fft_size: int = Field(512, gt=0)
    preemphasis: float = Field(0.97, ge=0, lt=1)
    window: Literal["hamming", "hann", "rectangular"] = "hamming"
    log_floor: float = Field(1e-10, gt=0)
    low_freq: float = Field(0.0, ge=0)
    high_freq: Optional[float] = None

    @model_validator(mode="after")
    def _check_geometry(self):
        if self.fft_size < self.frame_len:
            raise ValueError(f"fft_size {self.fft_size} is shorter than the frame ({self.frame_len} samples)")
        if self.n_coeffs > self.n_mels:
            raise ValueError(f"n_coeffs {self.n_coeffs} exceeds n_mels {self.n_mels}")
        if self.frame_shift < 1:
            raise ValueError("frame shift rounds to zero samples")
        if self.upper_freq > self.sample_rate / 2 or self.upper_freq <= self.low_freq:
            raise ValueError("mel band edges must satisfy low_freq < high_freq <= Nyquist")
        return self

    @property
    def frame_len(self) -> int:
        return int(round(self.frame_len_ms * self.sample_rate / 1000))

    @property
    def frame_shift(self) -> int:
        return int(round(self.frame_shift_ms * self.sample_rate / 1000))

    @property
    def upper_freq(self) -> float:
        return self.high_freq if self.high_freq is not None else self.sample_rate / 2

    def n_frames(self, n_samples: int) -> int:
        """Number of complete frames in a signal; trailing remainder is dropped."""
        if n_samples < self.frame_len:
            return 0
        return 1 + (n_samples - self.frame_len) // self.frame_shift

    def min_samples(self, n_frames: int = 1) -> int:
        return self.frame_len + (n_frames - 1) * self.frame_shift


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray  # (T, C)
    frame_len: int
    frame_shift: int

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]


@dataclass
class MfccCache:
    """Intermediates of one forward pass, consumed by the backward pass."""

    n_samples: int
    spectrum: np.ndarray  # complex (T, fft_size // 2 + 1)
    mel_energies: np.ndarray  # (T, n_mels), before the floor


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel) / 2595.0) - 1.0)


def mel_center_frequencies(cfg: MfccConfig) -> np.ndarray:
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.low_freq), hz_to_mel(cfg.upper_freq), cfg.n_mels + 2))
    return edges[1:-1]


@lru_cache(maxsize=16)
def _filterbank(cfg: MfccConfig) -> np.ndarray:
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.low_freq), hz_to_mel(cfg.upper_freq), cfg.n_mels + 2))
    freqs = np.arange(cfg.fft_size // 2 + 1) * cfg.sample_rate / cfg.fft_size
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lower) / (center - lower)
    falling = (upper - freqs[None, :]) / (upper - center)
    bank = np.maximum(0.0, np.minimum(rising, falling))
    bank.setflags(write=False)
    return bank


def mel_filterbank(cfg: MfccConfig) -> np.ndarray:
    """Triangular mel filters, shape (n_mels, fft_size // 2 + 1)."""
    return _filterbank(cfg)


@lru_cache(maxsize=16)
def _window(kind: str, length: int) -> np.ndarray:
    if kind == "hamming":
        window = np.hamming(length)
    elif kind == "hann":
        window = np.hanning(length)
    else:
        window = np.ones(length)
    window.setflags(write=False)
    return window


def _frame_indices(cfg: MfccConfig, n_frames: int) -> np.ndarray:
    return np.arange(n_frames)[:, None] * cfg.frame_shift + np.arange(cfg.frame_len)[None, :]


def frame_signal(samples: np.ndarray, cfg: MfccConfig) -> np.ndarray:
    """Pre-emphasis, framing and windowing: the linear head of the pipeline."""
    n_frames = cfg.n_frames(samples.shape[0])
    if n_frames < 1:
        raise InputTooShortError("waveform (samples)", cfg.frame_len, samples.shape[0])
    emphasized = np.empty_like(samples)
    emphasized[0] = samples[0]
    emphasized[1:] = samples[1:] - cfg.preemphasis * samples[:-1]
    return emphasized[_frame_indices(cfg, n_frames)] * _window(cfg.window, cfg.frame_len)


def frame_signal_adjoint(grad_frames: np.ndarray, n_samples: int, cfg: MfccConfig) -> np.ndarray:
    """Adjoint of frame_signal: window, overlap-add, then pre-emphasis transpose."""
    weighted = grad_frames * _window(cfg.window, cfg.frame_len)
    grad_emphasized = np.zeros(n_samples)
    np.add.at(grad_emphasized, _frame_indices(cfg, grad_frames.shape[0]).ravel(), weighted.ravel())
    grad = grad_emphasized.copy()
    grad[:-1] -= cfg.preemphasis * grad_emphasized[1:]
    return grad


def _forward(samples: np.ndarray, cfg: MfccConfig) -> tuple[np.ndarray, MfccCache]:
    frames = frame_signal(samples, cfg)
    spectrum = np.fft.rfft(frames, n=cfg.fft_size, axis=1)
    power = spectrum.real ** 2 + spectrum.imag ** 2
    mel = power @ mel_filterbank(cfg).T
    return np.log(np.maximum(mel, cfg.log_floor)), MfccCache(samples.shape[0], spectrum, mel)


def log_mel_energies(w: Waveform, cfg: MfccConfig) -> np.ndarray:
    """Floored log mel filterbank energies, shape (T, n_mels)."""
    return _forward(w.samples, cfg)[0]


def mfcc_forward_with_cache(samples: np.ndarray, cfg: MfccConfig) -> tuple[np.ndarray, MfccCache]:
    log_mel, cache = _forward(samples, cfg)
    return dct(log_mel, type=2, norm="ortho", axis=1)[:, : cfg.n_coeffs], cache


def mfcc_backward_from_cache(upstream: np.ndarray, cache: MfccCache, cfg: MfccConfig) -> np.ndarray:
    n_frames = cache.spectrum.shape[0]
    if upstream.shape != (n_frames, cfg.n_coeffs):
        raise ShapeMismatchError(
            f"upstream gradient has shape {upstream.shape}, features are {(n_frames, cfg.n_coeffs)}"
        )

    padded = np.zeros((n_frames, cfg.n_mels))
    padded[:, : cfg.n_coeffs] = upstream
    grad_log_mel = idct(padded, type=2, norm="ortho", axis=1)

    # Floor mask: no gradient where max(., floor) picked the floor
    above = cache.mel_energies > cfg.log_floor
    grad_mel = np.where(above, grad_log_mel / np.where(above, cache.mel_energies, 1.0), 0.0)
    grad_power = grad_mel @ mel_filterbank(cfg)

    # d|S_k|^2 / dx_j = 2 Re(conj(S_k) e^{-2 pi i jk/N}) summed over the rfft bins
    full = np.zeros((n_frames, cfg.fft_size), dtype=np.complex128)
    full[:, : grad_power.shape[1]] = grad_power * cache.spectrum
    grad_frames = 2.0 * cfg.fft_size * np.fft.ifft(full, axis=1).real[:, : cfg.frame_len]
    return frame_signal_adjoint(grad_frames, cache.n_samples, cfg)


def mfcc_forward(w: Waveform, cfg: MfccConfig) -> FeatureMatrix:
    """
    Compute MFCC features of a waveform.

    Raises:
        InputTooShortError: fewer samples than one frame
    """
    values, _ = mfcc_forward_with_cache(w.samples, cfg)
    return FeatureMatrix(values, cfg.frame_len, cfg.frame_shift)


def mfcc_backward(w: Waveform, cfg: MfccConfig, upstream: np.ndarray) -> np.ndarray:
    """Gradient of <upstream, mfcc_forward(w)> with respect to the samples of w."""
    _, cache = _forward(w.samples, cfg)
    return mfcc_backward_from_cache(np.asarray(upstream, dtype=np.float64), cache, cfg)
