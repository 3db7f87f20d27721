"""
Over-the-air channel R(x) = x * r, cropped to the input length, and its adjoint.
"""

from typing import Literal

import numpy as np
from scipy.signal import fftconvolve

from audio.wav_io import Waveform
from room.rir import Rir
from utils.errors import DataError, ShapeMismatchError

# RIRs up to this many taps are applied directly; longer ones through the FFT
DIRECT_MAX_TAPS = 64

Method = Literal["auto", "direct", "fft"]


def _use_fft(n_taps: int, method: Method) -> bool:
    return method == "fft" or (method == "auto" and n_taps > DIRECT_MAX_TAPS)


def convolve_samples(samples: np.ndarray, taps: np.ndarray, method: Method = "auto") -> np.ndarray:
    """Full linear convolution cropped to len(samples)."""
    n = samples.shape[0]
    if _use_fft(taps.shape[0], method):
        return fftconvolve(samples, taps)[:n]
    return np.convolve(samples, taps)[:n]


def convolve_backward_samples(upstream: np.ndarray, taps: np.ndarray, method: Method = "auto") -> np.ndarray:
    """Adjoint of convolve_samples: correlation with the taps over the kept outputs."""
    n = upstream.shape[0]
    start = taps.shape[0] - 1
    reversed_taps = taps[::-1]
    if _use_fft(taps.shape[0], method):
        return fftconvolve(upstream, reversed_taps)[start: start + n]
    return np.convolve(upstream, reversed_taps)[start: start + n]


def convolve(w: Waveform, r: Rir, method: Method = "auto") -> Waveform:
    """Apply the room channel; output length equals input length."""
    if w.sample_rate != r.sample_rate:
        raise DataError(f"waveform is {w.sample_rate} Hz but the RIR is {r.sample_rate} Hz")
    return Waveform(convolve_samples(w.samples, r.taps, method), w.sample_rate)


def convolve_backward(upstream: np.ndarray, r: Rir, expected_len: int | None = None) -> np.ndarray:
    """Gradient w.r.t. the input waveform given the gradient w.r.t. convolve's output."""
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.ndim != 1 or (expected_len is not None and upstream.shape[0] != expected_len):
        raise ShapeMismatchError(f"upstream gradient shape {upstream.shape} does not match the cropped output")
    return convolve_backward_samples(upstream, r.taps)
