"""
Universal perturbation primitives: tiling of the short trainable sequence,
epsilon clipping, application to an utterance, the hinge loss on
probabilities, and persistence.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel

from audio.wav_io import Waveform, read_float_wav, write_float_wav
from netcore.layers import softmax_bwd
from utils.errors import DataError, ShapeMismatchError
from utils.retry import retry_with_backoff, reraise_transient

logger = logging.getLogger(__name__)

PERTURBATION_FORMAT_VERSION = 1


def tile_samples(unit: np.ndarray, target_len: int) -> np.ndarray:
    """output[i] = unit[i mod len(unit)] for i < target_len."""
    if unit.shape[0] == 0:
        raise ShapeMismatchError("perturbation unit is empty")
    if target_len <= 0:
        raise ShapeMismatchError(f"target length must be positive, got {target_len}")
    repeats = -(-target_len // unit.shape[0])
    return np.tile(unit, repeats)[:target_len]


def tile_adjoint(grad: np.ndarray, unit_len: int) -> np.ndarray:
    """Sum the gradient over every repetition of the unit."""
    repeats = -(-grad.shape[0] // unit_len)
    padded = np.zeros(repeats * unit_len)
    padded[: grad.shape[0]] = grad
    return padded.reshape(repeats, unit_len).sum(axis=0)


def clip_samples(delta: np.ndarray, epsilon: float) -> np.ndarray:
    return np.clip(delta, -epsilon, epsilon)


def clip_mask(delta: np.ndarray, epsilon: float) -> np.ndarray:
    # Inclusive at the bound so projected coordinates keep receiving gradient
    return np.abs(delta) <= epsilon


def build_delta(unit: Waveform, target_len: int) -> Waveform:
    """Tile the unit end to end and crop to target_len samples."""
    return Waveform(tile_samples(unit.samples, target_len), unit.sample_rate)


def clip_eps(delta: Waveform, epsilon: float) -> Waveform:
    """Clamp every sample into [-epsilon, epsilon]."""
    if epsilon < 0:
        raise ValueError(f"epsilon must be non-negative, got {epsilon}")
    return Waveform(clip_samples(delta.samples, epsilon), delta.sample_rate)


UpdateSpace = Literal["log_probability", "probability"]


def cw_loss(probs: np.ndarray, target: int, kappa: float = 0.0) -> float:
    """max(max_{i != t} P_i - P_t, -kappa)."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape[0] < 2:
        raise ShapeMismatchError(f"hinge loss needs at least 2 classes, got {probs.shape[0]}")
    if not 0 <= target < probs.shape[0]:
        raise ShapeMismatchError(f"target {target} is outside [0, {probs.shape[0]})")
    others = np.delete(probs, target)
    return float(max(np.max(others) - probs[target], -kappa))


def _strongest_rival(probs: np.ndarray, target: int) -> int:
    masked = np.array(probs, dtype=np.float64)
    masked[target] = -np.inf
    return int(np.argmax(masked))


def cw_loss_grad(probs: np.ndarray, target: int, kappa: float = 0.0) -> tuple[float, np.ndarray]:
    """
    Loss and its (sub)gradient w.r.t. the probabilities.

    The inner max routes gradient to the single strongest non-target class,
    lowest index on ties; at the floor the gradient is zero.
    """
    loss = cw_loss(probs, target, kappa)
    grad = np.zeros_like(probs, dtype=np.float64)
    if loss > -kappa:
        grad[_strongest_rival(probs, target)] = 1.0
        grad[target] = -1.0
    return loss, grad


def hinge_score_grad(
    probs: np.ndarray,
    target: int,
    kappa: float = 0.0,
    update_space: UpdateSpace = "log_probability",
) -> tuple[float, np.ndarray]:
    """
    Hinge loss on the probabilities and an update direction w.r.t. the scores.

    With "probability" the direction is the exact gradient of cw_loss, which
    vanishes once the softmax saturates. With "log_probability" it is the
    gradient of the same margin taken between log-probabilities,
    s_rival - s_target, so it stays at unit size on a confident model.
    Both are zero at the floor and share the rival chosen by cw_loss_grad.

    Returns:
        (cw_loss value, gradient w.r.t. the pre-softmax scores)
    """
    probs = np.asarray(probs, dtype=np.float64)
    loss, grad_probs = cw_loss_grad(probs, target, kappa)
    if update_space == "probability":
        return loss, softmax_bwd(probs, grad_probs)
    if update_space != "log_probability":
        raise ValueError(f"unknown update space {update_space!r}")
    return loss, grad_probs


class PerturbationMetadata(BaseModel):
    epsilon: float
    kappa: float
    target: int
    seed: int
    sample_rate: int
    epochs_run: int = 0
    train_success_rate: float = 0.0
    rir_provenance: list[str] = []
    format_version: int = PERTURBATION_FORMAT_VERSION


@dataclass
class UniversalPerturbation:
    """The trainable unit delta plus epsilon, target label and training metadata."""

    delta_unit: Waveform
    epsilon: float
    target: int
    metadata: PerturbationMetadata = field(default=None)

    def __post_init__(self):
        if self.metadata is None:
            self.metadata = PerturbationMetadata(
                epsilon=self.epsilon, kappa=0.0, target=self.target, seed=0,
                sample_rate=self.delta_unit.sample_rate,
            )

    def finalize(self) -> None:
        self.delta_unit = clip_eps(self.delta_unit, self.epsilon)

    def full_delta(self, n_samples: int) -> np.ndarray:
        """Clip_eps(build_delta(unit, n)) as a raw array."""
        return clip_samples(tile_samples(self.delta_unit.samples, n_samples), self.epsilon)

    @retry_with_backoff
    def save(self, stem: str | Path) -> None:
        """Write <stem>.wav (64-bit float) and <stem>.json."""
        stem = Path(stem)
        write_float_wav(stem.with_suffix(".wav"), self.delta_unit)
        try:
            stem.with_suffix(".json").write_text(self.metadata.model_dump_json(indent=2), encoding="utf-8")
        except OSError as e:
            reraise_transient(e)

    @classmethod
    def load(cls, stem: str | Path) -> "UniversalPerturbation":
        stem = Path(stem)
        metadata = PerturbationMetadata.model_validate_json(stem.with_suffix(".json").read_text(encoding="utf-8"))
        if metadata.format_version != PERTURBATION_FORMAT_VERSION:
            raise DataError(f"{stem}: perturbation format version {metadata.format_version} is not supported")
        unit = read_float_wav(stem.with_suffix(".wav"))
        if unit.sample_rate != metadata.sample_rate:
            raise DataError(f"{stem}: WAV rate {unit.sample_rate} Hz disagrees with metadata {metadata.sample_rate} Hz")
        return cls(unit, metadata.epsilon, metadata.target, metadata)


def apply_perturbation(x: Waveform, p: UniversalPerturbation) -> Waveform:
    """
    x' = x + Clip_eps(build_delta(unit, len(x))).

    The result is not clamped to [-1, 1]; clamping happens only on WAV export.
    """
    if len(x) == 0:
        raise ShapeMismatchError("cannot perturb an empty waveform")
    if x.sample_rate != p.delta_unit.sample_rate:
        raise DataError(f"waveform is {x.sample_rate} Hz, perturbation is {p.delta_unit.sample_rate} Hz")
    return Waveform(x.samples + p.full_delta(len(x)), x.sample_rate)
