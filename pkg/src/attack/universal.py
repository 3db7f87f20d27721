"""
Universal targeted perturbation training.

A short trainable sequence is tiled over each victim utterance, clipped to
[-epsilon, epsilon] and added to it; optionally the result is passed
through a randomly chosen room impulse response. The hinge loss on the
output probabilities decides when an utterance is already fooled; the
same margin, taken between log-probabilities unless configured otherwise,
is backpropagated through the model, the front end, the room channel and
the tile/clip structure, one utterance at a time.
"""

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from attack.perturbation import (
    PerturbationMetadata,
    UniversalPerturbation,
    UpdateSpace,
    clip_mask,
    clip_samples,
    hinge_score_grad,
    tile_adjoint,
    tile_samples,
)
from audio.corpus import Utterance
from audio.wav_io import Waveform
from netcore.optim import OptimizerState, Parameter, adam_step
from room.convolution import convolve_backward_samples, convolve_samples
from room.rir import Rir
from room.rir_set import RirSet
from utils.errors import ConfigError, EmptyVictimSetError
from utils.retry import retry_with_backoff, reraise_transient
from xvector.model import SpeakerModel, label_from_probs

logger = logging.getLogger(__name__)

# Independent generator streams derived from AttackConfig.seed
_INIT_STREAM, _ORDER_STREAM, _RIR_STREAM, _EVAL_STREAM = range(4)


class AttackConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    epsilon: float = Field(0.05, gt=0, le=1)
    kappa: float = Field(0.0, ge=0)
    delta_len_s: float = Field(1.0, gt=0)
    target: int = Field(0, ge=0)
    learning_rate: Optional[float] = Field(None, gt=0)
    max_epochs: int = Field(50, ge=0)
    success_threshold: float = Field(0.95, ge=0, le=1)
    rir_mode: Literal["none", "set"] = "none"
    skip_successful: bool = True
    update_space: UpdateSpace = "log_probability"
    individual_max_iterations: int = Field(500, ge=0)
    seed: int

    @property
    def step_size(self) -> float:
        return self.learning_rate if self.learning_rate is not None else 0.05 * self.epsilon


@dataclass
class AttackEpochRecord:
    epoch: int
    loss: float
    success_rate: float
    updates: int
    skipped: int


@dataclass
class AttackTrainingLog:
    records: list[AttackEpochRecord] = field(default_factory=list)

    @retry_with_backoff
    def to_csv(self, path: str | Path) -> None:
        try:
            with open(path, "w", newline="", encoding="utf-8") as handle:
                writer = csv.writer(handle)
                writer.writerow(["epoch", "loss", "success_rate", "updates", "skipped"])
                for r in self.records:
                    writer.writerow([r.epoch, repr(r.loss), repr(r.success_rate), r.updates, r.skipped])
        except OSError as e:
            reraise_transient(e)


def _stream(seed: int, stream: int, *extra: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream, *extra])


def select_victims(utterances: list[Utterance], target: int) -> list[Utterance]:
    """Utterances of every speaker except the target."""
    victims = [u for u in utterances if u.speaker != target]
    if not victims:
        raise EmptyVictimSetError(f"no victim utterances left after excluding target speaker {target}")
    return victims


def _describe(rir: Rir) -> str:
    spec = rir.provenance
    if spec is None:
        return f"taps={len(rir)}"
    return f"src={spec.source_pos} mic={spec.mic_pos} absorption={spec.absorption} order={spec.max_order}"


def _success_rate(
    model: SpeakerModel,
    unit: np.ndarray,
    samples: list[np.ndarray],
    cfg: AttackConfig,
    channels: list[Rir],
    rng: np.random.Generator,
) -> float:
    hits = 0
    for x in samples:
        heard = x + clip_samples(tile_samples(unit, x.shape[0]), cfg.epsilon)
        if channels:
            heard = convolve_samples(heard, channels[rng.integers(len(channels))].taps)
        hits += label_from_probs(model.forward_waveform(heard)[0]) == cfg.target
    return hits / len(samples)


def train_universal(
    model: SpeakerModel,
    utterances: list[Utterance],
    cfg: AttackConfig,
    rirs: Optional[RirSet] = None,
) -> tuple[UniversalPerturbation, AttackTrainingLog]:
    """
    Train one universal perturbation towards cfg.target.

    Args:
        model: Trained speaker model (read only)
        utterances: Training utterances; the target speaker's are excluded
        cfg: Attack configuration
        rirs: Required when cfg.rir_mode == "set"; only its train subset is used

    Returns:
        (finalised perturbation, per-epoch log)
    """
    if cfg.target >= model.n_classes:
        raise ConfigError(f"attack.target {cfg.target} is not an enrolled speaker (K={model.n_classes})")
    channels: list[Rir] = []
    if cfg.rir_mode == "set":
        if rirs is None or not rirs.train:
            raise ConfigError("attack.rir_mode = 'set' needs a RIR set with a non-empty train subset")
        channels = rirs.train

    victims = select_victims(utterances, cfg.target)
    samples = [u.waveform.samples for u in victims]
    fs = model.mfcc_config.sample_rate
    unit_len = max(1, int(round(cfg.delta_len_s * fs)))
    eps = cfg.epsilon

    delta = Parameter("delta_unit", _stream(cfg.seed, _INIT_STREAM).uniform(-eps / 10, eps / 10, unit_len))
    state = OptimizerState(learning_rate=cfg.step_size)
    order_rng = _stream(cfg.seed, _ORDER_STREAM)
    rir_rng = _stream(cfg.seed, _RIR_STREAM)
    log = AttackTrainingLog()
    success = 0.0

    logger.info(
        f"Training universal perturbation: target={cfg.target} eps={eps} victims={len(samples)} "
        f"channels={len(channels) or 'none'}"
    )
    for epoch in range(1, cfg.max_epochs + 1):
        losses, updates, skipped = [], 0, 0
        for index in order_rng.permutation(len(samples)):
            x = samples[index]
            rir = channels[rir_rng.integers(len(channels))] if channels else None
            full = tile_samples(delta.values, x.shape[0])
            heard = x + clip_samples(full, eps)
            if rir is not None:
                heard = convolve_samples(heard, rir.taps)

            probs, cache = model.forward_waveform(heard)
            loss, grad_scores = hinge_score_grad(probs, cfg.target, cfg.kappa, cfg.update_space)
            losses.append(loss)
            if cfg.skip_successful and loss <= -cfg.kappa:
                skipped += 1
                continue

            grad = model.backward_waveform_scores(cache, grad_scores)
            if rir is not None:
                grad = convolve_backward_samples(grad, rir.taps)
            delta.grad = tile_adjoint(grad * clip_mask(full, eps), unit_len)
            adam_step([delta], state)
            np.clip(delta.values, -eps, eps, out=delta.values)
            updates += 1

        success = _success_rate(model, delta.values, samples, cfg, channels, _stream(cfg.seed, _EVAL_STREAM, epoch))
        record = AttackEpochRecord(epoch, float(np.mean(losses)), success, updates, skipped)
        log.records.append(record)
        logger.info(
            f"Attack epoch {epoch}/{cfg.max_epochs}: loss={record.loss:.4f} "
            f"success={success:.3f} updates={updates} skipped={skipped}"
        )
        if success >= cfg.success_threshold:
            break

    if not log.records:
        success = _success_rate(model, delta.values, samples, cfg, channels, _stream(cfg.seed, _EVAL_STREAM, 0))

    perturbation = UniversalPerturbation(
        delta_unit=Waveform(delta.values.copy(), fs),
        epsilon=eps,
        target=cfg.target,
        metadata=PerturbationMetadata(
            epsilon=eps,
            kappa=cfg.kappa,
            target=cfg.target,
            seed=cfg.seed,
            sample_rate=fs,
            epochs_run=len(log.records),
            train_success_rate=success,
            rir_provenance=[_describe(rir) for rir in channels],
        ),
    )
    perturbation.finalize()
    return perturbation, log
