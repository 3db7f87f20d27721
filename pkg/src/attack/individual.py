"""
Per-utterance targeted attack baseline: a full-length perturbation
optimised for a single input under the same hinge loss and epsilon bound.
"""

import logging
import time
from dataclasses import dataclass

import numpy as np

from attack.perturbation import clip_mask, clip_samples, hinge_score_grad
from attack.universal import AttackConfig
from audio.wav_io import Waveform
from netcore.optim import OptimizerState, Parameter, adam_step
from utils.errors import ConfigError
from xvector.model import SpeakerModel, label_from_probs

logger = logging.getLogger(__name__)


@dataclass
class IndividualResult:
    delta: np.ndarray
    success: bool
    iterations: int
    elapsed_s: float


def train_individual(model: SpeakerModel, x: Waveform, cfg: AttackConfig) -> IndividualResult:
    """
    Optimise a perturbation for one utterance until it is classified as
    cfg.target or cfg.individual_max_iterations updates have been made.

    Non-convergence is reported through IndividualResult.success, not raised.
    """
    if cfg.target >= model.n_classes:
        raise ConfigError(f"attack.target {cfg.target} is not an enrolled speaker (K={model.n_classes})")
    start = time.perf_counter()
    eps = cfg.epsilon
    delta = Parameter("delta", np.zeros(len(x)))
    state = OptimizerState(learning_rate=cfg.step_size)

    success, iterations = False, 0
    while True:
        probs, cache = model.forward_waveform(x.samples + clip_samples(delta.values, eps))
        loss, grad_scores = hinge_score_grad(probs, cfg.target, cfg.kappa, cfg.update_space)
        if label_from_probs(probs) == cfg.target and loss <= -cfg.kappa:
            success = True
            break
        if iterations >= cfg.individual_max_iterations:
            break
        delta.grad = model.backward_waveform_scores(cache, grad_scores) * clip_mask(delta.values, eps)
        adam_step([delta], state)
        np.clip(delta.values, -eps, eps, out=delta.values)
        iterations += 1

    elapsed = time.perf_counter() - start
    logger.debug(f"Individual attack: success={success} iterations={iterations} time={elapsed:.3f}s")
    return IndividualResult(clip_samples(delta.values, eps), success, iterations, elapsed)
