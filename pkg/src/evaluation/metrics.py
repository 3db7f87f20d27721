"""
Attack success rate and relative noise level.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Optional, Sequence

import numpy as np

from attack.perturbation import UniversalPerturbation, apply_perturbation
from attack.universal import select_victims
from audio.corpus import Utterance
from audio.wav_io import Waveform
from config.settings import settings
from room.convolution import convolve
from room.rir import Rir
from utils.errors import SilentReferenceError
from xvector.model import SpeakerModel, predict

logger = logging.getLogger(__name__)


def _workers(max_workers: Optional[int]) -> int:
    return max(1, max_workers if max_workers is not None else settings.max_workers)


def count_successes(
    model: SpeakerModel,
    perturbation: UniversalPerturbation,
    victims: Sequence[Utterance],
    channels: Sequence[Optional[Rir]] = (None,),
    max_workers: Optional[int] = None,
) -> tuple[int, int]:
    """
    Count attempts and successes; every (victim, channel) pair is one attempt.

    Utterances of the target speaker are dropped from the victim set. A
    channel of None is the digital attack.

    Returns:
        (n_attempts, n_success)
    """
    victims = select_victims(list(victims), perturbation.target)
    channels = list(channels) or [None]

    def attempt(pair: tuple[Utterance, Optional[Rir]]) -> bool:
        utterance, rir = pair
        heard = apply_perturbation(utterance.waveform, perturbation)
        if rir is not None:
            heard = convolve(heard, rir)
        return predict(model, heard) == perturbation.target

    pairs = [(u, rir) for u in victims for rir in channels]
    with ThreadPoolExecutor(max_workers=_workers(max_workers)) as pool:
        outcomes = list(pool.map(attempt, pairs))
    return len(outcomes), int(sum(outcomes))


def attack_success_rate(
    model: SpeakerModel,
    perturbation: UniversalPerturbation,
    victims: Sequence[Utterance],
    channel: Optional[Rir] = None,
    max_workers: Optional[int] = None,
) -> float:
    """
    Fraction of victims classified as the perturbation's target.

    Raises:
        EmptyVictimSetError: no victim left once the target speaker is excluded
    """
    attempts, successes = count_successes(model, perturbation, victims, [channel], max_workers)
    return successes / attempts


def noise_level_db(delta: Waveform | np.ndarray, x: Waveform | np.ndarray) -> float:
    """
    20·log10(max|delta| / max|x|).

    A zero perturbation gives -inf.

    Raises:
        SilentReferenceError: x has zero peak
    """
    delta_peak = float(np.max(np.abs(_samples(delta)), initial=0.0))
    x_peak = float(np.max(np.abs(_samples(x)), initial=0.0))
    if x_peak == 0.0:
        raise SilentReferenceError("noise level is undefined against a silent reference")
    if delta_peak == 0.0:
        return float("-inf")
    return float(20.0 * np.log10(delta_peak / x_peak))


def _samples(w: Waveform | np.ndarray) -> np.ndarray:
    return w.samples if isinstance(w, Waveform) else np.asarray(w, dtype=np.float64)


def mean_noise_level_db(perturbation: UniversalPerturbation, victims: Sequence[Utterance]) -> float:
    """Mean of the per-utterance noise level of the clipped, tiled perturbation."""
    levels = [noise_level_db(perturbation.full_delta(len(u.waveform)), u.waveform) for u in victims]
    return float(np.mean(levels))
