"""
Wall-clock comparison of applying a pre-trained universal perturbation
against optimising a per-utterance perturbation.
"""

import logging
import time
from typing import Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from attack.individual import train_individual
from attack.perturbation import UniversalPerturbation, apply_perturbation
from attack.universal import AttackConfig, select_victims
from audio.corpus import Utterance
from audio.wav_io import Waveform
from evaluation.report import TimingSummary
from utils.errors import EmptyVictimSetError
from xvector.model import SpeakerModel

logger = logging.getLogger(__name__)


class BenchConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    n_utterances: int = Field(5, ge=1)
    apply_repeats: int = Field(20, ge=1)
    lengths_s: tuple[float, ...] = (1.0, 2.0, 4.0, 8.0)


def _time_apply(x: Waveform, p: UniversalPerturbation, repeats: int) -> float:
    timings = []
    for _ in range(repeats):
        start = time.perf_counter()
        apply_perturbation(x, p)
        timings.append(time.perf_counter() - start)
    return float(np.median(timings))


def timing_benchmark(
    model: SpeakerModel,
    perturbation: UniversalPerturbation,
    utterances: Sequence[Utterance],
    attack: AttackConfig,
    bench: BenchConfig,
) -> TimingSummary:
    """
    Median per-utterance time of apply_perturbation and of train_individual.

    The individual attack targets the same speaker as the perturbation.

    Raises:
        EmptyVictimSetError: no utterance to time
    """
    if not utterances:
        raise EmptyVictimSetError("timing benchmark needs at least one utterance")
    sample = select_victims(list(utterances), perturbation.target)[: bench.n_utterances]
    cfg = attack.model_copy(update={"target": perturbation.target, "epsilon": perturbation.epsilon})

    apply_times = [_time_apply(u.waveform, perturbation, bench.apply_repeats) for u in sample]
    results = []
    for u in sample:
        result = train_individual(model, u.waveform, cfg)
        results.append(result)
        logger.info(
            f"Individual attack on {u.utterance_id}: success={result.success} "
            f"iterations={result.iterations} time={result.elapsed_s:.2f}s"
        )

    fs = perturbation.delta_unit.sample_rate
    by_length = []
    for seconds in bench.lengths_s:
        n = max(1, int(round(seconds * fs)))
        silence = Waveform(np.zeros(n), fs)
        by_length.append((n, _time_apply(silence, perturbation, bench.apply_repeats)))

    summary = TimingSummary(
        apply_median_s=float(np.median(apply_times)),
        individual_median_s=float(np.median([r.elapsed_s for r in results])),
        n_utterances=len(sample),
        individual_success_rate=sum(r.success for r in results) / len(results),
        apply_by_length=by_length,
    )
    logger.info(f"✓ Benchmark: speedup {summary.speedup:.1f}x over {len(sample)} utterances")
    return summary
