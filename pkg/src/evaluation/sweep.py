"""
Per-target attack sweeps: one universal perturbation per target speaker,
evaluated against every other speaker's utterances.
"""

import logging
from typing import Optional, Sequence

from attack.perturbation import UniversalPerturbation
from attack.universal import AttackConfig, select_victims, train_universal
from audio.corpus import Utterance
from evaluation.metrics import count_successes, mean_noise_level_db
from evaluation.report import AttackReport, Condition, TargetRow
from room.rir import Rir
from room.rir_set import RirSet
from utils.errors import ConfigError
from xvector.model import SpeakerModel

logger = logging.getLogger(__name__)


def evaluate_perturbations(
    model: SpeakerModel,
    perturbations: Sequence[UniversalPerturbation],
    victims: Sequence[Utterance],
    channels: Sequence[Optional[Rir]],
    condition: Condition,
    max_workers: Optional[int] = None,
) -> AttackReport:
    """Build a report from already trained perturbations, one row each."""
    report = AttackReport(condition)
    for p in perturbations:
        targeted = select_victims(list(victims), p.target)
        attempts, successes = count_successes(model, p, targeted, channels, max_workers)
        report.rows.append(
            TargetRow(
                target=p.target,
                epsilon=p.epsilon,
                noise_db=mean_noise_level_db(p, targeted),
                n_attempts=attempts,
                n_success=successes,
            )
        )
        logger.info(f"Target {p.target} [{condition}]: {successes}/{attempts} succeeded")
    return report


def channels_for(condition: Condition, rirs: Optional[RirSet]) -> list[Optional[Rir]]:
    """Evaluation channels of a condition; the digital attack has a single None channel."""
    if condition == "no-RIR":
        return [None]
    if rirs is None:
        raise ConfigError(f"condition {condition} needs a RIR set")
    chosen = rirs.train if condition == "train-RIR" else rirs.test
    if not chosen:
        raise ConfigError(f"the RIR set has no {condition.split('-')[0]} RIRs")
    return list(chosen)


def sweep_targets(
    model: SpeakerModel,
    train_utterances: Sequence[Utterance],
    test_utterances: Sequence[Utterance],
    template: AttackConfig,
    targets: Sequence[int],
    rirs: Optional[RirSet] = None,
    condition: Condition = "no-RIR",
    max_workers: Optional[int] = None,
) -> tuple[AttackReport, list[UniversalPerturbation]]:
    """
    Train one perturbation per target on the train split and evaluate it on the test split.

    Each target uses the template config with only its target replaced, so
    the sweep is deterministic given the template seed.
    """
    channels = channels_for(condition, rirs)
    perturbations = []
    for target in targets:
        cfg = template.model_copy(update={"target": int(target)})
        logger.info(f"Sweep: training perturbation for target {target} (eps={cfg.epsilon})")
        perturbation, _ = train_universal(model, list(train_utterances), cfg, rirs)
        perturbations.append(perturbation)
    report = evaluate_perturbations(model, perturbations, test_utterances, channels, condition, max_workers)
    return report, perturbations


def sweep_epsilons(
    model: SpeakerModel,
    train_utterances: Sequence[Utterance],
    test_utterances: Sequence[Utterance],
    template: AttackConfig,
    epsilons: Sequence[float],
    targets: Sequence[int],
    rirs: Optional[RirSet] = None,
    condition: Condition = "no-RIR",
    max_workers: Optional[int] = None,
) -> list[AttackReport]:
    """sweep_targets once per epsilon, in the given order."""
    reports = []
    for epsilon in epsilons:
        cfg = template.model_copy(update={"epsilon": float(epsilon)})
        report, _ = sweep_targets(
            model, train_utterances, test_utterances, cfg, targets, rirs, condition, max_workers
        )
        logger.info(
            f"eps={epsilon}: noise {report.mean_noise_db:.2f} dB, avg success {report.avg_success:.2%}"
        )
        reports.append(report)
    return reports
