"""
Training loop and accuracy evaluation for the speaker model.
"""

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from audio.corpus import CorpusManifest, SplitTag, Utterance
from netcore import layers
from netcore.optim import OptimizerState, adam_step
from utils.errors import ManifestError, TrainingDivergedError
from utils.retry import retry_with_backoff, reraise_transient
from xvector.model import SpeakerModel, label_from_probs, refit_gaussian_head

logger = logging.getLogger(__name__)


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    epochs: int = Field(30, ge=0)
    learning_rate: float = Field(1e-3, ge=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    adam_epsilon: float = Field(1e-8, gt=0)
    gaussian_refit: bool = False
    seed: int


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    accuracy: float


@dataclass
class TrainingLog:
    """Mean train-split loss after each epoch and held-out accuracy."""

    initial_loss: Optional[float] = None
    records: list[EpochRecord] = field(default_factory=list)

    @retry_with_backoff
    def to_csv(self, path: str | Path) -> None:
        try:
            with open(path, "w", newline="", encoding="utf-8") as handle:
                writer = csv.writer(handle)
                writer.writerow(["epoch", "loss", "accuracy"])
                for record in self.records:
                    writer.writerow([record.epoch, repr(record.loss), repr(record.accuracy)])
        except OSError as e:
            reraise_transient(e)


def _features(m: SpeakerModel, utterances: list[Utterance]) -> list[np.ndarray]:
    return [m.features(u.waveform.samples)[0] for u in utterances]


def _mean_loss(m: SpeakerModel, features: list[np.ndarray], labels: list[int]) -> float:
    losses = [layers.softmax_cross_entropy(m.forward(f)[0], y)[0] for f, y in zip(features, labels)]
    return float(np.mean(losses))


def _accuracy(m: SpeakerModel, features: list[np.ndarray], labels: list[int]) -> float:
    correct = sum(label_from_probs(m.forward(f)[0]) == y for f, y in zip(features, labels))
    return correct / len(labels)


def train(m: SpeakerModel, corpus: CorpusManifest, hyper: TrainConfig) -> TrainingLog:
    """
    Minimise softmax cross-entropy one utterance at a time.

    Utterances are shuffled every epoch by a generator seeded from
    hyper.seed, so the log and the parameters are reproducible.

    Raises:
        ManifestError: a speaker has no training utterance
        TrainingDivergedError: a non-finite loss
    """
    log = TrainingLog()
    if hyper.epochs == 0:
        return log

    train_utts = corpus.load_split("train")
    test_utts = corpus.load_split("test")
    missing = sorted(set(range(m.n_classes)) - {u.speaker for u in train_utts})
    if missing:
        raise ManifestError(f"speakers {missing} have no training utterances")

    train_feats = _features(m, train_utts)
    test_feats = _features(m, test_utts)
    train_labels = [u.speaker for u in train_utts]
    test_labels = [u.speaker for u in test_utts]

    if not m.normalization_fitted:
        m.fit_feature_normalization(train_feats)

    rng = np.random.default_rng(hyper.seed)
    state = OptimizerState(
        learning_rate=hyper.learning_rate,
        beta1=hyper.beta1,
        beta2=hyper.beta2,
        epsilon=hyper.adam_epsilon,
    )
    params = m.parameters()
    log.initial_loss = _mean_loss(m, train_feats, train_labels)
    logger.info(f"Training on {len(train_feats)} utterances, initial loss {log.initial_loss:.4f}")

    for epoch in range(1, hyper.epochs + 1):
        for index in rng.permutation(len(train_feats)):
            m.zero_grad()
            scores, cache = m.forward(train_feats[index])
            loss, grad_scores = layers.softmax_cross_entropy(scores, train_labels[index])
            if not math.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss {loss} at epoch {epoch} on utterance {train_utts[index].utterance_id}"
                )
            m.backward(cache, grad_scores)
            adam_step(params, state)

        record = EpochRecord(
            epoch=epoch,
            loss=_mean_loss(m, train_feats, train_labels),
            accuracy=_accuracy(m, test_feats, test_labels),
        )
        if not math.isfinite(record.loss):
            raise TrainingDivergedError(f"non-finite mean loss after epoch {epoch}")
        log.records.append(record)
        logger.info(f"Epoch {epoch}/{hyper.epochs}: loss={record.loss:.4f} test_accuracy={record.accuracy:.3f}")

    if hyper.gaussian_refit:
        refit_gaussian_head(m, train_feats, train_labels)
    return log


def accuracy_on(m: SpeakerModel, utterances: list[Utterance]) -> float:
    if not utterances:
        raise ManifestError("cannot compute accuracy on an empty utterance set")
    return _accuracy(m, _features(m, utterances), [u.speaker for u in utterances])


def accuracy(m: SpeakerModel, corpus: CorpusManifest, split: SplitTag) -> float:
    """Fraction of utterances in ``split`` whose prediction equals the true label."""
    return accuracy_on(m, corpus.load_split(split))
