"""Shared fixtures: small front-end/architecture configs, a tiny corpus and a trained tiny model."""

import numpy as np
import pytest

from audio.corpus import SynthConfig, synth_corpus
from features.mfcc import MfccConfig
from xvector.model import ArchitectureConfig, SpeakerModel
from xvector.trainer import TrainConfig, train

SMALL_RATE = 8000


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def small_mfcc():
    return MfccConfig(sample_rate=SMALL_RATE, n_coeffs=8, n_mels=12, fft_size=256)


@pytest.fixture(scope="session")
def small_arch():
    return ArchitectureConfig(tdnn_kernels=(3, 3), tdnn_dilations=(1, 2), channels=8, embedding_dim=6, seed=3)


@pytest.fixture(scope="session")
def tiny_synth_config():
    return SynthConfig(
        n_speakers=3,
        utterances_per_speaker=5,
        min_duration_s=0.4,
        max_duration_s=0.5,
        sample_rate=SMALL_RATE,
        seed=5,
    )


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory, tiny_synth_config):
    return synth_corpus(tiny_synth_config, tmp_path_factory.mktemp("corpus"))


@pytest.fixture(scope="session")
def trained_model(tiny_corpus, small_mfcc, small_arch):
    """A tiny model trained for a few epochs; treat as read-only."""
    model = SpeakerModel.initialize(small_mfcc, small_arch, tiny_corpus.label_names)
    train(model, tiny_corpus, TrainConfig(epochs=8, learning_rate=0.01, seed=1))
    return model


@pytest.fixture
def fresh_model(small_mfcc, small_arch):
    return SpeakerModel.initialize(small_mfcc, small_arch, ["a", "b", "c"])


def random_head(model: SpeakerModel, seed: int = 0) -> SpeakerModel:
    """Give a freshly initialised model a non-zero scoring head."""
    rng = np.random.default_rng(seed)
    model.params["head.weight"].values = rng.normal(0.0, 0.5, size=model.params["head.weight"].values.shape)
    model.params["head.bias"].values = rng.normal(0.0, 0.1, size=model.n_classes)
    return model
