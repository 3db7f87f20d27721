"""
X-vector style speaker model F(x) = argmax P(x).

MFCC front end -> global feature standardisation -> TDNN stack (dilated
convolution + ReLU) -> statistics pooling -> segment layer (affine + ReLU,
the embedding) -> Gaussian/softmax scoring head.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from audio.wav_io import Waveform
from features.mfcc import MfccCache, MfccConfig, mfcc_backward_from_cache, mfcc_forward_with_cache
from netcore import layers
from netcore.optim import Parameter
from utils.errors import DataError, InputTooShortError

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


class ArchitectureConfig(BaseModel):
    """Layer geometry of the network."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    tdnn_kernels: tuple[int, ...] = (5, 3, 3)
    tdnn_dilations: tuple[int, ...] = (1, 2, 3)
    channels: int = Field(64, gt=0)
    embedding_dim: int = Field(64, gt=0)
    seed: int

    @model_validator(mode="after")
    def _check_layers(self):
        if len(self.tdnn_kernels) != len(self.tdnn_dilations) or not self.tdnn_kernels:
            raise ValueError("tdnn_kernels and tdnn_dilations must be non-empty and of equal length")
        if min(self.tdnn_kernels) < 1 or min(self.tdnn_dilations) < 1:
            raise ValueError("kernel widths and dilations must be >= 1")
        return self

    @property
    def receptive_field(self) -> int:
        """Frames consumed by the TDNN stack to emit one output frame."""
        return 1 + sum((k - 1) * d for k, d in zip(self.tdnn_kernels, self.tdnn_dilations))


@dataclass
class NetCache:
    normalized: np.ndarray
    layer_inputs: list[np.ndarray]
    layer_preacts: list[np.ndarray]
    pooled: np.ndarray
    segment_preact: np.ndarray
    embedding: np.ndarray


@dataclass
class WaveformCache:
    mfcc: MfccCache
    net: NetCache
    probs: np.ndarray


@dataclass
class SpeakerModel:
    mfcc_config: MfccConfig
    architecture: ArchitectureConfig
    labels: list[str]
    params: dict[str, Parameter]
    feature_mean: np.ndarray
    feature_std: np.ndarray
    normalization_fitted: bool = False
    version: int = FORMAT_VERSION
    _tdnn: list[tuple[str, str, int]] = field(init=False, repr=False)

    def __post_init__(self):
        self._tdnn = [
            (f"tdnn{i}.kernel", f"tdnn{i}.bias", dilation)
            for i, dilation in enumerate(self.architecture.tdnn_dilations)
        ]

    @classmethod
    def initialize(
        cls,
        mfcc_config: MfccConfig,
        architecture: ArchitectureConfig,
        labels: list[str],
    ) -> "SpeakerModel":
        """He-initialised TDNN and segment layers; zero scoring head."""
        if len(labels) < 2:
            raise DataError(f"a speaker model needs at least 2 enrolled speakers, got {len(labels)}")
        rng = np.random.default_rng(architecture.seed)
        params = {}
        c_in = mfcc_config.n_coeffs
        for i, width in enumerate(architecture.tdnn_kernels):
            std = np.sqrt(2.0 / (width * c_in))
            params[f"tdnn{i}.kernel"] = rng.normal(0.0, std, size=(width, c_in, architecture.channels))
            params[f"tdnn{i}.bias"] = np.zeros(architecture.channels)
            c_in = architecture.channels
        params["segment.weight"] = rng.normal(
            0.0, np.sqrt(2.0 / (2 * architecture.channels)), size=(2 * architecture.channels, architecture.embedding_dim)
        )
        params["segment.bias"] = np.zeros(architecture.embedding_dim)
        params["head.weight"] = np.zeros((architecture.embedding_dim, len(labels)))
        params["head.bias"] = np.zeros(len(labels))
        return cls(
            mfcc_config=mfcc_config,
            architecture=architecture,
            labels=list(labels),
            params={name: Parameter(name, values) for name, values in params.items()},
            feature_mean=np.zeros(mfcc_config.n_coeffs),
            feature_std=np.ones(mfcc_config.n_coeffs),
        )

    @property
    def n_classes(self) -> int:
        return len(self.labels)

    @property
    def min_samples(self) -> int:
        return self.mfcc_config.min_samples(self.architecture.receptive_field)

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for param in self.params.values():
            param.zero_grad()

    def fit_feature_normalization(self, features: list[np.ndarray]) -> None:
        """Per-coefficient mean/std over all frames of the given utterances."""
        stacked = np.concatenate(features, axis=0)
        self.feature_mean = stacked.mean(axis=0)
        self.feature_std = np.maximum(stacked.std(axis=0), 1e-8)
        self.normalization_fitted = True

    def features(self, samples: np.ndarray) -> tuple[np.ndarray, MfccCache]:
        if samples.shape[0] < self.min_samples:
            raise InputTooShortError("waveform (samples)", self.min_samples, samples.shape[0])
        return mfcc_forward_with_cache(samples, self.mfcc_config)

    def forward(self, features: np.ndarray) -> tuple[np.ndarray, NetCache]:
        """Scores (pre-softmax) for one utterance's MFCC matrix."""
        if features.shape[0] < self.architecture.receptive_field:
            raise InputTooShortError("feature matrix (frames)", self.architecture.receptive_field, features.shape[0])
        p = self.params
        normalized = (features - self.feature_mean) / self.feature_std
        hidden = normalized
        inputs, preacts = [], []
        for kernel, bias, dilation in self._tdnn:
            inputs.append(hidden)
            pre = layers.conv1d_dilated_fwd(hidden, p[kernel].values, dilation, p[bias].values)
            preacts.append(pre)
            hidden = layers.relu_fwd(pre)
        pooled = layers.stats_pool_fwd(hidden)
        segment = layers.affine_fwd(pooled, p["segment.weight"].values, p["segment.bias"].values)
        embedding = layers.relu_fwd(segment)
        scores = layers.affine_fwd(embedding, p["head.weight"].values, p["head.bias"].values)
        return scores, NetCache(normalized, inputs, preacts, pooled, segment, embedding)

    def backward(self, cache: NetCache, grad_scores: np.ndarray, accumulate: bool = True) -> np.ndarray:
        """
        Backpropagate a score gradient.

        Args:
            cache: From forward
            grad_scores: Gradient of the loss w.r.t. the scores
            accumulate: Add parameter gradients into Parameter.grad

        Returns:
            Gradient w.r.t. the (unnormalised) MFCC features
        """
        p = self.params
        grads = {}
        grad_embedding, grads["head.weight"], grads["head.bias"] = layers.affine_bwd(
            cache.embedding, p["head.weight"].values, grad_scores
        )
        grad_segment = layers.relu_bwd(cache.segment_preact, grad_embedding)
        grad_pooled, grads["segment.weight"], grads["segment.bias"] = layers.affine_bwd(
            cache.pooled, p["segment.weight"].values, grad_segment
        )
        grad_hidden = layers.stats_pool_bwd(layers.relu_fwd(cache.layer_preacts[-1]), grad_pooled)
        for index in reversed(range(len(self._tdnn))):
            kernel, bias, dilation = self._tdnn[index]
            grad_pre = layers.relu_bwd(cache.layer_preacts[index], grad_hidden)
            grad_hidden, grads[kernel], grads[bias] = layers.conv1d_dilated_bwd(
                cache.layer_inputs[index], p[kernel].values, dilation, grad_pre
            )
        if accumulate:
            for name, grad in grads.items():
                p[name].grad += grad
        return grad_hidden / self.feature_std

    def embed(self, features: np.ndarray) -> np.ndarray:
        return self.forward(features)[1].embedding

    def forward_waveform(self, samples: np.ndarray) -> tuple[np.ndarray, WaveformCache]:
        """P(x) for raw samples, keeping what backward_waveform needs."""
        feats, mfcc_cache = self.features(samples)
        scores, net_cache = self.forward(feats)
        probs = layers.softmax(scores)
        return probs, WaveformCache(mfcc_cache, net_cache, probs)

    def backward_waveform(self, cache: WaveformCache, grad_probs: np.ndarray) -> np.ndarray:
        """Gradient w.r.t. the input samples; parameter gradients are not touched."""
        return self.backward_waveform_scores(cache, layers.softmax_bwd(cache.probs, grad_probs))

    def backward_waveform_scores(self, cache: WaveformCache, grad_scores: np.ndarray) -> np.ndarray:
        """Like backward_waveform, with the upstream gradient given w.r.t. the pre-softmax scores."""
        grad_features = self.backward(cache.net, grad_scores, accumulate=False)
        return mfcc_backward_from_cache(grad_features, cache.mfcc, self.mfcc_config)


def _check_rate(m: SpeakerModel, w: Waveform) -> None:
    if w.sample_rate != m.mfcc_config.sample_rate:
        raise DataError(f"waveform is {w.sample_rate} Hz, model expects {m.mfcc_config.sample_rate} Hz")


def forward_probs(m: SpeakerModel, w: Waveform) -> np.ndarray:
    """Probabilities over the enrolled speakers."""
    _check_rate(m, w)
    return m.forward_waveform(w.samples)[0]


def label_from_probs(probs: np.ndarray) -> int:
    # np.argmax returns the first maximum, so exact ties go to the lowest index
    return int(np.argmax(probs))


def predict(m: SpeakerModel, w: Waveform) -> int:
    return label_from_probs(forward_probs(m, w))


def predict_samples(m: SpeakerModel, samples: np.ndarray) -> int:
    return label_from_probs(m.forward_waveform(samples)[0])


def refit_gaussian_head(
    m: SpeakerModel,
    features: list[np.ndarray],
    labels: list[int],
    regularization: float = 1e-3,
    priors: Optional[np.ndarray] = None,
) -> None:
    """Replace the scoring head by the shared-covariance Gaussian fitted on embeddings."""
    embeddings = np.stack([m.embed(f) for f in features])
    labels = np.asarray(labels)
    means = np.stack([embeddings[labels == k].mean(axis=0) for k in range(m.n_classes)])
    centered = embeddings - means[labels]
    cov = centered.T @ centered / len(labels)
    cov += regularization * max(np.trace(cov) / cov.shape[0], 1e-8) * np.eye(cov.shape[0])
    weight, bias = layers.gaussian_head(means, cov, priors)
    m.params["head.weight"].values = weight
    m.params["head.bias"].values = bias
    logger.info(f"Refitted Gaussian scoring head on {len(labels)} embeddings")
