"""
Forward/backward operator pairs for the speaker network.

Each *_fwd returns its output; each *_bwd takes the forward inputs and the
upstream gradient and returns the gradients of the inputs, in argument
order. All operators are deterministic and work on float64 arrays with
frames along axis 0.
"""

from typing import Optional

import numpy as np

from utils.errors import InputTooShortError, ShapeMismatchError

VARIANCE_FLOOR = 1e-10


def conv1d_dilated_fwd(
    x: np.ndarray,
    kernel: np.ndarray,
    dilation: int = 1,
    bias: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Valid temporal convolution over frames (a TDNN layer without activation).

    Args:
        x: Input frames, shape (T, Cin)
        kernel: Shape (k, Cin, Cout)
        dilation: Spacing between kernel taps in frames
        bias: Optional shape (Cout,)

    Returns:
        Output frames, shape (T - (k - 1) * dilation, Cout)
    """
    width, c_in, _ = kernel.shape
    if x.ndim != 2 or x.shape[1] != c_in:
        raise ShapeMismatchError(f"conv input {x.shape} does not match kernel input channels {c_in}")
    context = (width - 1) * dilation
    if x.shape[0] < context + 1:
        raise InputTooShortError("conv input (frames)", context + 1, x.shape[0])
    t_out = x.shape[0] - context
    out = sum(x[i * dilation: i * dilation + t_out] @ kernel[i] for i in range(width))
    if bias is not None:
        out = out + bias
    return out


def conv1d_dilated_bwd(
    x: np.ndarray,
    kernel: np.ndarray,
    dilation: int,
    grad_out: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (grad_x, grad_kernel, grad_bias)."""
    width = kernel.shape[0]
    t_out = grad_out.shape[0]
    if t_out != x.shape[0] - (width - 1) * dilation or grad_out.shape[1] != kernel.shape[2]:
        raise ShapeMismatchError(f"conv upstream {grad_out.shape} does not match forward geometry")
    grad_x = np.zeros_like(x)
    grad_kernel = np.empty_like(kernel)
    for i in range(width):
        window = slice(i * dilation, i * dilation + t_out)
        grad_kernel[i] = x[window].T @ grad_out
        grad_x[window] += grad_out @ kernel[i].T
    return grad_x, grad_kernel, grad_out.sum(axis=0)


def affine_fwd(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    if x.shape[-1] != weight.shape[0]:
        raise ShapeMismatchError(f"affine input {x.shape} does not match weight {weight.shape}")
    return x @ weight + bias


def affine_bwd(x: np.ndarray, weight: np.ndarray, grad_out: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (grad_x, grad_weight, grad_bias) for a vector or a batch of rows."""
    if grad_out.shape[-1] != weight.shape[1]:
        raise ShapeMismatchError(f"affine upstream {grad_out.shape} does not match weight {weight.shape}")
    if x.ndim == 1:
        return weight @ grad_out, np.outer(x, grad_out), grad_out.copy()
    return grad_out @ weight.T, x.T @ grad_out, grad_out.sum(axis=0)


def relu_fwd(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_bwd(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    # Subgradient at 0 is 0
    if x.shape != grad_out.shape:
        raise ShapeMismatchError(f"relu upstream {grad_out.shape} does not match input {x.shape}")
    return np.where(x > 0.0, grad_out, 0.0)


def stats_pool_fwd(x: np.ndarray, variance_floor: float = VARIANCE_FLOOR) -> np.ndarray:
    """Per-channel mean concatenated with sqrt(population variance + floor)."""
    if x.ndim != 2 or x.shape[0] < 1:
        raise InputTooShortError("statistics pooling input (frames)", 1, 0 if x.ndim != 2 else x.shape[0])
    mean = x.mean(axis=0)
    variance = ((x - mean) ** 2).mean(axis=0)
    return np.concatenate([mean, np.sqrt(variance + variance_floor)])


def stats_pool_bwd(x: np.ndarray, grad_out: np.ndarray, variance_floor: float = VARIANCE_FLOOR) -> np.ndarray:
    n_frames, channels = x.shape
    if grad_out.shape != (2 * channels,):
        raise ShapeMismatchError(f"pooling upstream {grad_out.shape} does not match {2 * channels} statistics")
    centered = x - x.mean(axis=0)
    std = np.sqrt((centered ** 2).mean(axis=0) + variance_floor)
    grad_mean, grad_std = grad_out[:channels], grad_out[channels:]
    # The mean's contribution to the variance gradient vanishes since sum(centered) = 0
    return (grad_mean + grad_std / std * centered) / n_frames


def softmax(scores: np.ndarray) -> np.ndarray:
    shifted = np.exp(scores - np.max(scores))
    return shifted / shifted.sum()


def score_probs_fwd(embedding: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """
    Probabilities over K enrolled speakers from an embedding.

    The head is affine scores followed by softmax, i.e. the posterior of a
    shared-covariance Gaussian classifier (see gaussian_head).
    """
    if weight.shape[1] < 2:
        raise ShapeMismatchError(f"scoring head needs at least 2 classes, got {weight.shape[1]}")
    return softmax(affine_fwd(embedding, weight, bias))


def softmax_bwd(probs: np.ndarray, grad_probs: np.ndarray) -> np.ndarray:
    """Gradient with respect to the scores given the gradient w.r.t. probabilities."""
    return probs * (grad_probs - np.dot(grad_probs, probs))


def score_probs_bwd(
    embedding: np.ndarray,
    weight: np.ndarray,
    bias: np.ndarray,
    grad_probs: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (grad_embedding, grad_weight, grad_bias)."""
    probs = score_probs_fwd(embedding, weight, bias)
    return affine_bwd(embedding, weight, softmax_bwd(probs, grad_probs))


def softmax_cross_entropy(scores: np.ndarray, label: int) -> tuple[float, np.ndarray]:
    """Cross-entropy of softmax(scores) against ``label``; returns (loss, grad_scores)."""
    shifted = scores - np.max(scores)
    log_norm = np.log(np.exp(shifted).sum())
    grad = np.exp(shifted - log_norm)
    loss = float(log_norm - shifted[label])
    grad[label] -= 1.0
    return loss, grad


def gaussian_head(
    means: np.ndarray,
    shared_cov: np.ndarray,
    priors: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """
    Affine scoring head of a shared-covariance Gaussian classifier.

    Args:
        means: Class means, shape (K, E)
        shared_cov: Within-class covariance, shape (E, E)
        priors: Class priors, uniform when omitted

    Returns:
        (weight of shape (E, K), bias of shape (K,))
    """
    n_classes = means.shape[0]
    if n_classes < 2:
        raise ShapeMismatchError(f"scoring head needs at least 2 classes, got {n_classes}")
    if priors is None:
        priors = np.full(n_classes, 1.0 / n_classes)
    precision_means = np.linalg.solve(shared_cov, means.T)
    bias = -0.5 * np.einsum("ek,ke->k", precision_means, means) + np.log(priors)
    return precision_means, bias
