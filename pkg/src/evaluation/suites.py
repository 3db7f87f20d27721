"""
Self-contained property and gradient check suites run by ``evaluate --suite``.

Every check builds its own small seeded inputs, writing to a temporary
directory when it needs files, so the suites need no run artifacts.
"""

import logging
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from attack.perturbation import (
    UniversalPerturbation,
    apply_perturbation,
    clip_mask,
    clip_samples,
    cw_loss,
    cw_loss_grad,
    hinge_score_grad,
    tile_adjoint,
    tile_samples,
)
from audio.corpus import SynthConfig, synth_corpus
from audio.wav_io import Waveform
from evaluation.metrics import noise_level_db
from features.mfcc import MfccConfig, frame_signal, frame_signal_adjoint, mfcc_backward_from_cache, mfcc_forward_with_cache
from netcore import layers
from netcore.gradcheck import adjoint_check, gradcheck
from room.convolution import convolve_backward_samples, convolve_samples
from room.rir import RoomSpec, image_source_rir, image_sources
from xvector.checkpoint import load_checkpoint, save_checkpoint
from xvector.model import ArchitectureConfig, SpeakerModel, label_from_probs
from xvector.trainer import TrainConfig, train

logger = logging.getLogger(__name__)

ADJOINT_TOLERANCE = 1e-9
GRADIENT_TOLERANCE = 1e-4


@dataclass
class SuiteCheck:
    name: str
    passed: bool
    detail: str


def _run(checks: list[tuple[str, Callable[[], tuple[bool, str]]]]) -> list[SuiteCheck]:
    results = []
    for name, check in checks:
        try:
            passed, detail = check()
        except Exception as e:
            passed, detail = False, f"{type(e).__name__}: {e}"
        results.append(SuiteCheck(name, bool(passed), detail))
        logger.info(f"{'✓' if passed else '✗'} {name}: {detail}")
    return results


def _small_mfcc() -> MfccConfig:
    return MfccConfig(sample_rate=8000, n_coeffs=8, n_mels=12, fft_size=256)


def _small_model(seed: int = 0) -> SpeakerModel:
    model = SpeakerModel.initialize(
        _small_mfcc(),
        ArchitectureConfig(tdnn_kernels=(3, 3), tdnn_dilations=(1, 2), channels=8, embedding_dim=6, seed=seed),
        ["a", "b", "c"],
    )
    rng = np.random.default_rng(seed + 1)
    model.params["head.weight"].values = rng.normal(0.0, 0.5, size=model.params["head.weight"].values.shape)
    model.params["head.bias"].values = rng.normal(0.0, 0.1, size=model.n_classes)
    return model


# Property checks

def _check_clip_bound() -> tuple[bool, str]:
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(50):
        eps = rng.uniform(1e-4, 0.5)
        delta = rng.normal(0.0, 1.0, size=int(rng.integers(1, 200)))
        worst = max(worst, float(np.max(np.abs(clip_samples(delta, eps)))) - eps)
    return worst <= 0.0, f"max excess over epsilon {worst:.2e}"


def _check_tile_periodic() -> tuple[bool, str]:
    rng = np.random.default_rng(1)
    unit = rng.normal(size=37)
    tiled = tile_samples(unit, 1000)
    ok = all(tiled[i] == unit[i % 37] for i in range(1000))
    return ok, "output[i] == unit[i mod len(unit)]"


def _check_tile_adjoint() -> tuple[bool, str]:
    error = adjoint_check(lambda v: tile_samples(v, 250), lambda u: tile_adjoint(u, 40), (40,), (250,))
    return error < ADJOINT_TOLERANCE, f"relative error {error:.2e}"


def _check_clip_mask() -> tuple[bool, str]:
    delta = np.array([-0.2, -0.1, 0.0, 0.1, 0.2])
    mask = clip_mask(delta, 0.1)
    return bool(np.array_equal(mask, [False, True, True, True, False])), f"mask {mask.astype(int).tolist()}"


def _check_convolution_adjoint() -> tuple[bool, str]:
    taps = np.random.default_rng(2).normal(size=120)
    worst = max(
        adjoint_check(
            lambda v: convolve_samples(v, taps, method),
            lambda u: convolve_backward_samples(u, taps, method),
            (300,), (300,), seed=3,
        )
        for method in ("direct", "fft")
    )
    return worst < ADJOINT_TOLERANCE, f"relative error {worst:.2e}"


def _check_identity_channel() -> tuple[bool, str]:
    x = np.random.default_rng(4).normal(size=500)
    out = convolve_samples(x, np.array([1.0]))
    return bool(np.array_equal(out, x)), "unit impulse leaves the waveform unchanged"


def _check_frame_adjoint() -> tuple[bool, str]:
    cfg = _small_mfcc()
    n = cfg.min_samples(6) + 17
    shape = frame_signal(np.zeros(n), cfg).shape
    error = adjoint_check(lambda v: frame_signal(v, cfg), lambda u: frame_signal_adjoint(u, n, cfg), (n,), shape)
    return error < ADJOINT_TOLERANCE, f"relative error {error:.2e}"


def _check_hinge_sign() -> tuple[bool, str]:
    rng = np.random.default_rng(5)
    mismatches = 0
    for _ in range(200):
        probs = layers.softmax(rng.normal(size=6))
        target = int(rng.integers(6))
        mismatches += (cw_loss(probs, target) <= 0) != (label_from_probs(probs) == target)
    return mismatches == 0, f"{mismatches} sign mismatches in 200 draws"


def _check_noise_scale() -> tuple[bool, str]:
    rng = np.random.default_rng(6)
    delta, x = rng.normal(size=100), rng.normal(size=100)
    base = noise_level_db(delta, x)
    drift = max(abs(noise_level_db(c * delta, c * x) - base) for c in (0.01, 3.0, 250.0))
    return drift < 1e-9, f"max drift {drift:.2e} dB"


def _check_direct_path() -> tuple[bool, str]:
    distance = 343.0 * 35 / 16000
    spec = RoomSpec(source_pos=(1.0, 2.0, 1.5), mic_pos=(1.0 + distance, 2.0, 1.5), max_order=0)
    rir = image_source_rir(spec)
    peak_at = int(np.argmax(np.abs(rir.taps)))
    return peak_at == 35 and len(image_sources(spec)) == 1, f"direct path at tap {peak_at}"


def _check_decay_with_order() -> tuple[bool, str]:
    spec = RoomSpec(source_pos=(1.2, 1.7, 1.1), mic_pos=(3.4, 2.9, 1.6), max_order=4)
    images = image_sources(spec)
    orders = sorted({image.order for image in images})
    strongest = [max(i.amplitude for i in images if i.order == k) for k in orders]
    direct = strongest[0]
    ok = all(s <= direct for s in strongest[1:])
    return ok, f"{len(images)} images, orders {orders[0]}..{orders[-1]}"


def _check_loss_floor() -> tuple[bool, str]:
    rng = np.random.default_rng(7)
    below, floored, nonzero_at_floor = 0, 0, 0
    for _ in range(300):
        probs = layers.softmax(rng.normal(0.0, 3.0, size=5))
        target = int(rng.integers(5))
        kappa = float(rng.uniform(0.0, 0.5))
        loss, grad = cw_loss_grad(probs, target, kappa)
        below += loss < -kappa
        if loss == -kappa:
            floored += 1
            nonzero_at_floor += bool(np.any(grad))
    ok = below == 0 and floored > 0 and nonzero_at_floor == 0
    return ok, f"{below} values below -kappa, {floored} at the floor, {nonzero_at_floor} with a gradient there"


def _check_convolution_linearity() -> tuple[bool, str]:
    rng = np.random.default_rng(8)
    taps = rng.normal(size=150)
    x, y = rng.normal(size=400), rng.normal(size=400)
    a, b = 0.7, -2.3
    worst = 0.0
    for method in ("direct", "fft"):
        lhs = convolve_samples(a * x + b * y, taps, method)
        rhs = a * convolve_samples(x, taps, method) + b * convolve_samples(y, taps, method)
        worst = max(worst, float(np.max(np.abs(lhs - rhs)) / np.max(np.abs(rhs))))
    return worst < 1e-12, f"relative error {worst:.2e}"


def _check_convolution_shift() -> tuple[bool, str]:
    rng = np.random.default_rng(9)
    taps = rng.normal(size=60)
    x = rng.normal(size=300)
    shift = 45
    worst = 0.0
    for method in ("direct", "fft"):
        base = convolve_samples(x, taps, method)
        shifted = convolve_samples(np.concatenate([np.zeros(shift), x]), taps, method)
        worst = max(worst, float(np.max(np.abs(shifted[shift:] - base))))
    return worst < 1e-12, f"max deviation {worst:.2e} after a {shift}-sample delay"


def _check_apply_bound() -> tuple[bool, str]:
    rng = np.random.default_rng(10)
    worst = 0.0
    for _ in range(30):
        eps = float(rng.uniform(1e-3, 0.2))
        unit = Waveform(rng.normal(0.0, 1.0, size=int(rng.integers(1, 80))), 8000)
        x = Waveform(rng.uniform(-0.9, 0.9, size=int(rng.integers(1, 500))), 8000)
        perturbed = apply_perturbation(x, UniversalPerturbation(unit, eps, 0))
        worst = max(worst, float(np.max(np.abs(perturbed.samples - x.samples))) - eps)
    return worst <= 1e-12, f"max excess over epsilon {worst:.2e}"


def _check_checkpoint_round_trip() -> tuple[bool, str]:
    model = _small_model(seed=5)
    x = np.random.default_rng(11).normal(0.0, 0.3, size=model.min_samples + 30)
    with tempfile.TemporaryDirectory() as tmp:
        first, second = Path(tmp) / "a.ckpt", Path(tmp) / "b.ckpt"
        save_checkpoint(model, first)
        restored = load_checkpoint(first)
        save_checkpoint(restored, second)
        same_bytes = first.read_bytes() == second.read_bytes()
    same_probs = np.array_equal(model.forward_waveform(x)[0], restored.forward_waveform(x)[0])
    return same_bytes and same_probs, f"bytes identical: {same_bytes}, probabilities identical: {same_probs}"


def _check_training_determinism() -> tuple[bool, str]:
    synth = SynthConfig(
        n_speakers=3, utterances_per_speaker=4, min_duration_s=0.3, max_duration_s=0.4, sample_rate=8000, seed=12
    )
    hyper = TrainConfig(epochs=2, learning_rate=0.01, seed=13)
    with tempfile.TemporaryDirectory() as tmp:
        corpus = synth_corpus(synth, Path(tmp) / "corpus")
        blobs = []
        for run in ("a", "b"):
            model = _small_model(seed=6)
            train(model, corpus, hyper)
            save_checkpoint(model, Path(tmp) / f"{run}.ckpt")
            blobs.append((Path(tmp) / f"{run}.ckpt").read_bytes())
    return blobs[0] == blobs[1], "two seeded runs give byte-identical checkpoints"


def run_property_suite() -> list[SuiteCheck]:
    """Structural invariants of the perturbation, channel, front end and metrics."""
    return _run([
        ("clip_eps bounds every sample", _check_clip_bound),
        ("build_delta is periodic", _check_tile_periodic),
        ("tile adjoint", _check_tile_adjoint),
        ("clip mask is inclusive", _check_clip_mask),
        ("convolution adjoint", _check_convolution_adjoint),
        ("identity RIR", _check_identity_channel),
        ("framing adjoint", _check_frame_adjoint),
        ("hinge loss sign matches attack success", _check_hinge_sign),
        ("noise level scale invariance", _check_noise_scale),
        ("direct path delay", _check_direct_path),
        ("reflections never exceed the direct path", _check_decay_with_order),
        ("hinge loss never drops below -kappa", _check_loss_floor),
        ("convolution is linear", _check_convolution_linearity),
        ("convolution is shift invariant", _check_convolution_shift),
        ("applied perturbation stays within epsilon", _check_apply_bound),
        ("checkpoint round trip is bit exact", _check_checkpoint_round_trip),
        ("seeded training is deterministic", _check_training_determinism),
    ])


# Gradient checks

def _check_mfcc_gradient() -> tuple[bool, str]:
    cfg = _small_mfcc()
    rng = np.random.default_rng(10)
    x = rng.normal(0.0, 0.3, size=cfg.min_samples(5) + 11)
    upstream = rng.normal(size=mfcc_forward_with_cache(x, cfg)[0].shape)

    def f(samples):
        feats, cache = mfcc_forward_with_cache(samples, cfg)
        return float(np.sum(upstream * feats)), mfcc_backward_from_cache(upstream, cache, cfg)

    report = gradcheck(f, x, tolerance=GRADIENT_TOLERANCE)
    return report.passed, report.summary()


def _check_parameter_gradients() -> tuple[bool, str]:
    model = _small_model()
    rng = np.random.default_rng(11)
    feats = rng.normal(size=(model.architecture.receptive_field + 6, model.mfcc_config.n_coeffs))

    def f(blocks):
        for name, values in blocks.items():
            model.params[name].values = values
        model.zero_grad()
        scores, cache = model.forward(feats)
        loss, grad_scores = layers.softmax_cross_entropy(scores, 1)
        model.backward(cache, grad_scores)
        return loss, {name: model.params[name].grad.copy() for name in blocks}

    point = {name: p.values.copy() for name, p in model.params.items()}
    report = gradcheck(f, point, tolerance=GRADIENT_TOLERANCE)
    return report.passed, report.summary()


def _check_waveform_gradient() -> tuple[bool, str]:
    model = _small_model(seed=3)
    rng = np.random.default_rng(12)
    x = rng.normal(0.0, 0.3, size=model.min_samples + 40)
    weights = rng.normal(size=model.n_classes)

    def f(samples):
        probs, cache = model.forward_waveform(samples)
        return float(weights @ probs), model.backward_waveform(cache, weights)

    report = gradcheck(f, x, tolerance=GRADIENT_TOLERANCE)
    return report.passed, report.summary()


def _check_channel_gradient() -> tuple[bool, str]:
    model = _small_model(seed=4)
    rng = np.random.default_rng(13)
    x = rng.normal(0.0, 0.3, size=model.min_samples + 40)
    taps = np.exp(-np.arange(90) / 15.0) * rng.normal(size=90)
    weights = rng.normal(size=model.n_classes)

    def f(samples):
        probs, cache = model.forward_waveform(convolve_samples(samples, taps))
        return float(weights @ probs), convolve_backward_samples(model.backward_waveform(cache, weights), taps)

    report = gradcheck(f, x, tolerance=GRADIENT_TOLERANCE)
    return report.passed, report.summary()


def _check_conv_adjoint() -> tuple[bool, str]:
    rng = np.random.default_rng(14)
    kernel = rng.normal(size=(3, 4, 5))
    x = rng.normal(size=(20, 4))
    out_shape = (20 - 2 * 2, 5)
    wrt_input = adjoint_check(
        lambda v: layers.conv1d_dilated_fwd(v, kernel, 2),
        lambda u: layers.conv1d_dilated_bwd(x, kernel, 2, u)[0],
        x.shape, out_shape, seed=15,
    )
    wrt_kernel = adjoint_check(
        lambda k: layers.conv1d_dilated_fwd(x, k, 2),
        lambda u: layers.conv1d_dilated_bwd(x, kernel, 2, u)[1],
        kernel.shape, out_shape, seed=16,
    )
    worst = max(wrt_input, wrt_kernel)
    return worst < ADJOINT_TOLERANCE, f"relative error input {wrt_input:.2e}, kernel {wrt_kernel:.2e}"


def _check_affine_adjoint() -> tuple[bool, str]:
    rng = np.random.default_rng(17)
    weight = rng.normal(size=(6, 4))
    x = rng.normal(size=(9, 6))
    zero = np.zeros(4)
    wrt_input = adjoint_check(
        lambda v: layers.affine_fwd(v, weight, zero),
        lambda u: layers.affine_bwd(x, weight, u)[0],
        x.shape, (9, 4), seed=18,
    )
    wrt_weight = adjoint_check(
        lambda w: layers.affine_fwd(x, w, zero),
        lambda u: layers.affine_bwd(x, weight, u)[1],
        weight.shape, (9, 4), seed=19,
    )
    worst = max(wrt_input, wrt_weight)
    return worst < ADJOINT_TOLERANCE, f"relative error input {wrt_input:.2e}, weight {wrt_weight:.2e}"


def _vjp_check(forward: Callable, backward: Callable, point: np.ndarray, seed: int) -> tuple[bool, str]:
    """gradcheck of <u, forward(x)> against backward(x, u) for a fixed random u."""
    u = np.random.default_rng(seed).normal(size=np.shape(forward(point)))

    def f(x):
        return float(np.sum(u * forward(x))), backward(x, u)

    report = gradcheck(f, point, tolerance=GRADIENT_TOLERANCE)
    return report.passed, report.summary()


def _check_relu_vjp() -> tuple[bool, str]:
    rng = np.random.default_rng(20)
    # Keep every entry away from the kink so the mask is fixed under the finite-difference step
    x = rng.choice([-1.0, 1.0], size=(12, 5)) * rng.uniform(0.1, 1.0, size=(12, 5))
    return _vjp_check(layers.relu_fwd, layers.relu_bwd, x, seed=21)


def _check_stats_pool_vjp() -> tuple[bool, str]:
    x = np.random.default_rng(22).normal(size=(15, 4))
    return _vjp_check(layers.stats_pool_fwd, layers.stats_pool_bwd, x, seed=23)


def _check_scoring_vjp() -> tuple[bool, str]:
    rng = np.random.default_rng(24)
    point = {"embedding": rng.normal(size=6), "weight": rng.normal(0.0, 0.5, size=(6, 4)), "bias": rng.normal(size=4)}
    u = rng.normal(size=4)

    def f(blocks):
        probs = layers.score_probs_fwd(blocks["embedding"], blocks["weight"], blocks["bias"])
        grads = layers.score_probs_bwd(blocks["embedding"], blocks["weight"], blocks["bias"], u)
        return float(u @ probs), dict(zip(("embedding", "weight", "bias"), grads))

    report = gradcheck(f, point, tolerance=GRADIENT_TOLERANCE)
    return report.passed, report.summary()


def _attack_chain(log_margin: bool) -> tuple[bool, str]:
    """
    Gradient w.r.t. the trainable unit through tile, clip, victim addition,
    room channel, front end, network and the hinge margin, exactly as the
    universal trainer composes them.
    """
    model = _small_model(seed=7)
    rng = np.random.default_rng(25)
    eps = 0.05
    unit_len = 97
    x = rng.normal(0.0, 0.3, size=model.min_samples + 150)
    taps = np.exp(-np.arange(70) / 12.0) * rng.normal(size=70)
    unit = rng.uniform(-0.5 * eps, 0.5 * eps, size=unit_len)

    def probs_of(values):
        full = tile_samples(values, x.shape[0])
        return full, model.forward_waveform(convolve_samples(x + clip_samples(full, eps), taps))

    base_probs = probs_of(unit)[1][0]
    target = int(np.argmin(base_probs))
    masked = base_probs.copy()
    masked[target] = -np.inf
    rival = int(np.argmax(masked))

    def f(values):
        full, (probs, cache) = probs_of(values)
        if log_margin:
            value = float(np.log(probs[rival]) - np.log(probs[target]))
            _, grad_scores = hinge_score_grad(probs, target, 0.0, "log_probability")
            grad = model.backward_waveform_scores(cache, grad_scores)
        else:
            value, grad_probs = cw_loss_grad(probs, target, 0.0)
            grad = model.backward_waveform(cache, grad_probs)
        grad = convolve_backward_samples(grad, taps)
        return value, tile_adjoint(grad * clip_mask(full, eps), unit_len)

    report = gradcheck(f, unit, tolerance=GRADIENT_TOLERANCE)
    return report.passed, report.summary()


def _check_attack_chain_gradient() -> tuple[bool, str]:
    return _attack_chain(log_margin=False)


def _check_attack_chain_log_margin() -> tuple[bool, str]:
    return _attack_chain(log_margin=True)


def run_gradient_suite() -> list[SuiteCheck]:
    """Central-difference checks of every reverse-mode path the attack relies on."""
    return _run([
        ("MFCC front end", _check_mfcc_gradient),
        ("network parameters", _check_parameter_gradients),
        ("waveform to probabilities", _check_waveform_gradient),
        ("waveform through a room channel", _check_channel_gradient),
        ("dilated convolution adjoint", _check_conv_adjoint),
        ("affine adjoint", _check_affine_adjoint),
        ("ReLU vector-Jacobian product", _check_relu_vjp),
        ("statistics pooling vector-Jacobian product", _check_stats_pool_vjp),
        ("scoring head vector-Jacobian product", _check_scoring_vjp),
        ("attack chain w.r.t. the perturbation unit", _check_attack_chain_gradient),
        ("attack chain, log-probability margin", _check_attack_chain_log_margin),
    ])
