import numpy as np
import pytest

from netcore import layers
from netcore.gradcheck import adjoint_check, gradcheck
from netcore.optim import OptimizerState, Parameter, adam_step
from utils.errors import InputTooShortError, ShapeMismatchError


def test_conv_output_length(rng):
    x = rng.normal(size=(20, 4))
    kernel = rng.normal(size=(3, 4, 5))
    assert layers.conv1d_dilated_fwd(x, kernel, dilation=2).shape == (16, 5)


def test_conv_identity_kernel_is_a_shift(rng):
    x = rng.normal(size=(10, 3))
    kernel = np.zeros((3, 3, 3))
    kernel[2] = np.eye(3)
    np.testing.assert_allclose(layers.conv1d_dilated_fwd(x, kernel, dilation=2), x[4:])


def test_conv_too_short(rng):
    with pytest.raises(InputTooShortError):
        layers.conv1d_dilated_fwd(rng.normal(size=(4, 2)), rng.normal(size=(3, 2, 2)), dilation=2)


def test_conv_gradients(rng):
    x = rng.normal(size=(15, 3))
    upstream = rng.normal(size=(11, 4))

    def f(blocks):
        out = layers.conv1d_dilated_fwd(blocks["x"], blocks["kernel"], 2, blocks["bias"])
        gx, gk, gb = layers.conv1d_dilated_bwd(blocks["x"], blocks["kernel"], 2, upstream)
        return float(np.sum(upstream * out)), {"x": gx, "kernel": gk, "bias": gb}

    report = gradcheck(f, {"x": x, "kernel": rng.normal(size=(3, 3, 4)), "bias": rng.normal(size=4)})
    assert report.passed, report.summary()


def test_affine_gradients_vector_and_batch(rng):
    weight, bias = rng.normal(size=(5, 3)), rng.normal(size=3)
    for x in (rng.normal(size=5), rng.normal(size=(7, 5))):
        upstream = rng.normal(size=layers.affine_fwd(x, weight, bias).shape)

        def f(blocks):
            out = layers.affine_fwd(blocks["x"], blocks["w"], blocks["b"])
            gx, gw, gb = layers.affine_bwd(blocks["x"], blocks["w"], upstream)
            return float(np.sum(upstream * out)), {"x": gx, "w": gw, "b": gb}

        assert gradcheck(f, {"x": x, "w": weight, "b": bias}).passed


def test_relu_subgradient_at_zero():
    grad = layers.relu_bwd(np.array([-1.0, 0.0, 2.0]), np.ones(3))
    assert grad.tolist() == [0.0, 0.0, 1.0]


def test_stats_pool_single_frame_uses_the_floor():
    pooled = layers.stats_pool_fwd(np.array([[1.0, -2.0]]))
    np.testing.assert_allclose(pooled, [1.0, -2.0, 1e-5, 1e-5])
    grad = layers.stats_pool_bwd(np.array([[1.0, -2.0]]), np.ones(4))
    assert np.all(np.isfinite(grad))


def test_stats_pool_constant_input_is_finite():
    x = np.full((30, 3), 0.7)
    grad = layers.stats_pool_bwd(x, np.ones(6))
    assert np.all(np.isfinite(layers.stats_pool_fwd(x))) and np.all(np.isfinite(grad))


def test_stats_pool_gradient(rng):
    upstream = rng.normal(size=8)

    def f(x):
        return float(upstream @ layers.stats_pool_fwd(x)), layers.stats_pool_bwd(x, upstream)

    assert gradcheck(f, rng.normal(size=(12, 4))).passed


def test_probabilities_sum_to_one(rng):
    for _ in range(20):
        probs = layers.score_probs_fwd(rng.normal(size=6), rng.normal(size=(6, 5)), rng.normal(size=5))
        assert probs.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(probs >= 0)


def test_scoring_head_needs_two_classes(rng):
    with pytest.raises(ShapeMismatchError):
        layers.score_probs_fwd(rng.normal(size=4), rng.normal(size=(4, 1)), np.zeros(1))


def test_score_probs_gradient(rng):
    upstream = rng.normal(size=4)

    def f(blocks):
        probs = layers.score_probs_fwd(blocks["e"], blocks["w"], blocks["b"])
        ge, gw, gb = layers.score_probs_bwd(blocks["e"], blocks["w"], blocks["b"], upstream)
        return float(upstream @ probs), {"e": ge, "w": gw, "b": gb}

    report = gradcheck(f, {"e": rng.normal(size=6), "w": rng.normal(size=(6, 4)), "b": rng.normal(size=4)})
    assert report.passed, report.summary()


def test_cross_entropy_gradient(rng):
    def f(scores):
        return layers.softmax_cross_entropy(scores, 2)

    assert gradcheck(f, rng.normal(size=5)).passed


def test_gaussian_head_matches_posterior(rng):
    means = rng.normal(size=(3, 4))
    a = rng.normal(size=(4, 4))
    cov = a @ a.T + 4 * np.eye(4)
    priors = np.array([0.2, 0.3, 0.5])
    weight, bias = layers.gaussian_head(means, cov, priors)
    x = rng.normal(size=4)

    precision = np.linalg.inv(cov)
    log_joint = np.array([-0.5 * (x - m) @ precision @ (x - m) for m in means]) + np.log(priors)
    expected = np.exp(log_joint - log_joint.max())
    expected /= expected.sum()
    np.testing.assert_allclose(layers.score_probs_fwd(x, weight, bias), expected, rtol=1e-10)


def test_adam_minimises_a_quadratic():
    param = Parameter("w", np.array([3.0, -2.0]))
    state = OptimizerState(learning_rate=0.1)
    for _ in range(1000):
        param.grad = 2.0 * param.values
        adam_step([param], state)
    assert np.all(np.abs(param.values) < 0.1)


def test_adam_first_step_moves_by_learning_rate():
    param = Parameter("w", np.array([1.0, 1.0]))
    param.grad = np.array([0.5, -3.0])
    adam_step([param], OptimizerState(learning_rate=0.01))
    np.testing.assert_allclose(param.values, [0.99, 1.01], atol=1e-8)


def test_gradcheck_flags_a_wrong_gradient(rng):
    def f(x):
        return float(np.sum(x ** 2)), 3.0 * x

    assert not gradcheck(f, rng.normal(size=5)).passed


def test_adjoint_check_detects_a_non_adjoint(rng):
    matrix = rng.normal(size=(4, 6))
    assert adjoint_check(lambda v: matrix @ v, lambda u: matrix.T @ u, (6,), (4,)) < 1e-12
    assert adjoint_check(lambda v: matrix @ v, lambda u: 2 * matrix.T @ u, (6,), (4,)) > 0.1
