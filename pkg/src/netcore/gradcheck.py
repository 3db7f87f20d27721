"""
Finite-difference gradient checking.

gradcheck compares reverse-mode gradients with central differences along
random directions, one named block at a time. adjoint_check verifies
<u, A v> = <A^T u, v> for linear operators.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

logger = logging.getLogger(__name__)

ValueAndGrad = Callable[[dict[str, np.ndarray]], tuple[float, dict[str, np.ndarray]]]


@dataclass
class GradcheckReport:
    tolerance: float
    block_errors: dict[str, float] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.block_errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance

    def summary(self) -> str:
        blocks = ", ".join(f"{name}={error:.2e}" for name, error in self.block_errors.items())
        return f"{'PASS' if self.passed else 'FAIL'} (tol {self.tolerance:.0e}): {blocks}"


def gradcheck(
    f: ValueAndGrad,
    point: Mapping[str, np.ndarray] | np.ndarray,
    tolerance: float = 1e-4,
    step: float = 1e-6,
    n_directions: int = 3,
    seed: int = 0,
) -> GradcheckReport:
    """
    Check the gradient of a scalar function against central differences.

    Args:
        f: Maps named arrays to (value, gradients by the same names)
        point: Where to check; a bare array is treated as block "x"
        tolerance: Maximum accepted relative error
        step: Finite-difference step along a unit direction
        n_directions: Random directions per block
        seed: Seed for the directions

    Returns:
        Report with the maximum relative error per block
    """
    if isinstance(point, np.ndarray):
        array_f = f

        def f(blocks):
            value, grad = array_f(blocks["x"])
            return value, {"x": grad}

        point = {"x": point}

    point = {name: np.array(values, dtype=np.float64) for name, values in point.items()}
    rng = np.random.default_rng(seed)
    _, grads = f(point)
    report = GradcheckReport(tolerance)

    for name, base in point.items():
        grad = np.asarray(grads[name], dtype=np.float64)
        worst = 0.0
        for _ in range(n_directions):
            direction = rng.standard_normal(base.shape)
            direction /= np.linalg.norm(direction)
            analytic = float(np.sum(grad * direction))

            shifted = dict(point)
            shifted[name] = base + step * direction
            upper, _ = f(shifted)
            shifted[name] = base - step * direction
            lower, _ = f(shifted)
            numeric = (upper - lower) / (2.0 * step)

            # Floor the denominator by the gradient norm so a nearly orthogonal
            # direction does not inflate the relative error
            scale = max(abs(analytic), abs(numeric), 1e-3 * np.linalg.norm(grad), 1e-12)
            worst = max(worst, abs(analytic - numeric) / scale)
        report.block_errors[name] = worst

    logger.debug(f"gradcheck {report.summary()}")
    return report


def adjoint_check(
    forward: Callable[[np.ndarray], np.ndarray],
    adjoint: Callable[[np.ndarray], np.ndarray],
    input_shape: tuple[int, ...],
    output_shape: tuple[int, ...],
    seed: int = 0,
) -> float:
    """Relative error of <u, A v> against <A^T u, v> for random u, v."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(input_shape)
    u = rng.standard_normal(output_shape)
    lhs = float(np.sum(u * forward(v)))
    rhs = float(np.sum(adjoint(u) * v))
    return abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300)
