"""
Parameters and the adaptive-moment (Adam) optimizer.
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Parameter:
    """Named trainable array with a same-shape gradient accumulator."""

    name: str
    values: np.ndarray
    grad: np.ndarray = field(default=None)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.grad is None:
            self.grad = np.zeros_like(self.values)

    def zero_grad(self) -> None:
        self.grad.fill(0.0)


@dataclass
class OptimizerState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: list[Parameter], state: OptimizerState) -> None:
    """Apply one bias-corrected Adam update using the populated gradients."""
    state.step += 1
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step
    for param in params:
        m = state.first_moment.setdefault(param.name, np.zeros_like(param.values))
        v = state.second_moment.setdefault(param.name, np.zeros_like(param.values))
        m *= state.beta1
        m += (1.0 - state.beta1) * param.grad
        v *= state.beta2
        v += (1.0 - state.beta2) * param.grad ** 2
        param.values -= state.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + state.epsilon)
