"""Adam optimizer with bias-corrected moment estimates."""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError, DimensionError
from .tensor import Parameter

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def adam_step(value: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray,
              step: int, lr: float,
              beta1: float = ADAM_BETA1, beta2: float = ADAM_BETA2,
              eps: float = ADAM_EPS) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One Adam update. `step` is 1-based; returns (value, m, v)."""
    if step < 1:
        raise ConfigError("adam step count is 1-based")
    if not (value.shape == grad.shape == m.shape == v.shape):
        raise DimensionError("adam_step requires matching shapes")
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** step)
    v_hat = v / (1.0 - beta2 ** step)
    value = value - lr * m_hat / (np.sqrt(v_hat) + eps)
    return value, m, v


class Adam:
    """Adam over a fixed list of parameters; state is per-parameter (m, v)."""

    def __init__(self, params: list[Parameter],
                 beta1: float = ADAM_BETA1, beta2: float = ADAM_BETA2,
                 eps: float = ADAM_EPS):
        names = [p.name for p in params]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate parameter names passed to Adam")
        self.params = params
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {p.name: np.zeros_like(p.data) for p in params}
        self.v = {p.name: np.zeros_like(p.data) for p in params}

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self, lr: float, skip: frozenset[str] = frozenset()) -> None:
        """Apply one update with the given learning rate.

        Parameters whose names are in `skip` keep their values and state
        (used to freeze submodules).
        """
        self.step_count += 1
        for p in self.params:
            if p.name in skip:
                continue
            grad = p.grad if p.grad is not None else np.zeros_like(p.data)
            p.data, self.m[p.name], self.v[p.name] = adam_step(
                p.data, grad, self.m[p.name], self.v[p.name],
                self.step_count, lr, self.beta1, self.beta2, self.eps,
            )

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Flat view of optimizer state for checkpointing."""
        out: dict[str, np.ndarray] = {}
        for name in self.m:
            out[f"adam.m.{name}"] = self.m[name]
            out[f"adam.v.{name}"] = self.v[name]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], step_count: int) -> None:
        for name in self.m:
            self.m[name] = np.array(arrays[f"adam.m.{name}"], dtype=np.float64)
            self.v[name] = np.array(arrays[f"adam.v.{name}"], dtype=np.float64)
        self.step_count = int(step_count)
