"""AdamW with decoupled weight decay and bias-corrected moments."""
from __future__ import annotations

import numpy as np

from .errors import OptimizerError


def adamw_step(theta: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray, step: int, lr: float,
               beta1: float = 0.9, beta2: float = 0.999, weight_decay: float = 1e-4, eps: float = 1e-8) -> None:
    """Update ``theta``, ``m`` and ``v`` in place for optimizer step number ``step`` (1-based)."""
    theta *= 1.0 - lr * weight_decay
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**step)
    v_hat = v / (1.0 - beta2**step)
    theta -= lr * m_hat / (np.sqrt(v_hat) + eps)


class AdamW:
    def __init__(self, named_params, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999,
                 weight_decay: float = 1e-4, eps: float = 1e-8):
        self.params = list(named_params)
        self.lr, self.beta1, self.beta2 = lr, beta1, beta2
        self.weight_decay, self.eps = weight_decay, eps
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params}

    @classmethod
    def from_config(cls, named_params, cfg) -> "AdamW":
        return cls(named_params, cfg.lr, cfg.beta1, cfg.beta2, cfg.weight_decay, cfg.eps)

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.zero_grad()

    def step(self) -> None:
        for name, p in self.params:
            if not np.all(np.isfinite(p.grad)):
                raise OptimizerError(f"non-finite gradient in parameter {name!r}; step aborted")
        self.step_count += 1
        for name, p in self.params:
            adamw_step(p.data, p.grad, self.m[name], self.v[name], self.step_count, self.lr,
                       self.beta1, self.beta2, self.weight_decay, self.eps)

    def state(self) -> dict:
        return {"step": self.step_count, "m": self.m, "v": self.v}

    def load_state(self, step: int, m: dict, v: dict) -> None:
        self.step_count = int(step)
        for name, p in self.params:
            self.m[name] = np.asarray(m[name], dtype=p.dtype).reshape(p.shape).copy()
            self.v[name] = np.asarray(v[name], dtype=p.dtype).reshape(p.shape).copy()
