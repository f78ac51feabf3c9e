"""Decoupled-weight-decay adaptive optimizer with linear warmup.

The effective learning rate is base · min(1, step/warmup) and stays
constant after warmup. Frozen parameters are never touched; a non-finite
gradient aborts the whole step before any tensor is modified.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .model import Parameters


class GradientError(FloatingPointError):
    """A gradient contained NaN/Inf; the step was aborted."""


class AdamW:
    def __init__(
        self,
        params: Parameters,
        lr: float = 3e-4,
        warmup_steps: int = 100,
        weight_decay: float = 0.01,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        if lr <= 0 or warmup_steps < 0 or weight_decay < 0:
            raise ValueError("learning rate must be positive, warmup/decay non-negative")
        self.params = params
        self.lr = lr
        self.warmup_steps = warmup_steps
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def lr_at(self, step_index: int) -> float:
        if self.warmup_steps <= 0:
            return self.lr
        return self.lr * min(1.0, step_index / self.warmup_steps)

    def step(self) -> None:
        """Apply one update to every trainable parameter with a gradient."""
        live = [(n, t) for n, t in self.params.trainable() if t.grad is not None]
        for name, t in live:
            if not np.isfinite(t.grad).all():
                raise GradientError(f"non-finite gradient in {name}; step {self.step_count + 1} aborted")
        self.step_count += 1
        lr = self.lr_at(self.step_count)
        bc1 = 1.0 / (1.0 - self.beta1**self.step_count)
        bc2 = 1.0 / (1.0 - self.beta2**self.step_count)
        for name, t in live:
            m = self._m.get(name)
            if m is None:
                m = self._m[name] = np.zeros_like(t.data).reshape(-1)
                self._v[name] = np.zeros_like(t.data).reshape(-1)
            kernels.adamw_update(
                t.data.reshape(-1),
                t.grad.reshape(-1),
                m,
                self._v[name],
                lr,
                self.beta1,
                self.beta2,
                self.eps,
                self.weight_decay,
                bc1,
                bc2,
            )
