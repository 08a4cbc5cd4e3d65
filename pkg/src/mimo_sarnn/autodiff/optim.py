"""Adam and global-norm gradient clipping."""

from __future__ import annotations

import numpy as np

from .engine import Parameter


def global_norm(grads) -> float:
    return float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads if g is not None)))


def clip_global_norm(grads, max_norm: float) -> tuple[list, float]:
    """Rescale ``grads`` so their concatenated L2 norm is at most ``max_norm``.

    Returns the (possibly scaled) gradients and the norm before clipping.
    """
    norm = global_norm(grads)
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        return [None if g is None else g * scale for g in grads], norm
    return list(grads), norm


class Adam:
    """Adam with bias correction; state is keyed by parameter position."""

    def __init__(self, params, lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8,
                 clip_norm: float | None = None):
        self.params: list[Parameter] = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.clip_norm = clip_norm
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> float:
        """Apply one update from the parameters' ``.grad``; returns the pre-clip norm."""
        grads = [p.grad for p in self.params]
        if self.clip_norm is not None:
            grads, norm = clip_global_norm(grads, self.clip_norm)
        else:
            norm = global_norm(grads)
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for i, (p, g) in enumerate(zip(self.params, grads)):
            if g is None:
                continue
            m, v = self.m[i], self.v[i]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            if self.lr == 0:
                continue
            update = self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data = p.data - update.astype(p.data.dtype)
        return norm

    def state_dict(self) -> dict:
        return {"step": self.step_count, "lr": self.lr, "m": self.m, "v": self.v}
