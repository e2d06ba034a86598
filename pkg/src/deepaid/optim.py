"""Adam optimizer over raw numpy arrays.

Used both for model training (on graph parameters) and inside the
interpreters (on the reparameterized search variable). One instance per
variable; state never shared across calls.
"""

from __future__ import annotations

import numpy as np


class Adam:
    def __init__(self, shape, lr: float = 0.5, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.m = np.zeros(shape, dtype=np.float64)
        self.v = np.zeros(shape, dtype=np.float64)
        self.t = 0

    def step(self, x: np.ndarray, grad: np.ndarray) -> np.ndarray:
        """Return the updated variable (the input array is not mutated)."""
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        mhat = self.m / (1.0 - self.beta1 ** self.t)
        vhat = self.v / (1.0 - self.beta2 ** self.t)
        return x - self.lr * mhat / (np.sqrt(vhat) + self.eps)


class AdamSet:
    """Adam over a named family of arrays (model parameter dicts)."""

    def __init__(self, shapes: dict, lr: float = 1e-3, **kw):
        self._opts = {name: Adam(shape, lr=lr, **kw) for name, shape in shapes.items()}

    def step(self, values: dict, grads: dict) -> dict:
        return {name: self._opts[name].step(values[name], grads[name])
                for name in values}
