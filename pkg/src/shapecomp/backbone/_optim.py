"""Adam on plain parameter dicts, updated in place."""

from __future__ import annotations

import numpy as np

__all__ = ["Adam"]


class Adam:
    """Bias-corrected Adam. Moment buffers match each parameter's dtype."""

    def __init__(self, params: dict[str, np.ndarray], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if not params:
            raise ValueError("params must be a non-empty dict")
        self.params = params
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self._m = {k: np.zeros_like(v) for k, v in params.items()}
        self._v = {k: np.zeros_like(v) for k, v in params.items()}
        self._t = 0

    def step(self, grads: dict[str, np.ndarray]) -> None:
        if set(grads) != set(self.params):
            raise ValueError("gradient keys do not match parameter keys")
        for k, g in grads.items():
            if g.shape != self.params[k].shape:
                raise ValueError(f"{k}: gradient shape {g.shape} != parameter shape "
                                 f"{self.params[k].shape}")
            if not np.all(np.isfinite(g)):
                raise ValueError(f"{k}: non-finite gradient")
        self._t += 1
        c1 = 1.0 - self.beta1 ** self._t
        c2 = 1.0 - self.beta2 ** self._t
        for k, g in grads.items():
            m = self._m[k]
            v = self._v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            self.params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
