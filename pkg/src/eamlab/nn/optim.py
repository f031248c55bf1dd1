"""AdamW with decoupled weight decay over a flat parameter vector."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamW:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step_count: int = 0
    m: np.ndarray = field(default=None, repr=False)
    v: np.ndarray = field(default=None, repr=False)

    def step(self, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
        """Return updated parameters; moment buffers are updated in place."""
        params = np.asarray(params, dtype=float)
        grads = np.asarray(grads, dtype=float)
        if params.shape != grads.shape:
            raise ValueError(f"param/grad length mismatch {params.shape} vs {grads.shape}")
        if not np.all(np.isfinite(grads)):
            bad = np.flatnonzero(~np.isfinite(grads))
            raise FloatingPointError(
                f"non-finite gradient at step {self.step_count + 1} "
                f"({bad.size} entries, first index {bad[0]})"
            )
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.step_count += 1
        k = self.step_count
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grads
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grads * grads
        m_hat = self.m / (1.0 - self.beta1**k)
        v_hat = self.v / (1.0 - self.beta2**k)
        update = m_hat / (np.sqrt(v_hat) + self.eps) + self.weight_decay * params
        return params - self.lr * update
