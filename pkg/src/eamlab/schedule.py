"""Linear base drift family, its bridge coefficients, and the legacy memoryless drift.

All quantities are closed forms in ``(C, t)``. With ``Q(t) = 2Ct^2 - 2t + 1``:

    D(t)   = (2Ct^2 - 1) / (t Q)
    Phi(t) = exp(int_t^1 D) = (2C - 1) t / Q
    I(t)   = 1/2 - t + C t^2 = Q / 2
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

T_MIN = 1e-2
T_MAX = 1.0 - 1e-2


def _check_open(t, name: str = "t") -> None:
    t = np.asarray(t)
    if np.any(t <= 0.0) or np.any(t >= 1.0):
        raise ValueError(f"{name} must lie in the open interval (0, 1)")


def sigma(t):
    """Diffusion coefficient sqrt(2(1-t)/t); defined on (0, 1]."""
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0.0) or np.any(t > 1.0):
        raise ValueError("sigma(t) requires 0 < t <= 1")
    out = np.sqrt(2.0 * (1.0 - t) / t)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class DriftSchedule:
    """One member of the admissible linear drift family, indexed by ``C > 1/2``."""

    C: float

    def __post_init__(self):
        if not (math.isfinite(self.C) and self.C > 0.5):
            raise ValueError(f"drift family requires C > 1/2, got C={self.C}")

    def q(self, t):
        t = np.asarray(t, dtype=float)
        return 2.0 * self.C * t * t - 2.0 * t + 1.0

    def drift_coeff(self, t):
        """D(t); the base drift is ``D(t) * x`` componentwise."""
        _check_open(t)
        t = np.asarray(t, dtype=float)
        out = (2.0 * self.C * t * t - 1.0) / (t * self.q(t))
        return float(out) if out.ndim == 0 else out

    def base_drift(self, x, t):
        return self.drift_coeff(t) * np.asarray(x)

    def phi(self, t):
        """exp of the integral of D over [t, 1]; finite on [0, 1]."""
        t = np.asarray(t, dtype=float)
        out = (2.0 * self.C - 1.0) * t / self.q(t)
        return float(out) if out.ndim == 0 else out

    def i_t(self, t):
        t = np.asarray(t, dtype=float)
        out = 0.5 - t + self.C * t * t
        return float(out) if out.ndim == 0 else out

    def j_t(self, t):
        return self.i_t(1.0) - self.i_t(t) * self.phi(t) ** 2

    def bridge_coeffs(self, t):
        """(alpha_bar, beta_bar, gamma_sq) of the base bridge p(X_t | X_0, X_1)."""
        _check_open(t)
        i1 = self.i_t(1.0)
        ph, it, jt = self.phi(t), self.i_t(t), self.j_t(t)
        alpha_bar = self.phi(0.0) * jt / (ph * i1)
        beta_bar = ph * it / i1
        gamma_sq = 2.0 * it * jt / i1
        return alpha_bar, beta_bar, gamma_sq

    def adjoint_coeff(self, t):
        """Scalar multiplying grad g(X_1) in the lean adjoint at time t."""
        t = np.asarray(t, dtype=float)
        if np.any(t <= 0.0) or np.any(t > 1.0):
            raise ValueError("adjoint_coeff requires 0 < t <= 1")
        return self.phi(t)

    def terminal_variance(self) -> float:
        return 2.0 * self.C - 1.0

    def marginal_variance(self, t):
        """Var(X_t) of the uncontrolled base SDE started from N(0, I)."""
        t = np.asarray(t, dtype=float)
        return t * t * self.terminal_variance() + (1.0 - t) ** 2


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on ``[t_min, t_max]`` strictly inside (0, 1)."""

    t_min: float = T_MIN
    t_max: float = T_MAX
    n_steps: int = 40
    nodes: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not 0.0 < self.t_min < self.t_max < 1.0:
            raise ValueError(
                f"need 0 < t_min < t_max < 1, got [{self.t_min}, {self.t_max}]"
            )
        if int(self.n_steps) < 1:
            raise ValueError("n_steps must be positive")
        nodes = np.linspace(self.t_min, self.t_max, int(self.n_steps) + 1)
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @property
    def dt(self) -> float:
        return (self.t_max - self.t_min) / self.n_steps

    def __len__(self) -> int:
        return len(self.nodes)


def am_base_drift(v_pt, x, t):
    """Memoryless drift of the pretrained dynamic, ``-x/t + 2 v_pt(x, t)``."""
    t = float(t)
    if t <= 0.0:
        raise ValueError("am_base_drift requires t > 0")
    x = np.asarray(x, dtype=float)
    return -x / t + 2.0 * v_pt(x, t)
