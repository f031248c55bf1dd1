"""Terminal-cost gradients, Tweedie score estimates, and lean adjoint states."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rewards import RewardSpec, reward_grad
from .samplers import Trajectory
from .schedule import DriftSchedule
from .worlds import World, analytic_score

PROVENANCE = ("am", "eam_exact_score", "eam_tweedie")
_TWEEDIE_GUARD = 1e-6


@dataclass
class TerminalGrad:
    """grad g(X_1) per batch row; ``t_used`` holds the Tweedie times when relevant."""

    value: np.ndarray
    provenance: str
    t_used: np.ndarray | None = None

    def __post_init__(self):
        if self.provenance not in PROVENANCE:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if not np.all(np.isfinite(self.value)):
            raise FloatingPointError("non-finite terminal gradient")


@dataclass
class AdjointPath:
    times: np.ndarray
    states: np.ndarray  # (n_nodes, n, d); states[-1] is the terminal gradient


def velocity_vjp(v, x, t, cot) -> np.ndarray:
    """(d v / d x)^T cot for any velocity exposing ``vjp``."""
    if not hasattr(v, "vjp"):
        raise TypeError(f"{type(v).__name__} does not provide an input VJP")
    return v.vjp(x, t, cot)


def terminal_grad_am(reward: RewardSpec, x1) -> TerminalGrad:
    return TerminalGrad(-reward.beta * reward_grad(reward, np.atleast_2d(x1)), "am")


def _tcol(t, n):
    t = np.asarray(t, dtype=float)
    return np.full((n, 1), float(t)) if t.ndim == 0 else t.reshape(n, 1)


def tweedie_score(v_pt, x, t_tilde) -> np.ndarray:
    """(t v_pt(x, t) - x) / (1 - t): score of the pretrained marginal at t."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    tc = _tcol(t_tilde, x.shape[0])
    if np.any(tc <= 0.0) or np.any(1.0 - tc < _TWEEDIE_GUARD):
        raise ValueError("tweedie_score needs 0 < t and 1 - t >= 1e-6")
    t_arg = float(t_tilde) if np.ndim(t_tilde) == 0 else tc[:, 0]
    return (tc * v_pt(x, t_arg) - x) / (1.0 - tc)


def terminal_grad_eam(
    sched: DriftSchedule,
    v_pt,
    reward: RewardSpec,
    x1,
    x_t=None,
    t=None,
    score_mode: str = "tweedie",
    world: World | None = None,
    reward_scale=1.0,
) -> TerminalGrad:
    """grad g = -x/(2C-1) - grad log p1_pt(x) - beta * reward_scale * grad r(x).

    ``exact`` takes the pretrained terminal score from the Gaussian ``world``;
    ``tweedie`` reuses the matching pair ``(x_t, t)``.
    """
    x1 = np.atleast_2d(np.asarray(x1, dtype=float))
    base = -x1 / sched.terminal_variance()
    if score_mode == "exact":
        if world is None:
            raise ValueError("exact score mode needs the data world")
        pt_score = analytic_score(world, x1, 1.0)
        prov, t_used = "eam_exact_score", None
    elif score_mode == "tweedie":
        if x_t is None or t is None:
            raise ValueError("tweedie score mode needs the intermediate pair (x_t, t)")
        pt_score = tweedie_score(v_pt, x_t, t)
        prov, t_used = "eam_tweedie", np.broadcast_to(np.asarray(t, float), (x1.shape[0],)).copy()
    else:
        raise ValueError(f"unknown score mode {score_mode!r}")
    rs = np.asarray(reward_scale, dtype=float)
    rs = rs.reshape(-1, 1) if rs.ndim else rs
    value = base - pt_score - reward.beta * rs * reward_grad(reward, x1)
    return TerminalGrad(value, prov, t_used)


def adjoint_backward(times, states, terminal_value, jac_vjp) -> np.ndarray:
    """Explicit Euler for da/dt = -(grad_x b)^T a, backward over ``times``.

    a_k = a_{k+1} + dt_k * jac_vjp(x_{k+1}, t_{k+1}, a_{k+1}).
    ``states`` may be None when the drift Jacobian does not depend on x.
    """
    times = np.asarray(times, dtype=float)
    a = np.array(terminal_value, dtype=float)
    out = np.empty((len(times),) + a.shape)
    out[-1] = a
    for k in range(len(times) - 2, -1, -1):
        dt = times[k + 1] - times[k]
        x = None if states is None else states[k + 1]
        a = a + dt * jac_vjp(x, float(times[k + 1]), a)
        if not np.all(np.isfinite(a)):
            raise FloatingPointError(f"non-finite adjoint at step {k}")
        out[k] = a
    return out


def am_drift_vjp(v_pt):
    """(grad_x b)^T a for b(x,t) = -x/t + 2 v_pt(x,t)."""
    return lambda x, t, a: -a / t + 2.0 * velocity_vjp(v_pt, x, t, a)


def linear_drift_vjp(sched: DriftSchedule):
    def vjp(x, t, a):
        # D(1) = 1 is the finite limit; drift_coeff rejects t = 1
        d = 1.0 if t >= 1.0 else sched.drift_coeff(t)
        return d * a

    return vjp


def adjoint_backward_am(v_pt, traj: Trajectory, terminal: TerminalGrad) -> AdjointPath:
    """Lean adjoint of the AM base drift along a stored trajectory."""
    if not traj.is_full:
        raise ValueError("AM adjoint needs the full stored trajectory")
    if not np.all(np.isfinite(traj.states)):
        raise FloatingPointError("trajectory contains non-finite states")
    states = adjoint_backward(traj.times, traj.states, terminal.value, am_drift_vjp(v_pt))
    return AdjointPath(traj.times, states)


def adjoint_backward_linear(sched: DriftSchedule, times, terminal_value) -> AdjointPath:
    """Same backward integrator on the linear base drift (no trajectory needed)."""
    times = np.asarray(times, dtype=float)
    states = adjoint_backward(times, None, terminal_value, linear_drift_vjp(sched))
    return AdjointPath(times, states)


def adjoint_closed_eam(sched: DriftSchedule, t, terminal) -> np.ndarray:
    """a(t) = Phi(t) grad g(X_1); ``t`` may be scalar or one per row."""
    value = terminal.value if isinstance(terminal, TerminalGrad) else np.asarray(terminal, float)
    c = np.asarray(sched.adjoint_coeff(t), dtype=float)
    if c.ndim:
        c = c.reshape((-1,) + (1,) * (value.ndim - 1))
    return c * value

