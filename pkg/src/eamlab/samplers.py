"""Trajectory generation: controlled memoryless SDE, few-step ODE, endpoint noising."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .schedule import DriftSchedule, TimeGrid, sigma

CONTROL_MODES = ("am_baseline", "eam_reparam", "base")


def as_rng(rng) -> tuple[np.random.Generator, int | None]:
    if isinstance(rng, np.random.Generator):
        return rng, None
    return np.random.default_rng(rng), (None if rng is None else int(rng))


@dataclass
class Trajectory:
    """Batched path states; ``states[k]`` is the (n, d) batch at ``grid.nodes[node_index[k]]``."""

    grid: TimeGrid
    states: np.ndarray
    node_index: np.ndarray
    rng_seed: int | None = None

    @property
    def times(self) -> np.ndarray:
        return self.grid.nodes[self.node_index]

    @property
    def start(self) -> np.ndarray:
        return self.states[0]

    @property
    def endpoint(self) -> np.ndarray:
        return self.states[-1]

    @property
    def is_full(self) -> bool:
        return len(self.node_index) == len(self.grid)


def control_from_vft(sched: DriftSchedule, v_ft, x, t) -> np.ndarray:
    """u(x,t) = (-D(t) x - x/t + 2 v_ft(x,t)) / sigma(t)."""
    t = float(t)
    if t >= 1.0:
        raise ValueError("control undefined at t = 1 (sigma vanishes)")
    x = np.asarray(x, dtype=float)
    return (-sched.drift_coeff(t) * x - x / t + 2.0 * v_ft(x, t)) / sigma(t)


class ControlField:
    def __init__(self, sched: DriftSchedule, v_ft):
        self.sched = sched
        self.v_ft = v_ft

    def __call__(self, x, t):
        return control_from_vft(self.sched, self.v_ft, x, t)


def simulate_controlled_sde(
    velocity,
    control_mode: str,
    grid: TimeGrid,
    rng,
    n_paths: int,
    dim: int = 1,
    sched: DriftSchedule | None = None,
    record=None,
) -> Trajectory:
    """Euler-Maruyama on the uniform grid, X_0 ~ N(0, I) placed at ``grid.t_min``.

    am_baseline: drift -x/t + 2v(x,t)  (pretrained drift plus sigma*u with u = 2(v - v_pt)/sigma)
    eam_reparam: drift D(t)x + sigma(t) u(x,t), u from ``control_from_vft``
    base:        drift D(t)x, no control (``velocity`` is ignored)

    ``record`` selects stored node indices (default: every node).
    """
    if control_mode not in CONTROL_MODES:
        raise ValueError(f"unknown control mode {control_mode!r}")
    if control_mode != "am_baseline" and sched is None:
        raise ValueError(f"{control_mode} needs a drift schedule")
    gen, seed = as_rng(rng)
    nodes = grid.nodes
    dt = grid.dt
    sq = np.sqrt(dt)
    keep = np.arange(len(nodes)) if record is None else np.unique(np.asarray(record, dtype=int))
    keep_set = set(keep.tolist())
    x = gen.standard_normal((n_paths, dim))
    out = [x.copy()] if 0 in keep_set else []
    for k in range(grid.n_steps):
        t = float(nodes[k])
        if control_mode == "am_baseline":
            drift = -x / t + 2.0 * velocity(x, t)
        elif control_mode == "eam_reparam":
            drift = sched.drift_coeff(t) * x + sigma(t) * control_from_vft(sched, velocity, x, t)
        else:
            drift = sched.drift_coeff(t) * x
        x = x + drift * dt + sigma(t) * sq * gen.standard_normal(x.shape)
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"non-finite SDE state at step {k + 1}")
        if k + 1 in keep_set:
            out.append(x.copy())
    return Trajectory(grid, np.stack(out), keep, seed)


def simulate_ode(v, x0, n_steps: int = 10, t0: float = 0.0, t1: float = 1.0) -> np.ndarray:
    """Explicit midpoint for dX = v(X, t) dt; returns X at t1.

    ``v`` is evaluated as a plain function, so nothing is recorded on a tape.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    x = np.array(x0, dtype=float, copy=True)
    h = (t1 - t0) / n_steps
    for k in range(n_steps):
        t = t0 + k * h
        x_mid = x + 0.5 * h * v(x, t)
        x = x + h * v(x_mid, t + 0.5 * h)
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"non-finite ODE state at step {k + 1}")
    return x


def sample_ode(v, n: int, dim: int, rng, n_steps: int = 10) -> np.ndarray:
    gen, _ = as_rng(rng)
    return simulate_ode(v, gen.standard_normal((n, dim)), n_steps)


def noise_to_t(x1, t, rng):
    """X_t = t X_1 + (1 - t) eps; returns (X_t, eps). ``t`` is scalar or one per row."""
    gen, _ = as_rng(rng)
    x1 = np.asarray(x1, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0.0) or np.any(t >= 1.0):
        raise ValueError("noise_to_t requires t in (0, 1)")
    tc = t if t.ndim == 0 else t.reshape((-1,) + (1,) * (x1.ndim - 1))
    eps = gen.standard_normal(x1.shape)
    return tc * x1 + (1.0 - tc) * eps, eps


def base_marginal_check(sched: DriftSchedule, grid: TimeGrid, n_paths: int, rng,
                        n_check: int = 8, dim: int = 1):
    """Compare Var(X_t) of the uncontrolled base SDE with t^2 (2C-1) + (1-t)^2.

    Checks ``n_check`` evenly spaced interior nodes plus the last node.
    """
    if n_paths < 10_000:
        raise ValueError("n_paths must be >= 1e4 for a meaningful moment check")
    interior = np.linspace(0, grid.n_steps, n_check + 2).round().astype(int)[1:-1]
    record = np.unique(np.concatenate([[0], interior, [grid.n_steps]]))
    traj = simulate_controlled_sde(None, "base", grid, rng, n_paths, dim, sched, record=record)
    rows = []
    for idx, xs in zip(traj.node_index, traj.states):
        if idx == 0:
            continue
        t = float(grid.nodes[idx])
        pred = float(sched.marginal_variance(t))
        emp = float(np.mean(np.var(xs, axis=0, ddof=1)))
        rows.append({"t": t, "predicted": pred, "empirical": emp,
                     "abs_err": abs(emp - pred), "rel_err": abs(emp - pred) / pred})
    return rows


def write_trajectory_table(traj: Trajectory, path, max_paths: int = 16) -> None:
    """Delimited dump, one record per (node, path): t, path, x0..x{d-1}."""
    n = min(max_paths, traj.states.shape[1])
    d = traj.states.shape[2]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "path"] + [f"x{i}" for i in range(d)])
        for t, xs in zip(traj.times, traj.states):
            for p in range(n):
                w.writerow([repr(float(t)), p] + [repr(float(v)) for v in xs[p]])
