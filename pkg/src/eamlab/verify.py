"""Self-contained invariant suite for the drift schedule, samplers and adjoint.

Needs no checkpoint and no training; every check is compared against an
independent oracle (quadrature, finite differences, closed forms).
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass

import numpy as np

from .adjoint import adjoint_backward_linear, terminal_grad_eam, tweedie_score
from .rewards import RewardSpec
from .samplers import control_from_vft, simulate_controlled_sde
from .schedule import DriftSchedule, TimeGrid, sigma
from .training import composed_matching_target, expand_matching_target
from .worlds import AnalyticVelocity, World, analytic_score

DEFAULT_CS = (0.51, 1.0, 2.0, 10.0)
# SDE checks run on a wider grid than training: the last node stands in for X_1
# (endpoint bias ~ 2(1 - t_max)) and X_0 enters where Phi(t_min) is small.
SDE_T_MIN = 1e-3
SDE_T_MAX = 1.0 - 1e-3


@dataclass
class CheckResult:
    name: str
    C: float
    tolerance: float
    observed: float
    passed: bool

    def row(self) -> dict:
        return asdict(self)


def _check(name, C, tol, observed) -> CheckResult:
    observed = float(observed)
    return CheckResult(name, C, tol, observed, bool(np.isfinite(observed) and observed < tol))


def t_grid(n: int = 512, lo: float = 1e-3, hi: float = 1.0 - 1e-3) -> np.ndarray:
    return np.linspace(lo, hi, n)


def bridge_errors(sched: DriftSchedule, ts) -> tuple[float, float]:
    ab, bb, g2 = sched.bridge_coeffs(ts)
    return float(np.max(np.abs(bb - ts))), float(np.max(np.abs(ab**2 + g2 - (1.0 - ts) ** 2)))


def phi_quadrature_error(sched: DriftSchedule, ts, order: int = 20) -> float:
    """max relative error of Phi(t) against exp(int_t^1 D).

    Composite Gauss-Legendre on the grid intervals, accumulated backward from 1.
    """
    ts = np.asarray(ts, dtype=float)
    edges = np.append(ts, 1.0)
    lo, hi = edges[:-1], edges[1:]
    xg, wg = np.polynomial.legendre.leggauss(order)
    half = 0.5 * (hi - lo)
    nodes = (0.5 * (hi + lo))[:, None] + half[:, None] * xg[None, :]
    pieces = half * (sched.drift_coeff(nodes) @ wg)
    integral = np.cumsum(pieces[::-1])[::-1]
    ref = np.exp(integral)
    return float(np.max(np.abs(sched.phi(ts) - ref) / ref))


def i_t_ode_residual(sched: DriftSchedule, ts, h: float = 1e-5) -> float:
    """max |dI/dt - (2/t) I + (1-t)/t| with a central difference."""
    ts = np.asarray(ts)
    dI = (sched.i_t(ts + h) - sched.i_t(ts - h)) / (2.0 * h)
    return float(np.max(np.abs(dI - 2.0 / ts * sched.i_t(ts) + (1.0 - ts) / ts)))


def adjoint_rel_error(sched: DriftSchedule, n_steps: int, t0: float = 0.5) -> float:
    """max relative error of explicit-Euler lean adjoint on the linear drift vs Phi."""
    times = np.linspace(t0, 1.0, n_steps + 1)
    path = adjoint_backward_linear(sched, times, np.ones((1, 1)))
    exact = sched.phi(times)
    return float(np.max(np.abs(path.states[:, 0, 0] - exact) / exact))


def endpoint_corr(x0, x1) -> float:
    """max |corr| over coordinate pairs."""
    d = x0.shape[1]
    c = np.corrcoef(np.hstack([x0, x1]), rowvar=False)[:d, d:]
    return float(np.max(np.abs(c)))


def base_sde_stats(sched: DriftSchedule, n_paths: int, n_steps: int, rng, n_check: int = 8):
    """(corr(X0,X1), terminal variance rel. error, max interior marginal rel. error)."""
    grid = TimeGrid(SDE_T_MIN, SDE_T_MAX, n_steps)
    interior = np.linspace(0, n_steps, n_check + 2).round().astype(int)[1:-1]
    record = np.concatenate([[0], interior, [n_steps]])
    traj = simulate_controlled_sde(None, "base", grid, rng, n_paths, 1, sched, record=record)
    corr = endpoint_corr(traj.start, traj.endpoint)
    tv = sched.terminal_variance()
    term = abs(np.var(traj.endpoint, ddof=1) - tv) / tv
    worst = 0.0
    for idx, xs in zip(traj.node_index[1:-1], traj.states[1:-1]):
        pred = sched.marginal_variance(grid.nodes[idx])
        worst = max(worst, abs(np.var(xs, ddof=1) - pred) / pred)
    return corr, term, worst


def pretrained_sde_stats(sched: DriftSchedule, n_paths: int, n_steps: int, rng):
    """Controlled dynamic with v_ft = v_pt = analytic N(0,1) velocity."""
    world = World.gaussian([0.0], [[1.0]])
    grid = TimeGrid(SDE_T_MIN, SDE_T_MAX, n_steps)
    traj = simulate_controlled_sde(AnalyticVelocity(world), "eam_reparam", grid, rng, n_paths, 1,
                                   sched, record=[0, n_steps])
    corr = endpoint_corr(traj.start, traj.endpoint)
    return corr, abs(np.var(traj.endpoint, ddof=1) - 1.0)


def tweedie_error(ts, rng) -> float:
    world = World.gaussian([0.0, 0.5], [[1.0, 0.3], [0.3, 0.8]])
    v = AnalyticVelocity(world)
    x = rng.standard_normal((64, 2)) * 2.0
    return max(float(np.max(np.abs(tweedie_score(v, x, t) - analytic_score(world, x, t)))) for t in ts)


def expansion_error(sched: DriftSchedule, rng, n: int = 1000) -> float:
    v = AnalyticVelocity(World.gaussian([0.0], [[1.0]]))
    worst = 0.0
    for t, x1, eps in zip(rng.uniform(0.01, 0.99, n), rng.normal(0, 2, n), rng.normal(0, 1, n)):
        a = expand_matching_target(sched, v, [[x1]], [[eps]], t)
        b = composed_matching_target(sched, v, [[x1]], [[eps]], t)
        worst = max(worst, float(np.max(np.abs(a - b))))
    return worst


def control_identity_error(sched: DriftSchedule, rng) -> float:
    v = AnalyticVelocity(World.gaussian([0.3], [[1.5]]))
    worst = 0.0
    for t in rng.uniform(0.01, 0.99, 64):
        x = rng.normal(0, 2, (16, 1))
        total = sched.drift_coeff(t) * x + sigma(t) * control_from_vft(sched, v, x, t)
        worst = max(worst, float(np.max(np.abs(total - (-x / t + 2.0 * v(x, t))))))
    return worst


def exact_null_error(sched: DriftSchedule, rng) -> float:
    """Centered world with covariance (2C-1) I and beta = 0: grad g vanishes."""
    var = sched.terminal_variance()
    world = World.gaussian([0.0, 0.0], [[var, 0.0], [0.0, var]])
    x1 = rng.normal(0, 3, (128, 2))
    zero = RewardSpec.linear([0.0, 0.0], beta=0.0)
    g = terminal_grad_eam(sched, None, zero, x1, score_mode="exact", world=world)
    return float(np.max(np.abs(g.value)))


def run_checks(C_values=DEFAULT_CS, n_grid: int = 512, n_paths: int = 50_000,
               sde_steps: int = 2000, seed: int = 0) -> list[CheckResult]:
    C_values = [float(c) for c in C_values]
    bad = [c for c in C_values if not c > 0.5]
    if bad:
        raise ValueError(f"C must exceed 1/2, got {bad}")
    ts = t_grid(n_grid)
    out = []
    for C in C_values:
        sched = DriftSchedule(C)
        rng = np.random.default_rng([seed, int(round(C * 1e6))])
        eb, ev = bridge_errors(sched, ts)
        out.append(_check("bridge_beta_bar", C, 1e-10, eb))
        out.append(_check("bridge_variance", C, 1e-8, ev))
        out.append(_check("phi_at_zero", C, 1e-12, abs(sched.phi(0.0))))
        out.append(_check("phi_quadrature", C, 1e-6, phi_quadrature_error(sched, ts)))
        out.append(_check("i_t_ode", C, 1e-6, i_t_ode_residual(sched, ts[2:-2])))
        e1, e2 = adjoint_rel_error(sched, 1000), adjoint_rel_error(sched, 10_000)
        out.append(_check("adjoint_order_deviation", C, 0.1, abs(math.log10(e1 / e2) - 1.0)))
        out.append(_check("adjoint_refined_rel", C, 1e-3, e2))
        corr, term, marg = base_sde_stats(sched, n_paths, sde_steps, rng)
        out.append(_check("base_memoryless_corr", C, 0.02, corr))
        out.append(_check("base_terminal_variance_rel", C, 0.05, term))
        out.append(_check("base_marginal_variance_rel", C, 0.03, marg))
        pcorr, pvar = pretrained_sde_stats(sched, n_paths, sde_steps, rng)
        out.append(_check("pretrained_memoryless_corr", C, 0.02, pcorr))
        out.append(_check("pretrained_terminal_variance_rel", C, 0.03, pvar))
        out.append(_check("tweedie_exact", C, 1e-10, tweedie_error(ts, rng)))
        out.append(_check("expansion_identity", C, 1e-10, expansion_error(sched, rng)))
        out.append(_check("control_drift_identity", C, 1e-12, control_identity_error(sched, rng)))
        out.append(_check("exact_score_null", C, 1e-10, exact_null_error(sched, rng)))
    return out


def write_report(results, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["check", "C", "tolerance", "observed", "pass"])
        for r in results:
            w.writerow([r.name, repr(r.C), repr(r.tolerance), repr(r.observed), int(r.passed)])
