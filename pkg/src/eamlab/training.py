"""Flow-matching pretraining, the Adjoint Matching baseline, and Efficient Adjoint Matching.

Both fine-tuning losses are regressions of the fine-tuned velocity onto a
target built without gradients.  With ``u = (-D x - x/t + 2 v_ft) / sigma`` the
EAM residual is

    u + sigma * Phi(t) * grad g = (2 / sigma) * (v_ft - target)
    target = 1/2 (D(t) + 1/t) x_t - sigma^2/2 * Phi(t) * grad g(X_1)

and for AM, with ``u = 2 (v_ft - v_pt) / sigma``, ``target = v_pt - sigma^2/2 * a``.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .adjoint import adjoint_backward_am, terminal_grad_am, terminal_grad_eam
from .metrics import evaluate_sampler
from .nn import AdamW, MlpVelocity, param_grad
from .rewards import RewardSpec, reward, time_weight
from .samplers import noise_to_t, simulate_controlled_sde, simulate_ode
from .schedule import T_MAX, T_MIN, DriftSchedule, TimeGrid, sigma
from .worlds import GaussianMoments, World, analytic_velocity, sample_data

METHODS = ("pretrain", "am", "eam")
SCORE_MODES = ("exact", "tweedie")
# eval draws come from their own stream so evaluating never perturbs training
EVAL_STREAM = 7_919


@dataclass
class TrainConfig:
    method: str = "eam"
    batch_size: int = 256
    iterations: int = 1500
    sde_steps: int = 40
    ode_steps: int = 10
    C: float = 0.51
    score_mode: str = "exact"
    k_intermediate: int = 4
    t_min: float = T_MIN
    t_max: float = T_MAX
    time_weighting: bool = False
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.0
    seed: int = 0
    eval_every: int = 0
    eval_n: int = 4096
    eval_ode_steps: int = 10

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.score_mode not in SCORE_MODES:
            raise ValueError(f"unknown score mode {self.score_mode!r}")
        for name in ("batch_size", "sde_steps", "ode_steps", "k_intermediate", "eval_ode_steps"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be positive")
        if self.iterations < 0 or self.eval_every < 0:
            raise ValueError("iterations and eval_every must be non-negative")
        if not self.C > 0.5:
            raise ValueError("C must exceed 1/2")
        if not 0.0 < self.t_min < self.t_max < 1.0:
            raise ValueError("need 0 < t_min < t_max < 1")

    def optimizer(self) -> AdamW:
        return AdamW(self.lr, self.beta1, self.beta2, weight_decay=self.weight_decay)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainReport:
    method: str
    seed: int
    rows: list = field(default_factory=list)
    timings: list = field(default_factory=list)
    evals: list = field(default_factory=list)

    @property
    def losses(self) -> np.ndarray:
        return np.array([r["loss"] for r in self.rows])

    @property
    def wall_clock(self) -> float:
        return sum(t["simulate_s"] + t["adjoint_s"] + t["backward_s"] for t in self.timings)

    def mean_iteration_time(self, skip: int = 0) -> float:
        ts = self.timings[skip:]
        return sum(t["simulate_s"] + t["adjoint_s"] + t["backward_s"] for t in ts) / max(len(ts), 1)


class _Clock:
    def __init__(self):
        self.split = {"simulate_s": 0.0, "adjoint_s": 0.0, "backward_s": 0.0}
        self._t = time.perf_counter()

    def lap(self, key):
        now = time.perf_counter()
        self.split[key] += now - self._t
        self._t = now


def _sq_loss(tape_out, target, weight):
    """mean_i 1/2 * weight_i * ||out_i - target_i||^2 on the tape."""
    tape = tape_out.tape
    diff = tape_out - target
    per = tape.square(diff) * (0.5 * weight[:, None] / len(target))
    return tape.sum(per)


def _maybe_eval(report, it, cfg, v_ft, world, rew, target, wall):
    if not cfg.eval_every or world is None:
        return
    if it % cfg.eval_every and it != cfg.iterations:
        return
    ev = evaluate_sampler(v_ft, world, rew, target, cfg.eval_n, cfg.eval_ode_steps,
                          np.random.default_rng([cfg.seed, EVAL_STREAM]))
    report.evals.append({"iter": it, "wall_clock_s": wall, "w2": ev.w2, "mean_reward": ev.mean_reward})


# ---------------------------------------------------------------------------
# pretraining


def pretrain_flow(world: World, net: MlpVelocity, cfg: TrainConfig):
    """Conditional flow matching: regress v(X_t, t) onto X_1 - eps, t ~ U[0, 1]."""
    rng = np.random.default_rng(cfg.seed)
    opt = cfg.optimizer()
    report = TrainReport("pretrain", cfg.seed)
    n = cfg.batch_size
    ones = np.ones(n)
    for it in range(1, cfg.iterations + 1):
        clock = _Clock()
        x1 = sample_data(world, n, rng)
        t = rng.uniform(0.0, 1.0, size=n)
        eps = rng.standard_normal(x1.shape)
        xt = t[:, None] * x1 + (1.0 - t[:, None]) * eps
        clock.lap("simulate_s")
        loss, g = param_grad(net, lambda f: _sq_loss(f(xt, t), x1 - eps, 2.0 * ones))
        net.params = opt.step(net.params, g)
        clock.lap("backward_s")
        report.rows.append({"iter": it, "loss": loss, "mean_reward": float("nan")})
        report.timings.append({"iter": it, **clock.split})
    return net, report


def distill_velocity(world: World, net: MlpVelocity, cfg: TrainConfig) -> MlpVelocity:
    """Regress ``net`` onto the analytic velocity of a Gaussian world (noise-free targets).

    Used to start fine-tuning from the exact idealization when no checkpoint is given.
    """
    rng = np.random.default_rng(cfg.seed)
    opt = cfg.optimizer()
    n = cfg.batch_size
    ones = np.ones(n)
    for _ in range(cfg.iterations):
        x1 = sample_data(world, n, rng)
        t = rng.uniform(cfg.t_min, cfg.t_max, size=n)
        xt, _ = noise_to_t(x1, t, rng)
        tgt = analytic_velocity(world, xt, t)
        _, g = param_grad(net, lambda f: _sq_loss(f(xt, t), tgt, 2.0 * ones))
        net.params = opt.step(net.params, g)
    return net


# ---------------------------------------------------------------------------
# EAM


def matching_target(sched: DriftSchedule, x_t, t, grad_g) -> np.ndarray:
    """Velocity-space regression target 1/2 (D + 1/t) x_t - sigma^2/2 Phi grad g."""
    t = np.asarray(t, dtype=float)
    half_drift = 0.5 * (sched.drift_coeff(t) + 1.0 / t)
    s2phi = 0.5 * sigma(t) ** 2 * sched.phi(t)
    if t.ndim:
        half_drift, s2phi = half_drift[:, None], s2phi[:, None]
    return half_drift * x_t - s2phi * grad_g


def composed_matching_target(sched: DriftSchedule, v_pt, x1, eps, t) -> np.ndarray:
    """Reward-free target from the matching pair via the Tweedie terminal gradient."""
    x1 = np.atleast_2d(np.asarray(x1, dtype=float))
    eps = np.atleast_2d(np.asarray(eps, dtype=float))
    x_t = t * x1 + (1.0 - t) * eps
    zero = RewardSpec.linear(np.zeros(x1.shape[1]), beta=0.0)
    g = terminal_grad_eam(sched, v_pt, zero, x1, x_t, t, "tweedie")
    return matching_target(sched, x_t, t, g.value)


def expand_matching_target(sched: DriftSchedule, v_pt, x1, eps, t) -> np.ndarray:
    """The same target written as a combination of (X_1 - eps), v_pt(X_t, t) and eps."""
    x1 = np.atleast_2d(np.asarray(x1, dtype=float))
    eps = np.atleast_2d(np.asarray(eps, dtype=float))
    t = float(t)
    C = sched.C
    q = 2.0 * C * t * t - 2.0 * t + 1.0
    x_t = t * x1 + (1.0 - t) * eps
    return (
        (1.0 - t) * (1.0 - 2.0 * C * t) / q * (x1 - eps)
        + t * (2.0 * C - 1.0) / q * v_pt(x_t, t)
        - (1.0 - t) * (2.0 * C - 1.0) / q * eps
    )


def eam_batch(sched, v_pt, v_ft, rew, cfg, rng, world=None, clock=None):
    """One EAM batch: (x_t, t, target, loss weight, X_1, terminal grad).

    X_1 comes from the few-step ODE with ``v_ft`` evaluated off-tape.
    """
    n = cfg.batch_size
    x0 = rng.standard_normal((n, v_ft.dim))
    x1 = simulate_ode(v_ft, x0, cfg.ode_steps)
    t = rng.uniform(cfg.t_min, cfg.t_max, size=n)
    x_t, _ = noise_to_t(x1, t, rng)
    if clock is not None:
        clock.lap("simulate_s")
    if cfg.time_weighting:
        r_scale, l_scale = time_weight(t)
    else:
        r_scale, l_scale = 1.0, np.ones(n)
    g = terminal_grad_eam(sched, v_pt, rew, x1, x_t, t, cfg.score_mode, world, r_scale)
    target = matching_target(sched, x_t, t, g.value)
    # (2/sigma)^2 converts velocity-space error back to control-space residual
    weight = l_scale * 4.0 / sigma(t) ** 2
    if clock is not None:
        clock.lap("adjoint_s")
    return x_t, t, target, weight, x1, g


def eam_loss(v, x_t, t, target, weight) -> float:
    """Plain-numpy value of the EAM loss for any velocity callable."""
    r = v(x_t, t) - target
    return float(np.mean(0.5 * weight * np.sum(r * r, axis=1)))


def train_eam(sched: DriftSchedule, v_pt, v_ft: MlpVelocity, rew: RewardSpec, cfg: TrainConfig,
              world: World | None = None, target: GaussianMoments | None = None):
    """Efficient Adjoint Matching; updates ``v_ft`` in place and returns a TrainReport."""
    if cfg.score_mode == "exact" and world is None:
        raise ValueError("exact score mode needs the data world")
    rng = np.random.default_rng(cfg.seed)
    opt = cfg.optimizer()
    report = TrainReport("eam", cfg.seed)
    wall = 0.0
    _maybe_eval(report, 0, cfg, v_ft, world, rew, target, wall)
    for it in range(1, cfg.iterations + 1):
        clock = _Clock()
        x_t, t, tgt, weight, x1, _ = eam_batch(sched, v_pt, v_ft, rew, cfg, rng, world, clock)
        loss, grad = param_grad(v_ft, lambda f: _sq_loss(f(x_t, t), tgt, weight))
        v_ft.params = opt.step(v_ft.params, grad)
        clock.lap("backward_s")
        wall += sum(clock.split.values())
        report.rows.append({"iter": it, "loss": loss, "mean_reward": float(np.mean(reward(rew, x1)))})
        report.timings.append({"iter": it, **clock.split})
        _maybe_eval(report, it, cfg, v_ft, world, rew, target, wall)
    return report


# ---------------------------------------------------------------------------
# AM baseline


def train_am(v_pt, v_ft: MlpVelocity, rew: RewardSpec, cfg: TrainConfig,
             world: World | None = None, target: GaussianMoments | None = None):
    """Adjoint Matching on the memoryless pretrained drift with u = 2 (v_ft - v_pt) / sigma."""
    rng = np.random.default_rng(cfg.seed)
    opt = cfg.optimizer()
    grid = TimeGrid(cfg.t_min, cfg.t_max, cfg.sde_steps)
    sig = sigma(grid.nodes)
    report = TrainReport("am", cfg.seed)
    wall = 0.0
    n, k = cfg.batch_size, min(cfg.k_intermediate, len(grid))
    _maybe_eval(report, 0, cfg, v_ft, world, rew, target, wall)
    for it in range(1, cfg.iterations + 1):
        clock = _Clock()
        traj = simulate_controlled_sde(v_ft, "am_baseline", grid, rng, n, v_ft.dim)
        x1 = traj.endpoint
        clock.lap("simulate_s")
        term = terminal_grad_am(rew, x1)
        adj = adjoint_backward_am(v_pt, traj, term)
        # k distinct nodes per trajectory
        idx = np.argsort(rng.random((n, len(grid))), axis=1)[:, :k].ravel()
        rows = np.repeat(np.arange(n), k)
        x_t = traj.states[idx, rows]
        t = grid.nodes[idx]
        a = adj.states[idx, rows]
        if cfg.time_weighting:
            r_scale, l_scale = time_weight(t)
            a = a * r_scale[:, None]
        else:
            l_scale = np.ones(len(t))
        tgt = v_pt(x_t, t) - 0.5 * (sig[idx] ** 2)[:, None] * a
        weight = l_scale * 4.0 / sig[idx] ** 2
        clock.lap("adjoint_s")
        loss, grad = param_grad(v_ft, lambda f: _sq_loss(f(x_t, t), tgt, weight))
        v_ft.params = opt.step(v_ft.params, grad)
        clock.lap("backward_s")
        wall += sum(clock.split.values())
        report.rows.append({"iter": it, "loss": loss, "mean_reward": float(np.mean(reward(rew, x1)))})
        report.timings.append({"iter": it, **clock.split})
        _maybe_eval(report, it, cfg, v_ft, world, rew, target, wall)
    return report
