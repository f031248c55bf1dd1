"""Run orchestration: pretrain / finetune / eval / export, manifests and metrics files.

Run directory layout (all text):

    config.json          fully resolved config (canonical JSON)
    manifest.json        config hash, artifact paths, version, timestamps, status
    vpt.ckpt.json        pretrained checkpoint            (pretrain)
    vft.ckpt.json        fine-tuned checkpoint            (finetune)
    metrics.csv          iter, loss, mean_reward          (deterministic)
    eval_progress.csv    iter, w2, mean_reward            (deterministic)
    eval.csv             final evaluation row             (deterministic)
    timings.csv          iter, simulate_s, adjoint_s, backward_s, wall_clock_s
    trajectories.csv     t, path, x0.. for a few SDE paths
"""

from __future__ import annotations

import csv
import datetime as _dt
import json
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig
from .metrics import evaluate_sampler
from .nn import MlpVelocity
from .samplers import simulate_controlled_sde, write_trajectory_table
from .schedule import DriftSchedule, TimeGrid
from .training import EVAL_STREAM, distill_velocity, pretrain_flow, train_am, train_eam
from .worlds import AnalyticVelocity, tilted_target

MANIFEST = "manifest.json"
ITER_COLUMNS = ("method", "iter", "wall_clock_s", "loss", "mean_reward")
EVAL_COLUMNS = ("method", "nfe", "w2", "mean_reward", "iter", "wall_clock_s")
TTQ_COLUMNS = ("method", "w2_threshold", "iter", "wall_clock_s")


class RunError(RuntimeError):
    pass


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_table(path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def read_table(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class Run:
    """A run directory with a single writer."""

    def __init__(self, cfg: ExperimentConfig, command: str):
        self.cfg = cfg
        self.dir = Path(cfg.out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.artifacts: dict[str, str] = {}
        self.started = _now()
        (self.dir / "config.json").write_text(cfg.resolved_text())
        self.artifacts["config"] = "config.json"

    def path(self, name: str) -> Path:
        return self.dir / name

    def add(self, key: str, name: str) -> Path:
        self.artifacts[key] = name
        return self.dir / name

    def finish(self, status: str = "ok", error: str | None = None) -> dict:
        for key, name in self.artifacts.items():
            if not (self.dir / name).exists():
                raise RunError(f"artifact {key} missing at {self.dir / name}")
        man = {
            "tool": "eamlab",
            "version": __version__,
            "command": self.command,
            "method": self.cfg.method if self.command != "pretrain" else "pretrain",
            "seed": self.cfg.seed,
            "config_hash": self.cfg.hash(),
            "status": status,
            "error": error,
            "started_utc": self.started,
            "finished_utc": _now(),
            "artifacts": dict(sorted(self.artifacts.items())),
        }
        (self.dir / MANIFEST).write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")
        return man


def _write_report(run: Run, report) -> None:
    write_table(run.add("metrics", "metrics.csv"), ("iter", "loss", "mean_reward"), report.rows)
    wall, rows = 0.0, []
    for t in report.timings:
        wall += t["simulate_s"] + t["adjoint_s"] + t["backward_s"]
        rows.append({**t, "wall_clock_s": wall})
    write_table(run.add("timings", "timings.csv"),
                ("iter", "simulate_s", "adjoint_s", "backward_s", "wall_clock_s"), rows)
    if report.evals:
        write_table(run.add("eval_progress", "eval_progress.csv"), ("iter", "w2", "mean_reward"),
                    report.evals)


def _target(cfg: ExperimentConfig, which: str):
    world = cfg.world_obj()
    if world.variant != "gaussian":
        return None
    if which == "data":
        return world.single()
    return tilted_target(world, cfg.reward_obj())


def _eval_row(cfg, net, method, which="tilted") -> dict:
    world = cfg.world_obj()
    rew = cfg.reward_obj()
    rep = evaluate_sampler(net, world, rew, _target(cfg, which), int(cfg.eval["n"]),
                           int(cfg.eval["ode_steps"]),
                           np.random.default_rng([cfg.seed, EVAL_STREAM, 1]))
    return {"method": method, "target": which, "nfe": int(cfg.eval["ode_steps"]), **rep.row()}


def _write_eval(run: Run, row: dict) -> None:
    cols = ["method", "target", "nfe", "n", "w2", "mean_reward"]
    cols += [k for k in row if k not in cols]
    write_table(run.add("eval", "eval.csv"), cols, [row])


def _new_net(cfg: ExperimentConfig, dim: int) -> MlpVelocity:
    m = cfg.model
    return MlpVelocity.init(dim, np.random.default_rng([cfg.seed, 101]), tuple(m["hidden"]), int(m["n_freq"]))


def _guard(run: Run, fn):
    try:
        return fn()
    except FloatingPointError as exc:
        run.finish("aborted", str(exc))
        raise RunError(f"run aborted: {exc}") from exc


def cmd_pretrain(cfg: ExperimentConfig) -> dict:
    run = Run(cfg, "pretrain")
    world = cfg.world_obj()
    net = _new_net(cfg, world.dim)
    net, report = _guard(run, lambda: pretrain_flow(world, net, cfg.pretrain_config()))
    net.save(run.add("checkpoint", "vpt.ckpt.json"))
    _write_report(run, report)
    _write_eval(run, _eval_row(cfg, net, "pretrain", "data"))
    return run.finish()


def load_base(cfg: ExperimentConfig):
    """(v_pt, v_ft initial) from a checkpoint or the analytic oracle."""
    world = cfg.world_obj()
    if cfg.analytic_velocity:
        v_pt = AnalyticVelocity(world)
        v_ft = distill_velocity(world, _new_net(cfg, world.dim), cfg.pretrain_config())
        return v_pt, v_ft
    if not cfg.checkpoint:
        raise RunError("finetune needs a pretrained checkpoint path or the analytic-velocity flag")
    path = Path(cfg.checkpoint)
    if not path.exists():
        raise RunError(f"checkpoint not found: {path}")
    v_pt = MlpVelocity.load(path)
    if v_pt.dim != world.dim:
        raise RunError(f"checkpoint dimension {v_pt.dim} does not match world dimension {world.dim}")
    return v_pt, v_pt.copy()


def cmd_finetune(cfg: ExperimentConfig) -> dict:
    run = Run(cfg, "finetune")
    world = cfg.world_obj()
    rew = cfg.reward_obj()
    tcfg = cfg.train_config()
    v_pt, v_ft = load_base(cfg)
    target = _target(cfg, "tilted")
    sched = DriftSchedule(tcfg.C)
    if cfg.method == "eam":
        report = _guard(run, lambda: train_eam(sched, v_pt, v_ft, rew, tcfg, world, target))
    else:
        report = _guard(run, lambda: train_am(v_pt, v_ft, rew, tcfg, world, target))
    v_ft.save(run.add("checkpoint", "vft.ckpt.json"))
    _write_report(run, report)
    _write_eval(run, _eval_row(cfg, v_ft, cfg.method))
    # a handful of controlled-SDE paths for plotting
    grid = TimeGrid(tcfg.t_min, tcfg.t_max, tcfg.sde_steps)
    mode = "am_baseline" if cfg.method == "am" else "eam_reparam"
    traj = simulate_controlled_sde(v_ft, mode, grid, np.random.default_rng([cfg.seed, 202]), 16,
                                   world.dim, sched)
    write_trajectory_table(traj, run.add("trajectories", "trajectories.csv"))
    return run.finish()


def cmd_eval(cfg: ExperimentConfig, target: str = "tilted") -> dict:
    if not cfg.checkpoint:
        raise RunError("eval needs a checkpoint")
    path = Path(cfg.checkpoint)
    if not path.exists():
        raise RunError(f"checkpoint not found: {path}")
    run = Run(cfg, "eval")
    net = MlpVelocity.load(path)
    _write_eval(run, _eval_row(cfg, net, cfg.method, target))
    return run.finish()


# ---------------------------------------------------------------------------
# export


def load_manifest(run_dir) -> dict:
    p = Path(run_dir) / MANIFEST
    if not p.exists():
        raise RunError(f"missing manifest: {p}")
    return json.loads(p.read_text())


def collect(run_dirs, w2_threshold: float = 0.12):
    """Merge runs into (iteration rows, eval rows, time-to-quality rows)."""
    iters, evals, ttq = [], [], []
    for d in run_dirs:
        d = Path(d)
        man = load_manifest(d)
        method = man["method"]
        art = man["artifacts"]
        cfg = json.loads((d / art["config"]).read_text())
        wall = {}
        if "timings" in art:
            for r in read_table(d / art["timings"]):
                wall[int(r["iter"])] = float(r["wall_clock_s"])
        if "metrics" in art:
            for r in read_table(d / art["metrics"]):
                it = int(r["iter"])
                iters.append({"method": method, "iter": it, "wall_clock_s": wall.get(it, float("nan")),
                              "loss": float(r["loss"]), "mean_reward": float(r["mean_reward"])})
        nfe_train = cfg["train"]["ode_steps"] if method == "eam" else cfg["train"]["sde_steps"]
        hit = None
        if "eval_progress" in art:
            for r in read_table(d / art["eval_progress"]):
                it, w2 = int(r["iter"]), float(r["w2"])
                row = {"method": method, "nfe": nfe_train, "w2": w2,
                       "mean_reward": float(r["mean_reward"]), "iter": it,
                       "wall_clock_s": wall.get(it, 0.0)}
                evals.append(row)
                if hit is None and w2 < w2_threshold:
                    hit = row
        ttq.append({"method": method, "w2_threshold": w2_threshold,
                    "iter": "" if hit is None else hit["iter"],
                    "wall_clock_s": float("nan") if hit is None else hit["wall_clock_s"]})
        if "eval" in art:
            for r in read_table(d / art["eval"]):
                evals.append({"method": method, "nfe": int(r["nfe"]), "w2": float(r["w2"]),
                              "mean_reward": float(r["mean_reward"]), "iter": "final",
                              "wall_clock_s": max(wall.values()) if wall else float("nan")})
    return iters, evals, ttq


def cmd_export(run_dirs, out_dir, fmt: str = "csv", w2_threshold: float = 0.12) -> list[Path]:
    if fmt not in ("csv", "plot-table"):
        raise RunError(f"unknown export format {fmt!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    iters, evals, ttq = collect(run_dirs, w2_threshold)
    paths = [out / "iterations.csv", out / "evals.csv", out / "time_to_quality.csv"]
    write_table(paths[0], ITER_COLUMNS, iters)
    write_table(paths[1], EVAL_COLUMNS, evals)
    write_table(paths[2], TTQ_COLUMNS, ttq)
    if fmt == "plot-table":
        from .plots import plot_runs

        paths += plot_runs(iters, evals, out, w2_threshold)
    return paths
