"""Command-line entry point: verify, pretrain, finetune, eval, export."""

from __future__ import annotations

import sys

import click

from .config import ConfigError, ExperimentConfig
from .runs import RunError, cmd_eval, cmd_export, cmd_finetune, cmd_pretrain


def _load(config, **overrides) -> ExperimentConfig:
    try:
        cfg = ExperimentConfig.load(config) if config else ExperimentConfig()
        beta = overrides.pop("beta", None)
        cfg = cfg.with_overrides(**overrides)
        if beta is not None:
            cfg = cfg.with_overrides(reward={**cfg.reward, "beta": beta})
    except (ConfigError, OSError) as exc:
        raise click.UsageError(str(exc)) from exc
    return cfg


def _common(f):
    opts = [
        click.option("--config", "config", type=click.Path(exists=True, dir_okay=False), help="JSON experiment config."),
        click.option("--out-dir", default=None, help="Run directory."),
        click.option("--seed", type=int, default=None),
        click.option("--eval-n", type=int, default=None, help="Evaluation sample count (>= 1000)."),
        click.option("--eval-ode-steps", type=int, default=None),
    ]
    for o in reversed(opts):
        f = o(f)
    return f


def _finish(fn, cfg, *args):
    try:
        man = fn(cfg, *args)
    except RunError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    click.echo(f"{man['command']} done: {cfg.out_dir} (config {man['config_hash'][:12]})")


@click.group()
@click.version_option(package_name="artifact")
def main():
    """Reward fine-tuning of flow models on analytic Gaussian worlds."""


@main.command()
@click.option("--C", "C", type=float, multiple=True, help="Schedule parameter(s); repeatable.")
@click.option("--grid-points", default=512, show_default=True)
@click.option("--paths", default=50_000, show_default=True, help="SDE paths per check.")
@click.option("--sde-steps", default=2000, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--report", type=click.Path(dir_okay=False), default=None, help="Write the report as CSV.")
def verify(C, grid_points, paths, sde_steps, seed, report):
    """Run the invariant suite; exit 0 iff every check passes."""
    from .verify import DEFAULT_CS, run_checks, write_report

    Cs = list(C) or list(DEFAULT_CS)
    bad = [c for c in Cs if not c > 0.5]
    if bad:
        raise click.BadParameter(f"C must exceed 1/2, got {bad}", param_hint="--C")
    results = run_checks(Cs, grid_points, paths, sde_steps, seed)
    click.echo(f"{'check':34s} {'C':>6s} {'tolerance':>10s} {'observed':>12s}  result")
    for r in results:
        click.echo(f"{r.name:34s} {r.C:6.3g} {r.tolerance:10.1e} {r.observed:12.4e}  {'pass' if r.passed else 'FAIL'}")
    if report:
        write_report(results, report)
    failed = [f"{r.name}[C={r.C:g}]" for r in results if not r.passed]
    if failed:
        click.echo("failed: " + ", ".join(failed), err=True)
        sys.exit(1)
    click.echo(f"all {len(results)} checks passed")


@main.command()
@_common
@click.option("--iterations", type=int, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--lr", type=float, default=None)
def pretrain(config, out_dir, seed, eval_n, eval_ode_steps, iterations, batch_size, lr):
    """Flow-matching pretraining on the configured world."""
    cfg = _load(config, out_dir=out_dir, seed=seed, **{
        "eval.n": eval_n, "eval.ode_steps": eval_ode_steps, "pretrain.iterations": iterations,
        "pretrain.batch_size": batch_size, "pretrain.lr": lr})
    _finish(cmd_pretrain, cfg)


@main.command()
@_common
@click.option("--method", type=click.Choice(["am", "eam"]), default=None)
@click.option("--checkpoint", type=click.Path(dir_okay=False), default=None, help="Pretrained checkpoint.")
@click.option("--analytic-velocity/--no-analytic-velocity", default=None,
              help="Use the analytic Gaussian velocity as the pretrained model.")
@click.option("--iterations", type=int, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--lr", type=float, default=None)
@click.option("--C", "C", type=float, default=None)
@click.option("--beta", type=float, default=None, help="Reward scale.")
@click.option("--score-mode", type=click.Choice(["exact", "tweedie"]), default=None)
@click.option("--sde-steps", type=int, default=None)
@click.option("--ode-steps", type=int, default=None)
@click.option("--k-intermediate", type=int, default=None)
@click.option("--time-weighting/--no-time-weighting", default=None)
@click.option("--eval-every", type=int, default=None)
def finetune(config, out_dir, seed, eval_n, eval_ode_steps, method, checkpoint, analytic_velocity,
             iterations, batch_size, lr, C, beta, score_mode, sde_steps, ode_steps, k_intermediate,
             time_weighting, eval_every):
    """Fine-tune with EAM or the AM baseline."""
    cfg = _load(config, out_dir=out_dir, seed=seed, method=method, checkpoint=checkpoint,
                analytic_velocity=analytic_velocity, beta=beta, **{
                    "eval.n": eval_n, "eval.ode_steps": eval_ode_steps, "train.iterations": iterations,
                    "train.batch_size": batch_size, "train.lr": lr, "train.C": C,
                    "train.score_mode": score_mode, "train.sde_steps": sde_steps,
                    "train.ode_steps": ode_steps, "train.k_intermediate": k_intermediate,
                    "train.time_weighting": time_weighting, "train.eval_every": eval_every})
    _finish(cmd_finetune, cfg)


@main.command(name="eval")
@_common
@click.option("--checkpoint", type=click.Path(dir_okay=False), default=None)
@click.option("--method", type=click.Choice(["am", "eam"]), default=None, help="Label for the eval row.")
@click.option("--target", type=click.Choice(["tilted", "data"]), default="tilted", show_default=True)
def eval_cmd(config, out_dir, seed, eval_n, eval_ode_steps, checkpoint, method, target):
    """ODE-sample a checkpoint and score it against the analytic target."""
    cfg = _load(config, out_dir=out_dir, seed=seed, checkpoint=checkpoint, method=method, **{
        "eval.n": eval_n, "eval.ode_steps": eval_ode_steps})
    _finish(cmd_eval, cfg, target)


@main.command()
@click.argument("run_dirs", nargs=-1, required=True, type=click.Path(file_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--format", "fmt", type=click.Choice(["csv", "plot-table"]), default="csv", show_default=True)
@click.option("--w2-threshold", default=0.12, show_default=True)
def export(run_dirs, out_dir, fmt, w2_threshold):
    """Merge run directories into delimited tables (and PNG figures for plot-table)."""
    try:
        paths = cmd_export(run_dirs, out_dir, fmt, w2_threshold)
    except RunError as exc:
        raise click.ClickException(str(exc)) from exc
    for p in paths:
        click.echo(str(p))


if __name__ == "__main__":
    main()
