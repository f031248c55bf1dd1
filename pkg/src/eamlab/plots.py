"""Static figures for exported runs (rendered to PNG files, Agg backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

COLORS = {"eam": "tab:blue", "am": "tab:orange", "pretrain": "tab:gray"}


def _by_method(rows):
    out = {}
    for r in rows:
        out.setdefault(r["method"], []).append(r)
    return out


def plot_runs(iters, evals, out_dir, w2_threshold: float = 0.12) -> list[Path]:
    out_dir = Path(out_dir)
    paths = []

    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    for method, rows in _by_method(iters).items():
        rows = [r for r in rows if r["mean_reward"] == r["mean_reward"]]
        if rows:
            ax.plot([r["wall_clock_s"] for r in rows], [r["mean_reward"] for r in rows],
                    lw=0.8, color=COLORS.get(method), label=method)
    ax.set_xlabel("wall clock [s]")
    ax.set_ylabel("mean reward of training endpoints")
    ax.legend(frameon=False)
    fig.tight_layout()
    p = out_dir / "reward_vs_wallclock.png"
    fig.savefig(p, dpi=120)
    plt.close(fig)
    paths.append(p)

    progress = [r for r in evals if r["iter"] != "final"]
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    for method, rows in _by_method(progress).items():
        ax.plot([r["wall_clock_s"] for r in rows], [r["w2"] for r in rows], "o-", ms=3,
                color=COLORS.get(method), label=method)
    ax.axhline(w2_threshold, color="k", lw=0.6, ls="--")
    ax.set_xlabel("wall clock [s]")
    ax.set_ylabel("W2 to tilted target")
    ax.set_yscale("log")
    ax.legend(frameon=False)
    fig.tight_layout()
    p = out_dir / "w2_vs_wallclock.png"
    fig.savefig(p, dpi=120)
    plt.close(fig)
    paths.append(p)
    return paths
