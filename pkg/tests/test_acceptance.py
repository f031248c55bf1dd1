"""Acceptance suite: one test (or a few parametrized parts) per criterion.

Each test tags itself with ``criterion``; conftest prints one PASS/FAIL line per
criterion at the end of the session.  Thresholds are the acceptance thresholds
verbatim; nothing here is loosened to make a run pass.
"""

import time

import numpy as np
import pytest
from click.testing import CliRunner

from eamlab.adjoint import terminal_grad_eam, tweedie_score
from eamlab.cli import main
from eamlab.config import ExperimentConfig
from eamlab.nn import MlpVelocity, input_vjp, param_grad
from eamlab.rewards import RewardSpec
from eamlab.runs import cmd_export, cmd_finetune, read_table
from eamlab.samplers import sample_ode
from eamlab.schedule import DriftSchedule
from eamlab.training import TrainConfig, composed_matching_target, expand_matching_target, train_eam
from eamlab.verify import (
    adjoint_rel_error,
    base_sde_stats,
    bridge_errors,
    phi_quadrature_error,
    pretrained_sde_stats,
    t_grid,
)
from eamlab.worlds import AnalyticVelocity, World, analytic_score, sample_data

pytestmark = pytest.mark.slow

CS = (0.51, 0.6, 1.0, 2.0, 10.0)
STD = World.gaussian([0.0], [[1.0]])


def _tag(props, n, title, detail):
    props.append(("criterion", n))
    props.append(("title", title))
    props.append(("detail", detail))


# 1 -------------------------------------------------------------------------


def test_c1_bridge_identities(request):
    start = time.perf_counter()
    ts = t_grid(512)
    worst = {"beta_bar": 0.0, "variance": 0.0, "phi0": 0.0, "phi_quad": 0.0}
    for C in CS:
        s = DriftSchedule(C)
        eb, ev = bridge_errors(s, ts)
        worst["beta_bar"] = max(worst["beta_bar"], eb)
        worst["variance"] = max(worst["variance"], ev)
        worst["phi0"] = max(worst["phi0"], abs(float(s.phi(0.0))))
        worst["phi_quad"] = max(worst["phi_quad"], phi_quadrature_error(s, ts))
    elapsed = time.perf_counter() - start
    _tag(request.node.user_properties, 1, "bridge identities",
         ", ".join(f"{k}={v:.1e}" for k, v in worst.items()) + f", {elapsed:.2f}s")
    assert worst["beta_bar"] < 1e-10
    assert worst["variance"] < 1e-8
    assert worst["phi0"] < 1e-12
    assert worst["phi_quad"] < 1e-6
    assert elapsed < 1.0


# 2 -------------------------------------------------------------------------


@pytest.mark.parametrize("C", CS)
def test_c2_closed_form_adjoint(C, request):
    start = time.perf_counter()
    s = DriftSchedule(C)
    e1, e2 = adjoint_rel_error(s, 1000), adjoint_rel_error(s, 10_000)
    order = float(np.log10(e1 / e2))
    elapsed = time.perf_counter() - start
    _tag(request.node.user_properties, 2, "backward-Euler adjoint vs closed form",
         f"C={C:g}: {e1:.1e}@1e3 {e2:.1e}@1e4 order={order:.2f}")
    assert e1 < 1e-3
    assert e2 < 1e-4
    assert abs(order - 1.0) < 0.1
    assert elapsed < 1.0


# 3, 4 ------------------------------------------------------------------------


@pytest.fixture(scope="module")
def base_stats():
    start = time.perf_counter()
    corr, term, marg = base_sde_stats(DriftSchedule(0.51), 50_000, 2000, np.random.default_rng([0, 3]))
    return corr, term, marg, time.perf_counter() - start


def test_c3_memorylessness(base_stats, request):
    corr, term, _, t_base = base_stats
    start = time.perf_counter()
    pcorr, pvar = pretrained_sde_stats(DriftSchedule(0.51), 50_000, 2000, np.random.default_rng([0, 4]))
    elapsed = t_base + time.perf_counter() - start
    _tag(request.node.user_properties, 3, "memorylessness",
         f"base corr={corr:.3f} var_rel={term:.3f}; pretrained corr={pcorr:.3f} var_err={pvar:.3f}; {elapsed:.1f}s")
    assert corr < 0.02 and term < 0.05
    assert pcorr < 0.02 and pvar < 0.03
    assert elapsed < 30.0


def test_c4_marginal_consistency(base_stats, request):
    _, _, marg, elapsed = base_stats
    _tag(request.node.user_properties, 4, "base-SDE marginal variance",
         f"max rel err over 8 nodes={marg:.4f}; {elapsed:.1f}s")
    assert marg < 0.03
    assert elapsed < 30.0


# 5 -------------------------------------------------------------------------


def test_c5_tweedie_exact(request):
    w = World.gaussian([0.0, 0.5], [[1.0, 0.3], [0.3, 0.8]])
    v = AnalyticVelocity(w)
    x = np.random.default_rng(5).standard_normal((64, 2)) * 2.0
    err = max(float(np.max(np.abs(tweedie_score(v, x, t) - analytic_score(w, x, t)))) for t in t_grid(512))
    _tag(request.node.user_properties, 5, "Tweedie score", f"analytic max err={err:.1e}")
    assert err < 1e-10


def test_c5_tweedie_trained(pretrained, request):
    net, _ = pretrained
    start = time.perf_counter()
    rng = np.random.default_rng([5, 1])
    n = 20_000
    # bulk: t in [0.05, 0.5] (score amplification t/(1-t) <= 1), x from the marginal p_t
    t = rng.uniform(0.05, 0.5, n)
    x = t[:, None] * sample_data(STD, n, rng) + (1 - t[:, None]) * rng.standard_normal((n, 1))
    rmse = float(np.sqrt(np.mean((tweedie_score(net, x, t) - analytic_score(STD, x, t)) ** 2)))
    elapsed = time.perf_counter() - start
    _tag(request.node.user_properties, 5, "Tweedie score", f"trained bulk RMSE={rmse:.4f} ({elapsed:.2f}s)")
    assert rmse < 0.05
    assert elapsed < 10.0


# 6 -------------------------------------------------------------------------


def test_c6_expansion_identity(request):
    start = time.perf_counter()
    r = np.random.default_rng(6)
    v = AnalyticVelocity(STD)
    worst = 0.0
    for C, t, x1, eps in zip(r.uniform(0.505, 10, 1000), r.uniform(0.01, 0.99, 1000),
                             r.normal(0, 2, 1000), r.normal(size=1000)):
        s = DriftSchedule(C)
        a = expand_matching_target(s, v, [[x1]], [[eps]], t)
        b = composed_matching_target(s, v, [[x1]], [[eps]], t)
        worst = max(worst, float(np.abs(a - b).max()))
    elapsed = time.perf_counter() - start
    _tag(request.node.user_properties, 6, "expansion identity", f"max err={worst:.1e}, {elapsed:.2f}s")
    assert worst < 1e-10
    assert elapsed < 1.0


# 7, 8 ----------------------------------------------------------------------


QUAD = {"kind": "quadratic", "beta": 1.0, "A": [[1.0]], "m": [0.0]}
LIN = {"kind": "linear", "beta": 0.5, "b": [1.0]}


@pytest.fixture(scope="module")
def finetuned(pretrained, tmp_path_factory):
    """EAM (quadratic, linear) and AM (quadratic) runs from the shared pretrained checkpoint."""
    root = tmp_path_factory.mktemp("acceptance")
    ckpt = root / "vpt.ckpt.json"
    pretrained[0].save(ckpt)
    runs = {}
    for key, method, rew in (("eam_quad", "eam", QUAD), ("am_quad", "am", QUAD), ("eam_lin", "eam", LIN)):
        cfg = ExperimentConfig(reward=rew, method=method, checkpoint=str(ckpt), out_dir=str(root / key))
        cfg = cfg.with_overrides(**{"train.eval_every": 100})
        cmd_finetune(cfg)
        runs[key] = root / key
    return runs


@pytest.mark.parametrize("key,expect", [("eam_quad", -0.25), ("eam_lin", 0.5)], ids=["quadratic", "linear"])
def test_c7_eam_end_to_end(finetuned, key, expect, request):
    row = read_table(finetuned[key] / "eval.csv")[0]
    w2, mr = float(row["w2"]), float(row["mean_reward"])
    rel = abs(mr - expect) / abs(expect)
    _tag(request.node.user_properties, 7, "EAM reaches tilted target",
         f"{key}: W2={w2:.4f} mean_reward={mr:.4f} (rel {rel:.3f})")
    assert int(row["n"]) == 100_000 and int(row["nfe"]) == 10
    assert w2 < 0.08
    assert rel < 0.10


def _per_iteration(run_dir):
    rows = read_table(run_dir / "timings.csv")
    return float(np.mean([float(r["simulate_s"]) + float(r["adjoint_s"]) + float(r["backward_s"]) for r in rows]))


def test_c8_am_parity_and_speed(finetuned, tmp_path, request):
    am_w2 = float(read_table(finetuned["am_quad"] / "eval.csv")[0]["w2"])
    ratio = _per_iteration(finetuned["eam_quad"]) / _per_iteration(finetuned["am_quad"])
    cmd_export([finetuned["eam_quad"], finetuned["am_quad"]], tmp_path, "plot-table", 0.12)
    ttq = {r["method"]: r for r in read_table(tmp_path / "time_to_quality.csv")}
    hit = {m: (float(r["wall_clock_s"]) if r["iter"] else float("inf")) for m, r in ttq.items()}
    _tag(request.node.user_properties, 8, "AM parity and EAM efficiency",
         f"AM W2={am_w2:.4f}, time ratio EAM/AM={ratio:.3f}, "
         f"time-to-W2<0.12 eam={hit['eam']:.2f}s am={hit['am']:.2f}s")
    assert am_w2 < 0.12
    assert ratio <= 0.5
    assert hit["eam"] < hit["am"]


# 9 -------------------------------------------------------------------------


def _rel(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))


def test_c9_gradient_integrity(request):
    start = time.perf_counter()
    h = 1e-6
    worst_p = worst_x = 0.0
    for k in range(10):
        r = np.random.default_rng([9, k])
        dim = int(r.integers(1, 4))
        hidden = tuple(int(w) for w in r.integers(4, 24, size=int(r.integers(1, 3))))
        net = MlpVelocity.init(dim, r, hidden, int(r.integers(1, 5)))
        x = r.normal(size=(8, dim))
        t = r.uniform(0.05, 0.95, 8)
        cot = r.normal(size=(8, dim))

        def loss_np(p):
            probe = net.copy()
            probe.params = p
            return float(np.sum(probe(x, t) * cot))

        def loss_tape(f):
            out = f(x, t)
            return out.tape.sum(out * cot)

        _, g = param_grad(net, loss_tape)
        coords = r.choice(net.n_params, size=min(40, net.n_params), replace=False)
        fd = np.empty(len(coords))
        for j, c in enumerate(coords):
            e = np.zeros(net.n_params)
            e[c] = h
            fd[j] = (loss_np(net.params + e) - loss_np(net.params - e)) / (2 * h)
        worst_p = max(worst_p, _rel(g[coords], fd))

        vj = input_vjp(net, x, t, cot)
        fdx = np.empty_like(x)
        for i in range(dim):
            e = np.zeros(dim)
            e[i] = h
            fdx[:, i] = np.sum((net(x + e, t) - net(x - e, t)) * cot, axis=1) / (2 * h)
        worst_x = max(worst_x, _rel(vj, fdx))
    elapsed = time.perf_counter() - start
    _tag(request.node.user_properties, 9, "autodiff vs finite differences",
         f"param rel={worst_p:.1e} input-VJP rel={worst_x:.1e}, {elapsed:.2f}s")
    assert worst_p < 1e-4
    assert worst_x < 1e-4
    assert elapsed < 10.0


# 10 ------------------------------------------------------------------------


def test_c10_beta_zero_preserves_pretrained(pretrained, request):
    net, _ = pretrained
    v_ft = net.copy()
    cfg = TrainConfig(method="eam", seed=0)
    train_eam(DriftSchedule(cfg.C), net, v_ft, RewardSpec.quadratic([[1.0]], beta=0.0), cfg, STD)
    n = 100_000
    a = sample_ode(net, n, 1, np.random.default_rng([10, 1]))
    b = sample_ode(v_ft, n, 1, np.random.default_rng([10, 1]))
    sd = a.std()
    mean_err = abs(b.mean() - a.mean()) / sd
    var_err = abs(b.var() - a.var()) / a.var()
    _tag(request.node.user_properties, 10, "null tests",
         f"beta=0 mean err={mean_err:.3f} sd, var rel err={var_err:.3f}")
    assert mean_err < 0.05
    assert var_err < 0.05


@pytest.mark.parametrize("C", CS)
def test_c10_exact_score_null(C, request):
    s = DriftSchedule(C)
    tv = s.terminal_variance()
    world = World.gaussian([0.0, 0.0], [[tv, 0.0], [0.0, tv]])
    x1 = np.random.default_rng(10).normal(0, 3, (256, 2))
    g = terminal_grad_eam(s, None, RewardSpec.linear([0.0, 0.0], beta=0.0), x1, score_mode="exact", world=world)
    err = float(np.max(np.abs(g.value)))
    _tag(request.node.user_properties, 10, "null tests", f"exact-score null C={C:g}: {err:.1e}")
    assert err < 1e-10


# 11 ------------------------------------------------------------------------


def test_c11_verify_exits_zero(request):
    res = CliRunner().invoke(main, ["verify"])
    n_pass = res.output.count(" pass\n")
    _tag(request.node.user_properties, 11, "determinism",
         f"verify exit={res.exit_code} ({n_pass} checks passed)")
    assert res.exit_code == 0, res.output


def test_c11_byte_identical_reruns(pretrained, tmp_path, request):
    ckpt = tmp_path / "vpt.ckpt.json"
    pretrained[0].save(ckpt)
    names = ("metrics.csv", "eval_progress.csv", "eval.csv", "vft.ckpt.json", "trajectories.csv")
    blobs = []
    for rep in ("a", "b"):
        cfg = ExperimentConfig(checkpoint=str(ckpt), out_dir=str(tmp_path / rep))
        cfg = cfg.with_overrides(**{"train.iterations": 50, "train.eval_every": 25, "eval.n": 10_000})
        cmd_finetune(cfg)
        blobs.append([(tmp_path / rep / n).read_bytes() for n in names])
    same = [n for n, x, y in zip(names, *blobs) if x == y]
    _tag(request.node.user_properties, 11, "determinism", f"identical files {len(same)}/{len(names)}")
    assert len(same) == len(names)
