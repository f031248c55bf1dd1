import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eamlab.nn import AdamW, MlpVelocity, Tape, TapeError, input_vjp, param_grad, time_features
from eamlab.training import _sq_loss


def _net(seed, dim=2, hidden=(16, 16), n_freq=3):
    return MlpVelocity.init(dim, np.random.default_rng(seed), hidden, n_freq)


def _batch(seed, n=7, dim=2):
    r = np.random.default_rng(seed + 1000)
    return r.normal(size=(n, dim)), r.uniform(0.05, 0.95, n)


# five smooth losses of the network output
LOSSES = [
    lambda tape, out, r: tape.sum(tape.square(out)),
    lambda tape, out, r: tape.sum(out * r),
    lambda tape, out, r: tape.mean(tape.tanh(out)),
    lambda tape, out, r: tape.sum(tape.square(out - r)) * 0.5,
    lambda tape, out, r: tape.sum(tape.silu(out) * r),
]
NP_LOSSES = [
    lambda out, r: np.sum(out**2),
    lambda out, r: np.sum(out * r),
    lambda out, r: np.mean(np.tanh(out)),
    lambda out, r: 0.5 * np.sum((out - r) ** 2),
    lambda out, r: np.sum(out / (1 + np.exp(-out)) * r),
]


def test_zero_last_layer_outputs_zero():
    net = MlpVelocity.init(3, np.random.default_rng(0), zero_last=True)
    x = np.random.default_rng(1).normal(size=(5, 3))
    assert np.all(net(x, 0.3) == 0.0)


def test_forward_deterministic_and_pure():
    net = _net(0)
    x, t = _batch(0)
    p = net.params.copy()
    a, b = net(x, t), net(x, t)
    assert np.array_equal(a, b)
    assert np.array_equal(net.params, p)


def test_forward_shape_errors():
    net = _net(0)
    with pytest.raises(ValueError):
        net(np.zeros((4, 3)), 0.5)
    with pytest.raises(ValueError):
        net(np.zeros((4, 2)), np.zeros(3))
    with pytest.raises(ValueError):
        net(np.zeros((4, 2)), np.nan)


def test_tape_forward_matches_numpy_bitwise():
    net = _net(3)
    x, t = _batch(3)
    tape = Tape()
    out = net.forward_tape(tape, net.bind(tape), x, t)
    assert np.array_equal(out.value, net(x, t))


@pytest.mark.parametrize("seed", range(10))
@pytest.mark.parametrize("k", range(5))
def test_param_grad_matches_finite_differences(seed, k):
    net = _net(seed)
    x, t = _batch(seed)
    r = np.random.default_rng(seed + 7).normal(size=(len(x), 2))
    _, g = param_grad(net, lambda f: _apply_loss(LOSSES[k], f(x, t), r))
    idx = np.random.default_rng(seed + 99).choice(net.n_params, 50, replace=False)
    h = 1e-5
    for i in idx:
        p = net.params.copy()
        p[i] += h
        lp = NP_LOSSES[k](MlpVelocity(net.dim, net.hidden, net.n_freq, p)(x, t), r)
        p[i] -= 2 * h
        lm = NP_LOSSES[k](MlpVelocity(net.dim, net.hidden, net.n_freq, p)(x, t), r)
        fd = (lp - lm) / (2 * h)
        assert abs(g[i] - fd) <= 1e-4 * max(abs(fd), 1e-3), (i, g[i], fd)


def _apply_loss(loss, out, r):
    return loss(out.tape, out, r)


def test_param_grad_linear_net_normal_equations():
    # no hidden layer: v = [x, phi(t)] W + b, loss 1/2 sum ||v - y||^2
    net = MlpVelocity.init(2, np.random.default_rng(5), hidden=(), n_freq=2)
    x, t = _batch(5)
    y = np.random.default_rng(6).normal(size=x.shape)
    _, g = param_grad(net, lambda f: _sq_loss(f(x, t), y, np.full(len(x), float(len(x)))))
    Z = np.hstack([x, time_features(t, len(x), 2)])
    W, b = net.layers()[0]
    resid = Z @ W + b - y
    expect = np.concatenate([(Z.T @ resid).ravel(), resid.sum(axis=0)])
    np.testing.assert_allclose(g, expect, atol=1e-10, rtol=0)


def test_constant_loss_zero_grad():
    net = _net(1)
    x, t = _batch(1)
    val, g = param_grad(net, lambda f: f(x, t).tape.sum(f(x, t) * 0.0) + 3.0)
    assert val == 3.0
    assert np.all(g == 0.0)


def test_param_grad_nonfinite_loss():
    net = _net(1)
    x, t = _batch(1)
    with pytest.raises(FloatingPointError), np.errstate(invalid="ignore"):
        param_grad(net, lambda f: f(x, t).tape.sum(f(x, t) * np.inf))


def test_input_vjp_linear_map():
    net = MlpVelocity.init(3, np.random.default_rng(2), hidden=(), n_freq=1)
    A = net.layers()[0][0][:3]  # x-rows of the weight: v = x A + ...
    x = np.random.default_rng(3).normal(size=(4, 3))
    cot = np.random.default_rng(4).normal(size=(4, 3))
    np.testing.assert_allclose(input_vjp(net, x, 0.4, cot), cot @ A.T, atol=1e-14)
    assert np.all(input_vjp(net, x, 0.4, np.zeros_like(x)) == 0.0)


@pytest.mark.parametrize("seed", range(10))
def test_input_vjp_matches_fd_jvp(seed):
    net = _net(seed)
    x, t = _batch(seed)
    r = np.random.default_rng(seed + 50)
    v, u = r.normal(size=x.shape), r.normal(size=x.shape)
    h = 1e-6
    jvp = (net(x + h * u, t) - net(x - h * u, t)) / (2 * h)
    lhs = np.sum(input_vjp(net, x, t, v) * u, axis=1)
    rhs = np.sum(v * jvp, axis=1)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-4, atol=1e-8)


def test_input_vjp_rejects_nonfinite():
    net = _net(0)
    with pytest.raises(ValueError):
        input_vjp(net, np.full((2, 2), np.nan), 0.5, np.ones((2, 2)))


def test_backward_twice_is_error():
    tape = Tape()
    a = tape.leaf(np.array([[1.0, 2.0]]))
    out = tape.sum(tape.square(a))
    tape.backward(out)
    np.testing.assert_allclose(a.grad, [[2.0, 4.0]])
    with pytest.raises(TapeError):
        tape.backward(out)


def test_tape_topological_order():
    tape = Tape()
    a = tape.leaf(np.ones((2, 2)))
    b = tape.silu(a @ a)
    tape.sum(b)
    for k, (var, parents, _) in enumerate(tape.nodes):
        assert var.index == k
        assert all(p.index < k for p in parents)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), dim=st.integers(1, 4), n_freq=st.integers(1, 8))
def test_serialization_round_trip_bit_exact(seed, dim, n_freq, tmp_path_factory):
    net = MlpVelocity.init(dim, np.random.default_rng(seed), (8, 5), n_freq)
    net.params = net.params * np.random.default_rng(seed).lognormal(0, 5, net.n_params)
    back = MlpVelocity.from_text(net.to_text())
    assert back.widths == net.widths
    assert np.array_equal(back.params, net.params)
    p = tmp_path_factory.mktemp("ck") / "net.json"
    net.save(p)
    assert np.array_equal(MlpVelocity.load(p).params, net.params)


def test_adamw_zero_grad_no_decay():
    opt = AdamW(lr=0.1)
    p = np.array([1.0, -2.0])
    q = opt.step(p, np.zeros(2))
    assert np.array_equal(p, q)
    assert opt.step_count == 1


def test_adamw_single_step_closed_form():
    opt = AdamW(lr=0.1, beta1=0.0, beta2=0.0)
    q = opt.step(np.array([0.5]), np.array([1.0]))
    # m_hat = 1, v_hat = 1: step = lr / (1 + eps)
    assert q[0] == pytest.approx(0.5 - 0.1 / (1 + 1e-8), abs=1e-15)


def test_adamw_deterministic_and_counts():
    def run():
        opt = AdamW(lr=1e-2, weight_decay=0.1)
        p = np.linspace(-1, 1, 5)
        r = np.random.default_rng(0)
        for _ in range(20):
            p = opt.step(p, r.normal(size=5))
        return p, opt.step_count

    (a, ka), (b, kb) = run(), run()
    assert np.array_equal(a, b) and ka == kb == 20


def test_adamw_rejects_nonfinite():
    opt = AdamW()
    with pytest.raises(FloatingPointError, match="step 1"):
        opt.step(np.zeros(3), np.array([0.0, np.nan, 1.0]))
    with pytest.raises(ValueError):
        opt.step(np.zeros(3), np.zeros(2))
