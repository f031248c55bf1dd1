"""Time-conditioned MLP velocity field with a flat parameter vector."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .tape import Tape, Var

CHECKPOINT_FORMAT = "eamlab.mlp_velocity/1"


def time_features(t, n, n_freq: int) -> np.ndarray:
    """sin/cos features at frequencies pi*k/2, k = 1..n_freq; shape (n, 2*n_freq)."""
    t = np.broadcast_to(np.asarray(t, dtype=float).reshape(-1), (n,))
    w = 0.5 * np.pi * np.arange(1, n_freq + 1)
    arg = t[:, None] * w[None, :]
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=1)


def _silu(x):
    return x * (1.0 / (1.0 + np.exp(-x)))


@dataclass
class MlpVelocity:
    """v(x, t) = MLP([x, phi(t)]) with SiLU hidden activations.

    ``params`` is the single source of truth; layer weights are views into it.
    """

    dim: int
    hidden: tuple = (64, 64)
    n_freq: int = 8
    params: np.ndarray = None

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        n = self.n_params
        if self.params is None:
            self.params = np.zeros(n)
        else:
            self.params = np.asarray(self.params, dtype=float).copy()
            if self.params.shape != (n,):
                raise ValueError(f"expected {n} parameters, got {self.params.shape}")

    @property
    def widths(self) -> list[int]:
        return [self.dim + 2 * self.n_freq, *self.hidden, self.dim]

    def _shapes(self):
        w = self.widths
        for a, b in zip(w[:-1], w[1:]):
            yield (a, b), (b,)

    @property
    def n_params(self) -> int:
        return sum(a * b + b for (a, b), _ in self._shapes())

    @classmethod
    def init(cls, dim, rng, hidden=(64, 64), n_freq=8, zero_last=False):
        net = cls(dim=dim, hidden=hidden, n_freq=n_freq)
        chunks = []
        shapes = list(net._shapes())
        for i, ((a, b), _) in enumerate(shapes):
            if zero_last and i == len(shapes) - 1:
                w = np.zeros((a, b))
            else:
                w = rng.normal(0.0, 1.0 / np.sqrt(a), size=(a, b))
            chunks += [w.ravel(), np.zeros(b)]
        net.params = np.concatenate(chunks)
        return net

    def copy(self) -> "MlpVelocity":
        return MlpVelocity(self.dim, self.hidden, self.n_freq, self.params)

    def layers(self, params=None):
        p = self.params if params is None else params
        out, k = [], 0
        for (a, b), _ in self._shapes():
            w = p[k : k + a * b].reshape(a, b)
            k += a * b
            out.append((w, p[k : k + b]))
            k += b
        return out

    def _inputs(self, x, t):
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise ValueError(f"expected state batch of shape (n, {self.dim}), got {x.shape}")
        tt = np.asarray(t, dtype=float)
        if tt.ndim > 0 and tt.size not in (1, x.shape[0]):
            raise ValueError("time batch does not match state batch")
        if not np.all(np.isfinite(tt)):
            raise ValueError("non-finite time value")
        return x, time_features(tt, x.shape[0], self.n_freq)

    def __call__(self, x, t) -> np.ndarray:
        """Plain numpy forward; never touches a tape."""
        x, feats = self._inputs(x, t)
        (w0, b0), *rest = self.layers()
        # same association order as forward_tape so both paths agree bitwise
        h = x @ w0[: self.dim] + feats @ w0[self.dim :] + b0
        if rest:
            h = _silu(h)
        for i, (w, b) in enumerate(rest):
            h = h @ w + b
            if i < len(rest) - 1:
                h = _silu(h)
        return h

    forward = __call__

    def vjp(self, x, t, cot) -> np.ndarray:
        return input_vjp(self, x, t, cot)

    def forward_tape(self, tape: Tape, param_vars, x, t) -> Var:
        x_var = x if isinstance(x, Var) else tape.const(np.asarray(x, dtype=float))
        _, feats = self._inputs(x_var.value, t)
        # split first layer so gradients w.r.t. x flow without a concat primitive
        (w0, b0), *rest = param_vars
        w0x = _row_slice(tape, w0, 0, self.dim)
        w0t = _row_slice(tape, w0, self.dim, w0.shape[0])
        h = x_var @ w0x + tape.const(feats) @ w0t + b0
        if rest:
            h = tape.silu(h)
        for i, (w, b) in enumerate(rest):
            h = h @ w + b
            if i < len(rest) - 1:
                h = tape.silu(h)
        return h

    def bind(self, tape: Tape, requires_grad: bool = True):
        return [
            (tape.leaf(w, requires_grad), tape.leaf(b, requires_grad))
            for w, b in self.layers()
        ]

    @staticmethod
    def gather_grad(param_vars) -> np.ndarray:
        return np.concatenate(
            [np.concatenate([w.grad.ravel(), b.grad.ravel()]) for w, b in param_vars]
        )

    # serialization ----------------------------------------------------------

    def to_text(self) -> str:
        header = {
            "format": CHECKPOINT_FORMAT,
            "dim": self.dim,
            "widths": self.widths,
            "activation": "silu",
            "time_embedding": {"kind": "sinusoidal", "n_freq": self.n_freq,
                               "frequencies": "pi*k/2, k=1..n_freq", "order": "sin,cos"},
            "layout": "per layer: weight (in, out) row-major, then bias (out,)",
            "n_params": self.n_params,
        }
        body = ",\n".join(format(float(v), ".17g") for v in self.params)
        head = json.dumps(header, indent=1)[:-2]
        return head + ',\n "params": [\n' + body + "\n]\n}\n"

    @classmethod
    def from_text(cls, text: str) -> "MlpVelocity":
        doc = json.loads(text)
        if doc.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"unrecognized checkpoint format {doc.get('format')!r}")
        widths = doc["widths"]
        net = cls(
            dim=doc["dim"],
            hidden=tuple(widths[1:-1]),
            n_freq=doc["time_embedding"]["n_freq"],
            params=np.array(doc["params"], dtype=float),
        )
        if net.widths != widths:
            raise ValueError("checkpoint widths inconsistent with dim/n_freq")
        return net

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path) -> "MlpVelocity":
        with open(path) as fh:
            return cls.from_text(fh.read())


def _row_slice(tape: Tape, w: Var, start: int, stop: int) -> Var:
    """Rows [start, stop) of a weight matrix as a recorded op."""
    shape = w.shape

    def vjp(g):
        full = np.zeros(shape)
        full[start:stop] = g
        return (full,)

    return tape._record(w.value[start:stop], (w,), vjp)


def param_grad(net: MlpVelocity, loss_fn):
    """Value and gradient of ``loss_fn(apply)`` w.r.t. the flat parameter vector.

    ``apply(x, t)`` evaluates the network on the tape; ``loss_fn`` must return a
    scalar ``Var`` built from its outputs.
    """
    tape = Tape()
    pv = net.bind(tape)
    loss = loss_fn(lambda x, t: net.forward_tape(tape, pv, x, t))
    if not isinstance(loss, Var):
        loss = tape.const(loss)
    value = float(loss.value)
    if not np.isfinite(value):
        raise FloatingPointError(f"non-finite loss {value}")
    tape.backward(loss)
    return value, net.gather_grad(pv)


def input_vjp(net: MlpVelocity, x, t, cot) -> np.ndarray:
    """(d v / d x)^T cot per batch row, at fixed t."""
    x = np.asarray(x, dtype=float)
    cot = np.asarray(cot, dtype=float)
    if cot.shape != x.shape:
        raise ValueError("cotangent must match the state batch shape")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(cot))):
        raise ValueError("non-finite input to input_vjp")
    tape = Tape()
    pv = net.bind(tape, requires_grad=False)
    xv = tape.leaf(x)
    out = net.forward_tape(tape, pv, xv, t)
    tape.backward(tape.sum(out * cot))
    return xv.grad
