"""Differentiable rewards on R^d and the timestep weighting w(t)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

KINDS = ("quadratic", "linear", "weighted_sum")
MAX_DEPTH = 2


@dataclass(frozen=True)
class RewardSpec:
    """A reward r(x) together with its scale ``beta``.

    quadratic:    r(x) = -1/2 (x - m)^T A (x - m)
    linear:       r(x) = b^T x + c
    weighted_sum: r(x) = sum_i w_i r_i(x)   (member betas are ignored)
    """

    kind: str
    beta: float = 1.0
    A: np.ndarray = None
    m: np.ndarray = None
    b: np.ndarray = None
    c: float = 0.0
    terms: tuple = field(default=())

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown reward kind {self.kind!r}")
        if not np.isfinite(self.beta):
            raise ValueError("beta must be finite")
        if self.kind == "quadratic":
            A = np.atleast_2d(np.asarray(self.A, dtype=float))
            if A.shape[0] != A.shape[1]:
                raise ValueError("quadratic reward needs a square A")
            if np.max(np.abs(A - A.T), initial=0.0) > 1e-12:
                raise ValueError("quadratic reward A must be symmetric")
            m = np.zeros(A.shape[0]) if self.m is None else np.asarray(self.m, dtype=float).reshape(-1)
            object.__setattr__(self, "A", A)
            object.__setattr__(self, "m", m)
        elif self.kind == "linear":
            object.__setattr__(self, "b", np.asarray(self.b, dtype=float).reshape(-1))
        else:
            terms = tuple((float(w), s) for w, s in self.terms)
            if not terms:
                raise ValueError("weighted_sum needs at least one term")
            if not all(np.isfinite(w) for w, _ in terms):
                raise ValueError("weighted_sum weights must be finite")
            object.__setattr__(self, "terms", terms)
            if self.depth > MAX_DEPTH:
                raise ValueError(f"weighted_sum nesting deeper than {MAX_DEPTH}")

    @classmethod
    def quadratic(cls, A, m=None, beta=1.0):
        return cls("quadratic", beta=beta, A=A, m=m)

    @classmethod
    def linear(cls, b, beta=1.0, c=0.0):
        return cls("linear", beta=beta, b=b, c=c)

    @classmethod
    def weighted_sum(cls, terms, beta=1.0):
        return cls("weighted_sum", beta=beta, terms=tuple(terms))

    @property
    def depth(self) -> int:
        if self.kind != "weighted_sum":
            return 0
        return 1 + max(s.depth for _, s in self.terms)

    @property
    def dim(self) -> int:
        if self.kind == "quadratic":
            return self.A.shape[0]
        if self.kind == "linear":
            return self.b.shape[0]
        return self.terms[0][1].dim

    def with_beta(self, beta: float) -> "RewardSpec":
        return RewardSpec(self.kind, beta, self.A, self.m, self.b, self.c, self.terms)

    def __call__(self, x):
        return reward(self, x)

    def quadratic_form(self):
        """(A, h, c0) with r(x) = -1/2 x^T A x + h^T x + c0."""
        d = self.dim
        if self.kind == "quadratic":
            Am = self.A @ self.m
            return self.A, Am, -0.5 * float(self.m @ Am)
        if self.kind == "linear":
            return np.zeros((d, d)), self.b, float(self.c)
        A, h, c0 = np.zeros((d, d)), np.zeros(d), 0.0
        for w, s in self.terms:
            Ai, hi, ci = s.quadratic_form()
            A, h, c0 = A + w * Ai, h + w * hi, c0 + w * ci
        return A, h, c0

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "beta": self.beta}
        if self.kind == "quadratic":
            out.update(A=self.A.tolist(), m=self.m.tolist())
        elif self.kind == "linear":
            out.update(b=self.b.tolist(), c=self.c)
        else:
            out["terms"] = [[w, s.to_dict()] for w, s in self.terms]
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "RewardSpec":
        d = dict(d)
        kind = d.pop("kind")
        beta = float(d.pop("beta", 1.0))
        allowed = {"quadratic": {"A", "m"}, "linear": {"b", "c"}, "weighted_sum": {"terms"}}
        if kind not in allowed:
            raise ValueError(f"unknown reward kind {kind!r}")
        extra = set(d) - allowed[kind]
        if extra:
            raise ValueError(f"unknown reward keys for {kind}: {sorted(extra)}")
        if kind == "weighted_sum":
            terms = [(w, cls.from_dict(s)) for w, s in d["terms"]]
            return cls.weighted_sum(terms, beta=beta)
        if kind == "quadratic":
            return cls.quadratic(d["A"], d.get("m"), beta=beta)
        return cls.linear(d["b"], beta=beta, c=float(d.get("c", 0.0)))


def _batch(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x[None, :] if x.ndim == 1 else x


def reward(spec: RewardSpec, x) -> np.ndarray:
    """r(x) per row of a (n, d) batch; a 1-D x is treated as a single state."""
    xb = _batch(x)
    if spec.kind == "quadratic":
        y = xb - spec.m
        out = -0.5 * np.einsum("ni,ij,nj->n", y, spec.A, y)
    elif spec.kind == "linear":
        out = xb @ spec.b + spec.c
    else:
        out = sum(w * reward(s, xb) for w, s in spec.terms)
    return out if np.asarray(x).ndim > 1 else out[0]


def reward_grad(spec: RewardSpec, x) -> np.ndarray:
    xb = _batch(x)
    if spec.kind == "quadratic":
        out = -(xb - spec.m) @ spec.A
    elif spec.kind == "linear":
        out = np.broadcast_to(spec.b, xb.shape).copy()
    else:
        out = sum(w * reward_grad(s, xb) for w, s in spec.terms)
    return out if np.asarray(x).ndim > 1 else out[0]


def time_weight(t):
    """(reward_scale, loss_scale) = (w(t), 1/w(t)) with w(t) = (1-t)^0.9 / t^1.5."""
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0.0) or np.any(t >= 1.0):
        raise ValueError("time_weight requires t in (0, 1)")
    w = (1.0 - t) ** 0.9 / t**1.5
    inv = t**1.5 / (1.0 - t) ** 0.9
    if w.ndim == 0:
        return float(w), float(inv)
    return w, inv
