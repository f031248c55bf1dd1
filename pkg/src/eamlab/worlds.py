"""Toy data distributions with closed-form oracles along the linear path.

Along ``X_t = t X_1 + (1 - t) eps`` with ``X_1 ~ N(mu, Sigma)`` the marginal is
``N(t mu, t^2 Sigma + (1-t)^2 I)``; velocity and score are diagonal in the
eigenbasis of Sigma, which is how they are evaluated here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rewards import RewardSpec


@dataclass(frozen=True)
class GaussianMoments:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"covariance shape {cov.shape} does not match mean {mean.shape}")
        if np.max(np.abs(cov - cov.T), initial=0.0) > 1e-12:
            raise ValueError("covariance must be symmetric")
        if np.min(np.linalg.eigvalsh(cov)) <= 0.0:
            raise ValueError("covariance must be positive definite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    @classmethod
    def from_samples(cls, x) -> "GaussianMoments":
        """Empirical moments with the unbiased (n-1) covariance."""
        x = np.asarray(x, dtype=float)
        cov = np.atleast_2d(np.cov(x, rowvar=False, ddof=1))
        return cls(x.mean(axis=0), 0.5 * (cov + cov.T))

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "cov": self.cov.tolist()}


@dataclass(frozen=True)
class World:
    """``gaussian`` has one component; ``gaussian_mixture`` several, weights summing to 1."""

    variant: str
    components: tuple

    def __post_init__(self):
        if self.variant not in ("gaussian", "gaussian_mixture"):
            raise ValueError(f"unknown world variant {self.variant!r}")
        comps = tuple((float(w), g) for w, g in self.components)
        if not comps:
            raise ValueError("world needs at least one component")
        if any(w <= 0.0 for w, _ in comps):
            raise ValueError("mixture weights must be positive")
        if abs(sum(w for w, _ in comps) - 1.0) > 1e-12:
            raise ValueError("mixture weights must sum to 1")
        if len({g.dim for _, g in comps}) != 1:
            raise ValueError("components disagree on dimension")
        if self.variant == "gaussian" and len(comps) != 1:
            raise ValueError("gaussian world has exactly one component")
        object.__setattr__(self, "components", comps)

    @classmethod
    def gaussian(cls, mean, cov) -> "World":
        return cls("gaussian", ((1.0, GaussianMoments(mean, cov)),))

    @classmethod
    def mixture(cls, weights, means, covs) -> "World":
        return cls(
            "gaussian_mixture",
            tuple((w, GaussianMoments(m, c)) for w, m, c in zip(weights, means, covs)),
        )

    @property
    def dim(self) -> int:
        return self.components[0][1].dim

    @property
    def moments(self) -> GaussianMoments:
        """Overall mean/covariance (exact for the single Gaussian)."""
        mean = sum(w * g.mean for w, g in self.components)
        cov = sum(w * (g.cov + np.outer(g.mean - mean, g.mean - mean)) for w, g in self.components)
        return GaussianMoments(mean, 0.5 * (cov + cov.T))

    def single(self) -> GaussianMoments:
        if self.variant != "gaussian":
            raise ValueError("analytic oracle is only available for a single Gaussian world")
        return self.components[0][1]

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "components": [{"weight": w, **g.to_dict()} for w, g in self.components],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "World":
        extra = set(d) - {"variant", "components"}
        if extra:
            raise ValueError(f"unknown world keys: {sorted(extra)}")
        comps = []
        for c in d["components"]:
            bad = set(c) - {"weight", "mean", "cov"}
            if bad:
                raise ValueError(f"unknown world component keys: {sorted(bad)}")
            comps.append((c.get("weight", 1.0), GaussianMoments(c["mean"], c["cov"])))
        return cls(d["variant"], tuple(comps))


def sample_data(world: World, n: int, rng: np.random.Generator) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be >= 1")
    weights = np.array([w for w, _ in world.components])
    if len(weights) == 1:
        labels = np.zeros(n, dtype=int)
    else:
        labels = rng.choice(len(weights), size=n, p=weights)
    z = rng.standard_normal((n, world.dim))
    out = np.empty((n, world.dim))
    for k, (_, g) in enumerate(world.components):
        idx = labels == k
        L = np.linalg.cholesky(g.cov)
        out[idx] = g.mean + z[idx] @ L.T
    return out


def _eig(g: GaussianMoments):
    lam, U = np.linalg.eigh(g.cov)
    return lam, U


def _time_col(t, n):
    t = np.asarray(t, dtype=float)
    if t.ndim == 0:
        return np.full((n, 1), float(t))
    return t.reshape(n, 1)


def analytic_velocity(world: World, x, t) -> np.ndarray:
    """E[X_1 - eps | X_t = x] for a Gaussian world; rows of x are states."""
    g = world.single()
    x = np.atleast_2d(np.asarray(x, dtype=float))
    tc = _time_col(t, x.shape[0])
    if np.any(tc < 0.0) or np.any(tc > 1.0):
        raise ValueError("analytic_velocity requires 0 <= t <= 1")
    lam, U = _eig(g)
    y = (x - tc * g.mean) @ U
    k = (tc * lam - (1.0 - tc)) / (tc * tc * lam + (1.0 - tc) ** 2)
    return g.mean + (k * y) @ U.T


def analytic_score(world: World, x, t) -> np.ndarray:
    """grad log p_t(x) for the linear-path marginal of a Gaussian world."""
    g = world.single()
    x = np.atleast_2d(np.asarray(x, dtype=float))
    tc = _time_col(t, x.shape[0])
    if np.any(tc <= 0.0) or np.any(tc > 1.0):
        raise ValueError("analytic_score requires 0 < t <= 1")
    lam, U = _eig(g)
    y = (x - tc * g.mean) @ U
    return -(y / (tc * tc * lam + (1.0 - tc) ** 2)) @ U.T


class AnalyticVelocity:
    """Callable velocity field ``v(x, t)`` backed by a Gaussian world."""

    def __init__(self, world: World):
        world.single()
        self.world = world
        self.dim = world.dim

    def __call__(self, x, t):
        return analytic_velocity(self.world, x, t)

    def vjp(self, x, t, cot):
        # the Jacobian U diag(k) U^T is symmetric and independent of x
        g = self.world.single()
        cot = np.atleast_2d(np.asarray(cot, dtype=float))
        tc = _time_col(t, cot.shape[0])
        lam, U = _eig(g)
        k = (tc * lam - (1.0 - tc)) / (tc * tc * lam + (1.0 - tc) ** 2)
        return (k * (cot @ U)) @ U.T


def tilted_target(world: World, reward: RewardSpec) -> GaussianMoments:
    """Moments of p*(x) ~ exp(beta r(x)) p_data(x) for quadratic/linear rewards."""
    g = world.single()
    A, h, _ = reward.quadratic_form()
    beta = reward.beta
    prec0 = np.linalg.inv(g.cov)
    P = prec0 + beta * A
    P = 0.5 * (P + P.T)
    if np.min(np.linalg.eigvalsh(P)) <= 0.0:
        raise ValueError("tilted precision is not positive definite (beta too negative)")
    cov = np.linalg.inv(P)
    mean = cov @ (prec0 @ g.mean + beta * h)
    return GaussianMoments(mean, 0.5 * (cov + cov.T))
