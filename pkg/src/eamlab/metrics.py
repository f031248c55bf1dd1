"""Evaluation of samplers against analytic Gaussian targets."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .rewards import RewardSpec, reward
from .samplers import as_rng, sample_ode
from .worlds import GaussianMoments, World

EIG_FLOOR = 1e-12


def _psd_sqrt(S: np.ndarray) -> np.ndarray:
    lam, U = np.linalg.eigh(0.5 * (S + S.T))
    if lam.min() < -1e-10 * max(1.0, abs(lam).max()):
        raise ValueError("matrix is not positive semi-definite")
    return (U * np.sqrt(np.maximum(lam, EIG_FLOOR))) @ U.T


def gaussian_w2(a: GaussianMoments, b: GaussianMoments) -> float:
    """2-Wasserstein distance between Gaussians (Bures formula)."""
    if a.dim != b.dim:
        raise ValueError("dimension mismatch")
    rb = _psd_sqrt(b.cov)
    cross = _psd_sqrt(rb @ a.cov @ rb)
    d2 = float(np.sum((a.mean - b.mean) ** 2) + np.trace(a.cov + b.cov - 2.0 * cross))
    return math.sqrt(max(d2, 0.0))


@dataclass
class EvalReport:
    n: int
    mean: np.ndarray
    cov: np.ndarray
    mean_reward: float
    target: GaussianMoments | None = None
    w2: float | None = None
    clipped_eigs: int = 0
    timing: dict = field(default_factory=dict)

    def row(self) -> dict:
        d = self.mean.size
        out = {"n": self.n, "mean_reward": self.mean_reward,
               "w2": float("nan") if self.w2 is None else self.w2}
        for i in range(d):
            out[f"mean_{i}"] = float(self.mean[i])
        for i in range(d):
            for j in range(i, d):
                out[f"cov_{i}{j}"] = float(self.cov[i, j])
        out["clipped_eigs"] = self.clipped_eigs
        return out


def sample_moments(x) -> tuple[np.ndarray, np.ndarray, int]:
    """Mean and unbiased covariance; negative eigenvalues (roundoff) are clipped and counted."""
    x = np.asarray(x, dtype=float)
    cov = np.atleast_2d(np.cov(x, rowvar=False, ddof=1))
    cov = 0.5 * (cov + cov.T)
    lam, U = np.linalg.eigh(cov)
    neg = int(np.sum(lam < 0.0))
    if neg:
        cov = (U * np.maximum(lam, 0.0)) @ U.T
    return x.mean(axis=0), cov, neg


def evaluate_samples(x, rew: RewardSpec | None, target: GaussianMoments | None = None) -> EvalReport:
    mean, cov, neg = sample_moments(x)
    r = reward(rew, x) if rew is not None else np.zeros(len(x))
    mr = math.fsum(r) / len(r)
    w2 = None
    if target is not None:
        w2 = gaussian_w2(GaussianMoments(mean, cov + EIG_FLOOR * np.eye(mean.size)), target)
    return EvalReport(len(x), mean, cov, mr, target, w2, neg)


def evaluate_sampler(v_ft, world: World, rew: RewardSpec | None, target: GaussianMoments | None,
                     n: int, ode_steps: int, rng) -> EvalReport:
    """ODE-sample ``n`` endpoints from N(0, I) and score them."""
    if n < 1000:
        raise ValueError("evaluation needs n >= 1000")
    gen, _ = as_rng(rng)
    x = sample_ode(v_ft, n, world.dim, gen, ode_steps)
    return evaluate_samples(x, rew, target)
