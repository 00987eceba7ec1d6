"""Gaussian position jitter and the per-slot speed chance constraint."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import gammainc, gammaln

from .physics import DomainError

CDF_TOL = 1e-10


@dataclass(frozen=True)
class JitterModel:
    sigma: float

    def __post_init__(self):
        if not (self.sigma >= 0 and math.isfinite(self.sigma)):
            raise DomainError(f"jitter sigma must be finite and >= 0, got {self.sigma}")


@dataclass(frozen=True)
class ChanceSpec:
    rho_trj: float

    def __post_init__(self):
        if not 0 < self.rho_trj < 1:
            raise DomainError(f"rho_trj must lie in (0, 1), got {self.rho_trj}")


def sample_jitter(model: JitterModel, rng: np.random.Generator) -> np.ndarray:
    if model.sigma == 0:
        return np.zeros(3)
    return rng.normal(0.0, model.sigma, size=3)


def noncentral_chi2_cdf(x: float, dof: float, nc: float, tol: float = CDF_TOL) -> float:
    """CDF of the noncentral chi-square distribution.

    Evaluated as the Poisson(nc/2) mixture of central chi-square CDFs, summed
    outward from the Poisson mode until the unsummed Poisson mass is below
    ``tol``; each mixture term is at most 1, so that mass bounds the error.
    """
    if not (math.isfinite(x) and math.isfinite(dof) and math.isfinite(nc)):
        raise DomainError("non-finite argument")
    if dof <= 0 or nc < 0:
        raise DomainError("dof must be positive and nc non-negative")
    if x <= 0:
        return 0.0
    half_nc = 0.5 * nc
    if half_nc == 0:
        return float(gammainc(0.5 * dof, 0.5 * x))
    mode = int(half_nc)
    # Poisson sd is sqrt(half_nc); 40 sd plus slack covers mass far beyond tol
    span = int(40 * math.sqrt(half_nc)) + 50
    j = np.arange(max(0, mode - span), mode + span + 1, dtype=float)
    log_w = -half_nc + j * math.log(half_nc) - gammaln(j + 1.0)
    w = np.exp(log_w)
    order = np.argsort(-w, kind="stable")
    w_sorted = w[order]
    covered = np.cumsum(w_sorted)
    n_terms = int(np.searchsorted(covered, 1.0 - tol)) + 1
    idx = order[: min(n_terms, len(order))]
    terms = w[idx] * gammainc(0.5 * dof + j[idx], 0.5 * x)
    return float(min(1.0, max(0.0, np.sum(terms))))


def speed_violation_probability(
    planned_disp: Sequence[float], model: JitterModel, limit: float
) -> float:
    """P{||planned_disp + n|| > limit} for n the difference of two slot jitters.

    Each slot's jitter is N(0, sigma^2 I) and independent of the next, so the
    displacement noise is N(0, 2 sigma^2 I) and the scaled squared norm is
    noncentral chi-square with 3 degrees of freedom.
    """
    d = np.asarray(planned_disp, dtype=float)
    if d.shape != (3,) or not np.all(np.isfinite(d)):
        raise DomainError("planned displacement must be three finite numbers")
    if not (math.isfinite(limit) and limit > 0):
        raise DomainError("limit must be positive and finite")
    norm2 = float(d @ d)
    if model.sigma == 0:
        return 1.0 if math.sqrt(norm2) > limit else 0.0
    var = 2.0 * model.sigma**2
    return 1.0 - noncentral_chi2_cdf(limit**2 / var, 3.0, norm2 / var)


def mc_violation_probability(
    planned_disp: Sequence[float],
    model: JitterModel,
    limit: float,
    n_samples: int,
    rng: np.random.Generator,
    chunk: int = 250_000,
) -> float:
    """Monte-Carlo estimate of the violation probability from explicit jitter pairs."""
    if n_samples < 1:
        raise DomainError("n_samples must be >= 1")
    d = np.asarray(planned_disp, dtype=float)
    if model.sigma == 0:
        return 1.0 if float(np.linalg.norm(d)) > limit else 0.0
    hits = 0
    left = int(n_samples)
    while left > 0:
        m = min(chunk, left)
        before = rng.normal(0.0, model.sigma, size=(m, 3))
        after = rng.normal(0.0, model.sigma, size=(m, 3))
        realized = d + after - before
        hits += int(np.count_nonzero(np.einsum("ij,ij->i", realized, realized) > limit**2))
        left -= m
    return hits / n_samples


def chance_satisfied(prob_violation: float, spec: ChanceSpec) -> bool:
    if not 0.0 <= prob_violation <= 1.0:
        raise DomainError("probability must lie in [0, 1]")
    return prob_violation <= spec.rho_trj
