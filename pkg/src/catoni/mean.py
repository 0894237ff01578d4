"""Catoni location estimation.

The estimator solves  sum_i phi(alpha * (X_i - theta)) = 0  for theta.  With a
bounded influence the estimating function can vanish on an interval, so the
estimate is defined as the midpoint of the near-zero plateau
[sup{theta: g > eps_g}, inf{theta: g < -eps_g}] with eps_g = n * alpha * tol,
located by two one-sided bisections.  The self-normalised variant rescales by
the sample standard deviation so no scale needs to be known.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DegenerateSampleError, DomainError, NonConvergenceError
from .influence import InfluenceSpec, wide_influence
from .specialfn import std_normal_quantile

__all__ = [
    "MeanConfig",
    "MeanEstimate",
    "ConfidenceInterval",
    "as_sample",
    "catoni_g",
    "solve_mean",
    "solve_self_normalized",
    "bias_bound",
    "build_ci",
]


def as_sample(values) -> np.ndarray:
    """Validate and convert raw data to a 1-d float array."""
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1 or arr.size < 1:
        raise ValueError("sample must be one-dimensional with n >= 1")
    if not np.all(np.isfinite(arr)):
        raise ValueError("sample entries must be finite")
    return arr


@dataclass(frozen=True)
class MeanConfig:
    """Solver configuration.

    Exactly one of ``alpha`` (the tuning value used directly) or the a_n rule
    applies; ``a_n=None`` selects the default a_n = n^(-1/2).  The known-scale
    solver uses alpha = a_n / sigma, the self-normalised one a_n / sigma_hat.
    """

    phi: InfluenceSpec = wide_influence()
    alpha: Optional[float] = None
    a_n: Optional[float] = None
    tol: float = 1e-10
    max_iter: int = 200

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.alpha is not None and self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.alpha is not None and self.a_n is not None:
            raise ValueError("give either alpha or a_n, not both")
        if self.a_n is not None and self.a_n <= 0:
            raise ValueError("a_n must be positive")

    def a_n_value(self, n: int) -> float:
        return self.a_n if self.a_n is not None else n ** -0.5


@dataclass(frozen=True)
class MeanEstimate:
    theta_hat: float
    bracket: tuple[float, float]
    iterations: int
    g_residual: float
    sigma_used: float
    variant: str  # "known-scale" | "self-normalized"


@dataclass(frozen=True)
class ConfidenceInterval:
    lo: float
    hi: float
    level: float
    bias_allowance: float


def catoni_g(values, alpha: float, phi: InfluenceSpec, theta: float) -> float:
    """Estimating function sum_i phi(alpha*(X_i - theta)); nonincreasing in theta."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    x = as_sample(values)
    return float(np.sum(phi.fn(alpha * (x - theta))))


def _edge_bisect(g, lo, hi, threshold, above, tol, max_iter):
    """Locate the crossing of g over `threshold` to within `tol`.

    With above=True the invariant is g(a) > threshold >= g(b); with
    above=False it is g(a) >= threshold > g(b).  Returns (a, b, evals).
    """
    a, b = lo, hi
    evals = 0
    while b - a > tol:
        if evals >= max_iter:
            raise NonConvergenceError(
                "bisection exhausted max_iter", bracket=(a, b))
        mid = 0.5 * (a + b)
        if mid <= a or mid >= b:  # float resolution limit
            break
        gm = g(mid)
        evals += 1
        keep_left = gm > threshold if above else gm >= threshold
        if keep_left:
            a = mid
        else:
            b = mid
    return a, b, evals


def _solve_plateau(values: np.ndarray, alpha: float, phi: InfluenceSpec,
                   tol: float, max_iter: int):
    n = values.size
    eps_g = n * alpha * tol
    lo0 = float(values.min()) - tol
    hi0 = float(values.max()) + tol
    g = lambda t: float(np.sum(phi.fn(alpha * (values - t))))

    evals = 0
    # Left plateau edge: sup{theta : g(theta) > eps_g}.
    if g(lo0) <= eps_g:
        left = (lo0, lo0)
        evals += 1
    else:
        a, b, k = _edge_bisect(g, lo0, hi0, eps_g, True, tol, max_iter)
        left = (a, b)
        evals += k + 1
    # Right plateau edge: inf{theta : g(theta) < -eps_g}.
    if g(hi0) >= -eps_g:
        right = (hi0, hi0)
        evals += 1
    else:
        a, b, k = _edge_bisect(g, lo0, hi0, -eps_g, False, tol, max_iter)
        right = (a, b)
        evals += k + 1

    theta = 0.25 * (left[0] + left[1] + right[0] + right[1])
    bracket = (0.5 * (left[0] + right[0]), 0.5 * (left[1] + right[1]))
    return theta, bracket, evals, g(theta)


def solve_mean(values, config: MeanConfig, sigma: Optional[float] = None) -> MeanEstimate:
    """Known-scale Catoni location estimate.

    ``sigma`` must be supplied when the a_n rule is used (alpha = a_n/sigma);
    it also populates ``sigma_used`` for downstream interval construction.
    """
    x = as_sample(values)
    config.phi.require_usable()
    if config.alpha is not None:
        alpha = config.alpha
        sigma_used = sigma if sigma is not None else float(np.std(x, ddof=1)) if x.size > 1 else 0.0
    else:
        if sigma is None or sigma <= 0:
            raise ValueError("a_n rule needs a positive known sigma")
        alpha = config.a_n_value(x.size) / sigma
        sigma_used = sigma
    theta, bracket, evals, resid = _solve_plateau(
        x, alpha, config.phi, config.tol, config.max_iter)
    return MeanEstimate(theta_hat=theta, bracket=bracket, iterations=evals,
                        g_residual=resid, sigma_used=float(sigma_used),
                        variant="known-scale")


def solve_self_normalized(values, config: MeanConfig) -> MeanEstimate:
    """Self-normalised variant: scale supplied by the sample standard
    deviation, so the root solves sum phi(a_n (X_i - theta)/sigma_hat) = 0."""
    x = as_sample(values)
    config.phi.require_usable()
    if x.size < 2:
        raise ValueError("self-normalised estimation needs n >= 2")
    if config.alpha is not None:
        raise ValueError("self-normalised variant is tuned by a_n, not alpha")
    sigma_hat = float(np.std(x, ddof=1))
    if sigma_hat == 0.0:
        raise DegenerateSampleError(
            "sample standard deviation is zero; the estimating equation is "
            "degenerate (callers may fall back to the sample mean)")
    alpha = config.a_n_value(x.size) / sigma_hat
    theta, bracket, evals, resid = _solve_plateau(
        x, alpha, config.phi, config.tol, config.max_iter)
    return MeanEstimate(theta_hat=theta, bracket=bracket, iterations=evals,
                        g_residual=resid, sigma_used=sigma_hat,
                        variant="self-normalized")


def bias_bound(alpha: float, sigma: float) -> float:
    """Worst-case offset of the estimation target from the true mean:
    alpha*sigma^2 / sqrt(1 - alpha^2 sigma^2), valid for alpha*sigma < 1."""
    if alpha <= 0 or sigma <= 0:
        raise ValueError("alpha and sigma must be positive")
    prod = alpha * sigma
    if prod >= 1.0:
        raise DomainError("bias bound is vacuous for alpha*sigma >= 1")
    return alpha * sigma * sigma / math.sqrt(1.0 - prod * prod)


def build_ci(est: MeanEstimate, n: int, level: float,
             include_bias: bool = False,
             alpha: Optional[float] = None) -> ConfidenceInterval:
    """Normal-approximation interval theta_hat +- z * sigma_used / sqrt(n).

    With ``include_bias`` the interval is widened on both sides by
    bias_bound(alpha, sigma_used) to cover recentring from the estimation
    target to the true mean.
    """
    if not (0.0 < level < 1.0):
        raise ValueError("level must lie in (0, 1)")
    if n < 1:
        raise ValueError("n must be >= 1")
    if est.sigma_used <= 0:
        raise ValueError("interval needs a positive scale")
    z = std_normal_quantile(0.5 * (1.0 + level))
    half = z * est.sigma_used / math.sqrt(n)
    allowance = 0.0
    if include_bias:
        if alpha is None:
            raise ValueError("include_bias requires the tuning alpha")
        allowance = bias_bound(alpha, est.sigma_used)
    return ConfidenceInterval(lo=est.theta_hat - half - allowance,
                              hi=est.theta_hat + half + allowance,
                              level=level, bias_allowance=allowance)
