"""Multi-dimensional Catoni-type regression.

The coefficient estimate solves the estimating equation

    h(beta) = (1/(n alpha)) sum_i x_i phi(alpha (y_i - x_i' beta)) = 0

by damped Newton iteration from the least-squares solution.  The module also
computes Gram-matrix diagnostics, the non-asymptotic error-radius certificate
(Delta^2, beta_0), the consistency-rate tuning rule for alpha, and the
standardised statistic sqrt(n) S_n^{1/2} (beta_hat - beta* - delta_n)/sigma_tilde
whose law is approximately standard multivariate normal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DomainError, NonConvergenceError, SingularGramError
from .influence import InfluenceSpec

__all__ = [
    "RegressionProblem",
    "GramStats",
    "RegressionConfig",
    "RegressionFit",
    "FeasibilityReport",
    "StandardizedStat",
    "h_value",
    "gram_stats",
    "solve_regression",
    "default_alpha",
    "feasibility",
    "standardize",
    "delta_n_from_scalar",
]

_GRAM_SINGULAR_TOL = 1e-10
_MIN_STEP = 2.0 ** -20


@dataclass(frozen=True)
class RegressionProblem:
    X: np.ndarray  # (n, p), rows are covariate vectors
    y: np.ndarray  # (n,)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
            raise ValueError("X must be (n, p) and y length n")
        n, p = X.shape
        if not (n >= p >= 1):
            raise ValueError("need n >= p >= 1")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("X and y must be finite")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class GramStats:
    S_n: np.ndarray
    lambda_min: float
    lambda_max: float
    L_n: float  # max row norm


@dataclass(frozen=True)
class RegressionConfig:
    """Either a direct ``alpha`` or the auto rule (epsilon, sigma_bar_sq);
    with sigma_bar_sq=None the auto rule plugs in the mean squared
    least-squares residual with denominator n - p."""

    phi: InfluenceSpec
    alpha: Optional[float] = None
    epsilon: Optional[float] = None
    sigma_bar_sq: Optional[float] = None
    tol: float = 1e-10
    max_iter: int = 100
    damping: bool = True

    def __post_init__(self):
        if not math.isfinite(self.phi.k0) or self.phi.k1 is None:
            raise ValueError("regression needs an influence with finite k0, k1")
        if self.alpha is None and self.epsilon is None:
            raise ValueError("give alpha or epsilon")
        if self.alpha is not None and self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.epsilon is not None and not (0.0 < self.epsilon < 1.0):
            raise ValueError("epsilon must lie in (0, 1)")
        if self.tol <= 0:
            raise ValueError("tol must be positive")


@dataclass(frozen=True)
class RegressionFit:
    beta_hat: np.ndarray
    iterations: int
    h_norm: float
    converged: bool
    alpha_used: float
    gram: GramStats
    sigma_bar_sq_used: float
    sigma_bar_sq_source: str  # "known" | "residual-estimated" | "unused"


@dataclass(frozen=True)
class FeasibilityReport:
    delta_sq: float
    beta_0: Optional[float]
    feasible: bool
    epsilon: float
    sigma_bar_sq: float


@dataclass(frozen=True)
class StandardizedStat:
    T: np.ndarray
    delta_n: np.ndarray
    sigma_tilde: float


def h_value(problem: RegressionProblem, beta, alpha: float,
            phi: InfluenceSpec) -> np.ndarray:
    """(1/(n alpha)) sum_i x_i phi(alpha (y_i - x_i' beta))."""
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (problem.p,):
        raise ValueError("beta has wrong length")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    r = problem.y - problem.X @ beta
    return problem.X.T @ phi.fn(alpha * r) / (problem.n * alpha)


def gram_stats(X) -> GramStats:
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    S = X.T @ X / n
    S = 0.5 * (S + S.T)
    evals = np.linalg.eigvalsh(S)
    L = float(np.max(np.linalg.norm(X, axis=1)))
    return GramStats(S_n=S, lambda_min=float(evals[0]),
                     lambda_max=float(evals[-1]), L_n=L)


def default_alpha(n: int, sigma_bar_sq: float, epsilon: float) -> float:
    """Consistency-rate tuning alpha = sqrt(2 log(1/eps) / (n sigma_bar^2))."""
    if n < 1 or sigma_bar_sq <= 0 or not (0.0 < epsilon < 1.0):
        raise ValueError("need n >= 1, sigma_bar_sq > 0, epsilon in (0, 1)")
    return math.sqrt(2.0 * math.log(1.0 / epsilon) / (n * sigma_bar_sq))


def solve_regression(problem: RegressionProblem,
                     config: RegressionConfig) -> RegressionFit:
    """Damped Newton on h from the least-squares initialiser.

    The Jacobian is -(1/n) sum x_i x_i' phi'(alpha r_i); when its influence
    weights annihilate it the fixed matrix -S_n is used for that step.
    """
    config.phi.require_usable()
    if not config.phi.has_derivative:
        raise ValueError("regression requires an influence with a derivative")
    gram = gram_stats(problem.X)
    if gram.lambda_min <= _GRAM_SINGULAR_TOL:
        raise SingularGramError(
            f"Gram matrix numerically singular (lambda_min={gram.lambda_min:.3e})")

    X, y, n = problem.X, problem.y, problem.n
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    ols_resid = y - X @ beta
    dof = max(n - problem.p, 1)
    sig_source = "unused"
    sig_sq = float(ols_resid @ ols_resid) / dof
    if config.alpha is not None:
        alpha = config.alpha
    else:
        if config.sigma_bar_sq is not None:
            sig_sq = config.sigma_bar_sq
            sig_source = "known"
        else:
            sig_source = "residual-estimated"
        alpha = default_alpha(n, sig_sq, config.epsilon)

    def h_of(b):
        return X.T @ config.phi.fn(alpha * (y - X @ b)) / (n * alpha)

    h = h_of(beta)
    h_norm = float(np.linalg.norm(h))
    iters = 0
    while h_norm > config.tol and iters < config.max_iter:
        w = config.phi.deriv(alpha * (y - X @ beta))
        J = -(X * w[:, None]).T @ X / n
        try:
            step = np.linalg.solve(J, h)
        except np.linalg.LinAlgError:
            step = np.linalg.solve(-gram.S_n, h)
        s = 1.0
        while True:
            cand = beta - s * step
            h_cand = h_of(cand)
            h_cand_norm = float(np.linalg.norm(h_cand))
            if h_cand_norm < h_norm or not config.damping:
                beta, h, h_norm = cand, h_cand, h_cand_norm
                break
            s *= 0.5
            if s < _MIN_STEP:
                raise NonConvergenceError(
                    "damped Newton stalled: no descent step found",
                    diagnostics={"h_norm": h_norm, "iterations": iters,
                                 "alpha": alpha})
        iters += 1
    if h_norm > config.tol:
        raise NonConvergenceError(
            f"no convergence after {iters} iterations (|h| = {h_norm:.3e})",
            diagnostics={"h_norm": h_norm, "iterations": iters, "alpha": alpha})
    return RegressionFit(beta_hat=beta, iterations=iters, h_norm=h_norm,
                         converged=True, alpha_used=alpha, gram=gram,
                         sigma_bar_sq_used=sig_sq,
                         sigma_bar_sq_source=sig_source)


def feasibility(gram: GramStats, sigma_bar_sq: float, alpha: float,
                epsilon: float, n: int) -> FeasibilityReport:
    """Error-radius certificate.  With c_l, c_u the empirical eigenvalue
    extremes and L_n the max row norm:

        Delta^2 = 1 - (L_n^2/c_l^2)(alpha^2 c_u sigma_bar^2
                                     + 2 c_u log(1/eps)/n)

    and, when Delta^2 >= 0, the radius
    beta_0 = (L_n/c_l)(alpha sigma_bar^2 + 2 log(1/eps)/(n alpha))/(1+Delta).
    """
    if gram.lambda_min <= 0:
        raise DomainError("feasibility needs lambda_min > 0")
    if sigma_bar_sq <= 0 or alpha <= 0 or not (0.0 < epsilon < 1.0) or n < 1:
        raise ValueError("invalid feasibility inputs")
    c_l, c_u, L = gram.lambda_min, gram.lambda_max, gram.L_n
    log_term = math.log(1.0 / epsilon)
    delta_sq = 1.0 - (L * L / (c_l * c_l)) * (
        alpha * alpha * c_u * sigma_bar_sq + 2.0 * c_u * log_term / n)
    if delta_sq >= 0.0:
        beta_0 = (L / c_l) * (alpha * sigma_bar_sq
                              + 2.0 * log_term / (n * alpha)) \
            / (1.0 + math.sqrt(delta_sq))
    else:
        beta_0 = None
    return FeasibilityReport(delta_sq=delta_sq, beta_0=beta_0,
                             feasible=delta_sq >= 0.0, epsilon=epsilon,
                             sigma_bar_sq=sigma_bar_sq)


def _sym_sqrt(S: np.ndarray) -> np.ndarray:
    evals, vecs = np.linalg.eigh(0.5 * (S + S.T))
    if evals[0] <= 0.0:
        raise DomainError("matrix is not positive definite")
    return (vecs * np.sqrt(evals)) @ vecs.T


def standardize(beta_hat, beta_star, delta_n, sigma_tilde: float,
                S_n, n: int) -> StandardizedStat:
    """sqrt(n) S_n^{1/2} (beta_hat - beta* - delta_n) / sigma_tilde."""
    if sigma_tilde <= 0:
        raise ValueError("sigma_tilde must be positive")
    beta_hat = np.asarray(beta_hat, dtype=float)
    beta_star = np.asarray(beta_star, dtype=float)
    delta_n = np.asarray(delta_n, dtype=float)
    root = _sym_sqrt(np.asarray(S_n, dtype=float))
    T = math.sqrt(n) * root @ (beta_hat - beta_star - delta_n) / sigma_tilde
    return StandardizedStat(T=T, delta_n=delta_n, sigma_tilde=float(sigma_tilde))


def delta_n_from_scalar(X, m: float, alpha: float, S_n) -> np.ndarray:
    """Bias direction S_n^{-1} (m/(n alpha)) sum_i x_i for i.i.d. noise with
    E phi(alpha eps) = m."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    X = np.asarray(X, dtype=float)
    S = np.asarray(S_n, dtype=float)
    evals = np.linalg.eigvalsh(0.5 * (S + S.T))
    if evals[0] <= _GRAM_SINGULAR_TOL * max(1.0, evals[-1]):
        raise DomainError("S_n is singular")
    rhs = X.sum(axis=0) * (m / (X.shape[0] * alpha))
    return np.linalg.solve(S, rhs)
