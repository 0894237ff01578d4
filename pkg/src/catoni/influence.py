"""Influence functions for Catoni-type estimation.

An admissible influence function is nondecreasing, continuous, vanishes at 0
and lies inside the logarithmic envelope

    -log(1 - x + x^2/2) <= phi(x) <= log(1 + x + x^2/2).

Two built-ins are provided: the "wide" unbounded choice
sign(x)*log(1 + |x| + x^2/2) and the "narrow" bounded choice that rides the
tightest nondecreasing selection inside the envelope (plateaus at +-log 2
for |x| >= 1).  Custom functions (callable or tabulated) are accepted after
passing the grid validation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DomainError

__all__ = [
    "InfluenceSpec",
    "EnvelopeReport",
    "wide_influence",
    "narrow_influence",
    "custom_influence",
    "custom_influence_from_table",
    "influence_by_name",
    "phi_eval",
    "phi_derivative",
    "validate_envelope",
    "lemma1_gap_bound",
    "envelope_lower",
    "envelope_upper",
]

# Absolute slack allowed when checking envelope membership on a grid.
ENVELOPE_TOL = 1e-9
# Validation window required before a custom influence may be used in solvers.
VALIDATION_RANGE = (-50.0, 50.0)
VALIDATION_STEP = 1e-3


def envelope_upper(x):
    """Upper envelope log(1 + x + x^2/2); finite for all real x."""
    x = np.asarray(x, dtype=float)
    return np.log1p(x + 0.5 * x * x)


def envelope_lower(x):
    """Lower envelope -log(1 - x + x^2/2)."""
    x = np.asarray(x, dtype=float)
    return -np.log1p(-x + 0.5 * x * x)


def _phi_wide(x):
    x = np.asarray(x, dtype=float)
    ax = np.abs(x)
    return np.sign(x) * np.log1p(ax + 0.5 * ax * ax)


def _phi_wide_deriv(x):
    x = np.asarray(x, dtype=float)
    ax = np.abs(x)
    return (1.0 + ax) / (1.0 + ax + 0.5 * ax * ax)


_LOG2 = math.log(2.0)


def _phi_narrow(x):
    # Branches: -log2 on (-inf,-1], upper envelope on [-1,0), lower envelope
    # on [0,1), +log2 on [1,inf).  Joins are continuous and C1.
    x = np.asarray(x, dtype=float)
    inner = np.clip(x, -1.0, 1.0)
    neg = np.log1p(inner + 0.5 * inner * inner)   # valid branch for x in [-1,0]
    pos = -np.log1p(-inner + 0.5 * inner * inner)  # valid branch for x in [0,1]
    out = np.where(inner < 0.0, neg, pos)
    out = np.where(x <= -1.0, -_LOG2, out)
    out = np.where(x >= 1.0, _LOG2, out)
    return out + 0.0  # normalise -0.0 at the origin


def _phi_narrow_deriv(x):
    x = np.asarray(x, dtype=float)
    ax = np.abs(x)
    core = (1.0 - ax) / (1.0 - ax + 0.5 * ax * ax)
    return np.where(ax >= 1.0, 0.0, core)


@dataclass(frozen=True)
class InfluenceSpec:
    """An influence function with its envelope certificate.

    k0 bounds |phi'| on the real line; k1 is a Lipschitz constant for phi'
    (both needed by the regression theory).  ``validated`` records whether
    the grid validation has passed; built-ins are validated by construction.
    """

    name: str
    kind: str                      # "wide" | "narrow" | "custom"
    fn: Callable[[np.ndarray], np.ndarray]
    deriv: Optional[Callable[[np.ndarray], np.ndarray]] = None
    k0: float = 1.0
    k1: Optional[float] = None
    validated: bool = field(default=False, compare=False)

    def __call__(self, x):
        return self.fn(x)

    @property
    def has_derivative(self) -> bool:
        return self.deriv is not None

    def require_usable(self) -> None:
        if self.kind == "custom" and not self.validated:
            raise DomainError(
                f"custom influence '{self.name}' has not passed envelope validation"
            )


# k1 values were pinned numerically (max |second difference of phi'| over the
# validation grid, rounded up to 3 decimals); a regression test recomputes them.
_WIDE = InfluenceSpec(name="wide", kind="wide", fn=_phi_wide,
                      deriv=_phi_wide_deriv, k0=1.0, k1=0.25, validated=True)
_NARROW = InfluenceSpec(name="narrow", kind="narrow", fn=_phi_narrow,
                        deriv=_phi_narrow_deriv, k0=1.0, k1=2.0, validated=True)


def wide_influence() -> InfluenceSpec:
    return _WIDE


def narrow_influence() -> InfluenceSpec:
    return _NARROW


@dataclass(frozen=True)
class EnvelopeReport:
    passed: bool
    first_violation_x: Optional[float]
    max_envelope_slack: float
    monotonicity_ok: bool
    slope_at_zero: float

    def __post_init__(self):
        if self.passed and self.first_violation_x is not None:
            raise ValueError("passed report must not carry a violation point")


def phi_eval(spec: InfluenceSpec, x):
    """Evaluate phi at x (scalar or array). Rejects non-finite input."""
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("phi_eval requires finite input")
    out = spec.fn(arr)
    if np.ndim(x) == 0:
        return float(out)
    return out


def phi_derivative(spec: InfluenceSpec, x):
    """Evaluate phi' at x; one-sided limits agree at branch joins."""
    if spec.deriv is None:
        raise NotImplementedError(
            f"influence '{spec.name}' does not supply a derivative"
        )
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("phi_derivative requires finite input")
    out = spec.deriv(arr)
    if np.ndim(x) == 0:
        return float(out)
    return out


def lemma1_gap_bound(x1, x2):
    """Upper bound for |phi(x1) - phi(x2) - (x1 - x2)| valid for any
    influence inside the envelope:

        log(1 + q) + |d| * (q/(1+q) + |d|),  q = x1^2 x2^2 / 2,  d = x1 - x2.
    """
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    q = 0.5 * (x1 * x1) * (x2 * x2)
    d = np.abs(x1 - x2)
    out = np.log1p(q) + d * (q / (1.0 + q) + d)
    if np.ndim(out) == 0:
        return float(out)
    return out


def validate_envelope(spec: InfluenceSpec, lo: float = VALIDATION_RANGE[0],
                      hi: float = VALIDATION_RANGE[1],
                      step: float = VALIDATION_STEP) -> EnvelopeReport:
    """Check every influence invariant on the grid {lo, lo+step, ..., hi}.

    Violations are reported, never raised.  ``first_violation_x`` is the
    smallest grid point at which the envelope (or the |phi(x)| <= |x|,
    |phi(x)-x| <= x^2 facts) fails by more than ENVELOPE_TOL.
    """
    if not (lo < hi) or step <= 0:
        raise ValueError("validate_envelope requires lo < hi and step > 0")
    count = int(math.floor((hi - lo) / step + 0.5)) + 1
    grid = lo + step * np.arange(count)
    vals = np.asarray(spec.fn(grid), dtype=float)

    upper = envelope_upper(grid)
    lower = envelope_lower(grid)
    over = vals - upper
    under = lower - vals
    abs_fact = np.abs(vals) - np.abs(grid)
    sq_fact = np.abs(vals - grid) - grid * grid
    slack = np.maximum(over, under)
    violation = (
        (over > ENVELOPE_TOL)
        | (under > ENVELOPE_TOL)
        | (abs_fact > ENVELOPE_TOL)
        | (sq_fact > ENVELOPE_TOL)
    )

    mono_ok = bool(np.all(np.diff(vals) >= -1e-12))
    at_zero = float(np.asarray(spec.fn(np.array([0.0])))[0])
    zero_ok = at_zero == 0.0

    h = step
    slope = float(
        (np.asarray(spec.fn(np.array([h])))[0]
         - np.asarray(spec.fn(np.array([-h])))[0]) / (2.0 * h)
    )
    slope_ok = abs(slope - 1.0) <= 1e-6

    idx = np.flatnonzero(violation)
    first_violation = float(grid[idx[0]]) if idx.size else None
    passed = (first_violation is None) and mono_ok and zero_ok and slope_ok
    if passed:
        first_violation = None
    elif first_violation is None:
        # monotonicity / origin / slope failures without an envelope breach:
        # anchor the report at the first offending grid point.
        if not mono_ok:
            j = int(np.flatnonzero(np.diff(vals) < -1e-12)[0])
            first_violation = float(grid[j + 1])
        else:
            first_violation = 0.0

    return EnvelopeReport(
        passed=passed,
        first_violation_x=first_violation,
        max_envelope_slack=float(np.max(slack)),
        monotonicity_ok=mono_ok,
        slope_at_zero=slope,
    )


def custom_influence(fn, deriv=None, name: str = "custom",
                     k0: Optional[float] = None,
                     k1: Optional[float] = None) -> InfluenceSpec:
    """Wrap a callable as a custom influence and run the grid validation.

    The returned spec carries ``validated`` reflecting the check; solvers
    refuse unvalidated custom specs.  Outside the validation window envelope
    membership is the caller's responsibility.
    """
    vec = lambda x: np.asarray(fn(np.asarray(x, dtype=float)), dtype=float)
    dvec = None
    if deriv is not None:
        dvec = lambda x: np.asarray(deriv(np.asarray(x, dtype=float)), dtype=float)
    probe = InfluenceSpec(name=name, kind="custom", fn=vec, deriv=dvec,
                          k0=k0 if k0 is not None else math.inf,
                          k1=k1, validated=False)
    report = validate_envelope(probe)
    return InfluenceSpec(name=name, kind="custom", fn=vec, deriv=dvec,
                         k0=probe.k0, k1=k1, validated=report.passed)


def custom_influence_from_table(xs, ys, name: str = "custom") -> InfluenceSpec:
    """Custom influence from a monotone (x, phi(x)) table.

    Linear interpolation between knots, constant extension beyond the first
    and last knot.  No derivative is attached (regression refuses such specs).
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.ndim != 1 or xs.shape != ys.shape or xs.size < 2:
        raise ValueError("table needs two same-length columns with >= 2 rows")
    if not np.all(np.isfinite(xs)) or not np.all(np.isfinite(ys)):
        raise ValueError("table entries must be finite")
    if np.any(np.diff(xs) <= 0):
        raise ValueError("table x column must be strictly increasing")
    fn = lambda x: np.interp(np.asarray(x, dtype=float), xs, ys)
    return custom_influence(fn, deriv=None, name=name)


def influence_by_name(name: str) -> InfluenceSpec:
    """Resolve "wide" / "narrow" / "custom:<path>" as used by the CLI."""
    if name == "wide":
        return _WIDE
    if name == "narrow":
        return _NARROW
    if name.startswith("custom:"):
        path = name.split(":", 1)[1]
        data = np.loadtxt(path, delimiter=",", ndmin=2)
        if data.shape[1] != 2:
            raise ValueError(f"custom influence table '{path}' must have 2 columns")
        return custom_influence_from_table(data[:, 0], data[:, 1], name=f"custom:{path}")
    raise ValueError(f"unknown influence '{name}' (use wide, narrow or custom:<path>)")
