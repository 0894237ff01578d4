"""Heavy-tailed noise models with exact moments, deterministic sampling and
quadrature oracles for the population quantities used by the harness.

Sampling is counter-based: every stream is a Philox-4x64 generator keyed by
(seed, stream), and the stream counter advances by a fixed, documented number
of uniforms per variate (Philox blocks of 4 uniforms; partial blocks are
padded).  Identical (seed, stream, counter) yields identical variates on any
platform, and disjoint streams may be consumed concurrently.

Uniform consumption per variate:
    gaussian              2   (Box-Muller pair)
    gamma, integer shape  k   (sum of k exponentials)
    gamma, other shape    1   (inverse CDF)
    t, even integer nu    2 + nu/2
    t, other nu           3   (Gaussian pair + inverse-CDF chi-square)
    pareto                1   (exact inverse)
    lognormal             2   (Box-Muller pair)
    twopoint              1   (exact inverse)
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numpy.random import Generator, Philox
from scipy import integrate, special, stats

from .errors import CatoniError, DomainError
from .influence import InfluenceSpec
from .mean import bias_bound

__all__ = [
    "RngStream",
    "NoiseModel",
    "ModelMoments",
    "gaussian",
    "centered_gamma",
    "student_t",
    "centered_pareto",
    "centered_lognormal",
    "two_point",
    "parse_model",
    "model_label",
    "draw",
    "moments",
    "abs_central_moment",
    "d_k",
    "gamma_n",
    "solve_u_n",
    "beta_terms",
    "phi_mean_and_var",
    "u_stat_lower_tail_bound",
    "variance_quarter_tail_bound",
]

_MASK64 = (1 << 64) - 1


@dataclass
class RngStream:
    """A resumable position in one Philox stream.

    ``counter`` counts Philox blocks (4 uniforms each); draws advance it by
    ceil(uniforms/4) so a stream can be resumed deterministically.
    """

    seed: int
    stream: int
    counter: int = 0

    def _key(self) -> int:
        return ((self.seed & _MASK64) << 64) | (self.stream & _MASK64)

    def uniforms(self, m: int) -> np.ndarray:
        bitgen = Philox(key=self._key())
        if self.counter:
            bitgen.advance(self.counter)
        out = Generator(bitgen).random(m)
        self.counter += (m + 3) // 4
        return out


# ---------------------------------------------------------------------------
# noise models


@dataclass(frozen=True)
class NoiseModel:
    """A mean-zero noise law from the built-in roster.

    ``params`` is a sorted tuple of (name, value) pairs; use the factory
    functions rather than constructing directly.
    """

    family: str
    params: tuple = ()

    def p(self, name: str) -> float:
        for key, val in self.params:
            if key == name:
                return val
        raise KeyError(name)


def gaussian(sigma: float = 1.0) -> NoiseModel:
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    return NoiseModel("gaussian", (("sigma", float(sigma)),))


def centered_gamma(shape: float, scale: float = 1.0) -> NoiseModel:
    if shape <= 0 or scale <= 0:
        raise ValueError("shape and scale must be positive")
    return NoiseModel("gamma", (("k", float(shape)), ("theta", float(scale))))


def student_t(nu: float) -> NoiseModel:
    if nu <= 2:
        raise ValueError("t requires nu > 2 for a finite variance")
    return NoiseModel("t", (("nu", float(nu)),))


def centered_pareto(index: float) -> NoiseModel:
    if index <= 2:
        raise ValueError("pareto requires index > 2 for a finite variance")
    return NoiseModel("pareto", (("a", float(index)),))


def centered_lognormal(mu: float = 0.0, s: float = 1.0) -> NoiseModel:
    if s <= 0:
        raise ValueError("s must be positive")
    return NoiseModel("lognormal", (("mu", float(mu)), ("s", float(s))))


def two_point(p: float, high: float, low: float) -> NoiseModel:
    if not (0.0 <= p <= 1.0):
        raise ValueError("p must lie in [0, 1]")
    mean = p * high + (1.0 - p) * low
    if abs(mean) > 1e-14 * max(1.0, abs(high), abs(low)):
        raise ValueError(f"two-point law must have mean zero (got {mean!r})")
    return NoiseModel("twopoint", (("p", float(p)), ("high", float(high)),
                                   ("low", float(low))))


def parse_model(text: str) -> NoiseModel:
    """Parse CLI/config model strings, e.g. "gamma:k=2,theta=1,centered"."""
    head, _, rest = text.partition(":")
    head = head.strip().lower()
    kv = {}
    flags = set()
    if rest:
        for tok in rest.split(","):
            tok = tok.strip()
            if not tok:
                continue
            if "=" in tok:
                key, val = tok.split("=", 1)
                kv[key.strip()] = float(val)
            else:
                flags.add(tok)
    try:
        if head in ("gauss", "gaussian"):
            return gaussian(kv.get("sigma", 1.0))
        if head == "gamma":
            if "centered" not in flags:
                raise ValueError("gamma model must carry the 'centered' flag")
            return centered_gamma(kv["k"], kv.get("theta", 1.0))
        if head == "t":
            return student_t(kv["nu"])
        if head == "pareto":
            if "centered" not in flags:
                raise ValueError("pareto model must carry the 'centered' flag")
            return centered_pareto(kv["a"])
        if head == "lognormal":
            if "centered" not in flags:
                raise ValueError("lognormal model must carry the 'centered' flag")
            return centered_lognormal(kv.get("mu", 0.0), kv.get("s", 1.0))
        if head == "twopoint":
            return two_point(kv["p"], kv["high"], kv["low"])
    except KeyError as exc:
        raise ValueError(f"model '{text}' is missing parameter {exc}") from None
    raise ValueError(f"unknown model family '{head}'")


def model_label(model: NoiseModel) -> str:
    parts = ",".join(f"{k}={v:g}" for k, v in model.params)
    return f"{model.family}:{parts}" if parts else model.family


def _pareto_mean(a: float) -> float:
    return a / (a - 1.0)


def _lognormal_mean(mu: float, s: float) -> float:
    return math.exp(mu + 0.5 * s * s)


def _scipy_dist(model: NoiseModel):
    """Frozen scipy distribution of the centered law (pdf/cdf/ppf only)."""
    fam = model.family
    if fam == "gaussian":
        return stats.norm(scale=model.p("sigma"))
    if fam == "gamma":
        k, th = model.p("k"), model.p("theta")
        return stats.gamma(k, loc=-k * th, scale=th)
    if fam == "t":
        return stats.t(model.p("nu"))
    if fam == "pareto":
        a = model.p("a")
        return stats.pareto(a, loc=-_pareto_mean(a))
    if fam == "lognormal":
        mu, s = model.p("mu"), model.p("s")
        return stats.lognorm(s, loc=-_lognormal_mean(mu, s), scale=math.exp(mu))
    raise ValueError(f"no continuous density for family '{fam}'")


def _support(model: NoiseModel) -> tuple[float, float]:
    fam = model.family
    if fam == "gaussian" or fam == "t":
        return (-math.inf, math.inf)
    if fam == "gamma":
        return (-model.p("k") * model.p("theta"), math.inf)
    if fam == "pareto":
        return (1.0 - _pareto_mean(model.p("a")), math.inf)
    if fam == "lognormal":
        return (-_lognormal_mean(model.p("mu"), model.p("s")), math.inf)
    raise ValueError(fam)


def sqrt_exp_moment_finite(model: NoiseModel) -> bool:
    """Whether E exp(t0 sqrt|X|) is finite for some t0 > 0."""
    return model.family in ("gaussian", "gamma", "twopoint")


# ---------------------------------------------------------------------------
# sampling


def _box_muller(u: np.ndarray) -> np.ndarray:
    # u has shape (n, 2); uses the cosine branch only (fixed consumption).
    r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
    return r * np.cos(2.0 * math.pi * u[:, 1])


def draw(model: NoiseModel, n: int, rng: RngStream) -> np.ndarray:
    """n i.i.d. variates, deterministic in (seed, stream, counter)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    fam = model.family
    if fam == "gaussian":
        u = rng.uniforms(2 * n).reshape(n, 2)
        return model.p("sigma") * _box_muller(u)
    if fam == "gamma":
        k, th = model.p("k"), model.p("theta")
        if k.is_integer() and k <= 64:
            ki = int(k)
            u = rng.uniforms(ki * n).reshape(n, ki)
            g = -th * np.sum(np.log1p(-u), axis=1)
        else:
            u = rng.uniforms(n)
            g = th * special.gammaincinv(k, u)
        return g - k * th
    if fam == "t":
        nu = model.p("nu")
        if nu.is_integer() and int(nu) % 2 == 0:
            half = int(nu) // 2
            u = rng.uniforms((2 + half) * n).reshape(n, 2 + half)
            z = _box_muller(u[:, :2])
            chi2 = -2.0 * np.sum(np.log1p(-u[:, 2:]), axis=1)
        else:
            u = rng.uniforms(3 * n).reshape(n, 3)
            z = _box_muller(u[:, :2])
            chi2 = 2.0 * special.gammaincinv(nu / 2.0, np.clip(u[:, 2], 2.0 ** -53, None))
        return z / np.sqrt(chi2 / nu)
    if fam == "pareto":
        a = model.p("a")
        u = rng.uniforms(n)
        return np.power(1.0 - u, -1.0 / a) - _pareto_mean(a)
    if fam == "lognormal":
        mu, s = model.p("mu"), model.p("s")
        u = rng.uniforms(2 * n).reshape(n, 2)
        return np.exp(mu + s * _box_muller(u)) - _lognormal_mean(mu, s)
    if fam == "twopoint":
        p, high, low = model.p("p"), model.p("high"), model.p("low")
        u = rng.uniforms(n)
        return np.where(u < p, high, low)
    raise ValueError(f"unknown family '{fam}'")


# ---------------------------------------------------------------------------
# quadrature oracles

_QUAD_KW = dict(epsabs=1e-13, epsrel=1e-10, limit=300)


def _quad_sum(fn, pieces, points=()):
    total = 0.0
    for lo, hi in pieces:
        if lo >= hi:
            continue
        inner = sorted(p for p in points if lo < p < hi)
        edges = [lo, *inner, hi]
        for a, b in zip(edges[:-1], edges[1:]):
            val, _ = integrate.quad(fn, a, b, **_QUAD_KW)
            total += val
    return total


def _expect(model: NoiseModel, fn: Callable[[np.ndarray], np.ndarray],
            lo: float = -math.inf, hi: float = math.inf,
            points=()) -> float:
    """E[fn(X) 1(lo <= X <= hi)] for the centered law of ``model``.

    fn must accept scalars.  ``points`` are interior breakpoints (kinks of
    fn).  Tails are integrated with infinite-limit quadrature; a central
    window around the bulk of the mass is always split out so the adaptive
    rule cannot miss it.
    """
    if model.family == "twopoint":
        total = 0.0
        for val, w in ((model.p("high"), model.p("p")),
                       (model.p("low"), 1.0 - model.p("p"))):
            if lo <= val <= hi:
                total += w * fn(val)
        return total

    a, b = _support(model)
    lo = max(lo, a)
    hi = min(hi, b)
    if lo >= hi:
        return 0.0
    dist_ = _scipy_dist(model)
    sig = math.sqrt(_sigma_sq(model))

    if model.family == "gamma" and model.p("k") < 1.0:
        # Edge-regularised expectation: substitute y = (x - a)^k so the
        # density singularity at the support edge disappears.
        k, th = model.p("k"), model.p("theta")
        c = 1.0 / (k * math.gamma(k) * th ** k)
        y_lo = (lo - a) ** k
        y_hi = (hi - a) ** k if math.isfinite(hi) else math.inf
        g = lambda y: c * fn(a + y ** (1.0 / k)) * math.exp(-(y ** (1.0 / k)) / th)
        y_points = [(p - a) ** k for p in points if lo < p < hi]
        window = min(max((50.0 * (1.0 + sig) - a) ** k, y_lo), y_hi)
        pieces = [(y_lo, window), (window, y_hi)]
        return _quad_sum(g, pieces, y_points)

    pdf = dist_.pdf
    g = lambda x: fn(x) * pdf(x)
    # Central mass window: quantile based so power tails are handled too.
    w_lo = lo if math.isfinite(lo) else float(dist_.ppf(1e-14))
    w_hi = hi if math.isfinite(hi) else float(dist_.ppf(1.0 - 1e-14))
    w_lo = max(lo, min(w_lo, hi))
    w_hi = min(hi, max(w_hi, w_lo))
    pieces = [(lo, w_lo), (w_lo, w_hi), (w_hi, hi)]
    return _quad_sum(g, pieces, points)


@dataclass(frozen=True)
class ModelMoments:
    u: float
    sigma_sq: float
    abs_central_moment: dict
    d_k: dict
    sqrt_exp_moment_finite: bool


_STANDARD_ORDERS = (2.25, 2.5, 3.0)


def _sigma_sq(model: NoiseModel) -> float:
    fam = model.family
    if fam == "gaussian":
        return model.p("sigma") ** 2
    if fam == "gamma":
        return model.p("k") * model.p("theta") ** 2
    if fam == "t":
        nu = model.p("nu")
        return nu / (nu - 2.0)
    if fam == "pareto":
        a = model.p("a")
        return a / ((a - 1.0) ** 2 * (a - 2.0))
    if fam == "lognormal":
        mu, s = model.p("mu"), model.p("s")
        return (math.exp(s * s) - 1.0) * math.exp(2.0 * mu + s * s)
    if fam == "twopoint":
        p, high, low = model.p("p"), model.p("high"), model.p("low")
        return p * high * high + (1.0 - p) * low * low
    raise ValueError(fam)


def abs_central_moment(model: NoiseModel, order: float) -> float:
    """E|X - u|^order; returns math.inf when the moment diverges."""
    if order <= 0:
        raise ValueError("order must be positive")
    fam = model.family
    if fam == "gaussian":
        s = model.p("sigma")
        return s ** order * 2.0 ** (order / 2.0) \
            * math.gamma((order + 1.0) / 2.0) / math.sqrt(math.pi)
    if fam == "t":
        nu = model.p("nu")
        if order >= nu:
            return math.inf
        return nu ** (order / 2.0) * math.gamma((order + 1.0) / 2.0) \
            * math.gamma((nu - order) / 2.0) / (math.sqrt(math.pi) * math.gamma(nu / 2.0))
    if fam == "pareto":
        if order >= model.p("a"):
            return math.inf
    if fam == "twopoint":
        p, high, low = model.p("p"), model.p("high"), model.p("low")
        return p * abs(high) ** order + (1.0 - p) * abs(low) ** order
    return _expect(model, lambda x: abs(x) ** order, points=(0.0,))


def d_k(model: NoiseModel, k: float) -> float:
    """Moment ratio sigma / (E|X-u|^k)^(1/k); <= 1 for k >= 2."""
    mk = abs_central_moment(model, k)
    if math.isinf(mk):
        return 0.0
    return math.sqrt(_sigma_sq(model)) / mk ** (1.0 / k)


def gamma_n(n: int, a_n: float, delta: float) -> float:
    """Growth range min{n^(delta/(4+2delta)), n^(-1/2) a_n^(-1)} for the
    self-normalised moderate-deviation statement."""
    if n < 1 or a_n <= 0 or not (0.0 < delta <= 1.0):
        raise ValueError("need n >= 1, a_n > 0, delta in (0, 1]")
    return min(n ** (delta / (4.0 + 2.0 * delta)), 1.0 / (math.sqrt(n) * a_n))


def moments(model: NoiseModel) -> ModelMoments:
    sig_sq = _sigma_sq(model)
    abs_map = {k: abs_central_moment(model, k) for k in _STANDARD_ORDERS}
    sig = math.sqrt(sig_sq)
    dk_map = {k: (0.0 if math.isinf(v) else sig / v ** (1.0 / k))
              for k, v in abs_map.items()}
    return ModelMoments(u=0.0, sigma_sq=sig_sq, abs_central_moment=abs_map,
                        d_k=dk_map,
                        sqrt_exp_moment_finite=sqrt_exp_moment_finite(model))


def phi_mean_and_var(model: NoiseModel, alpha: float, phi: InfluenceSpec):
    """(E phi(alpha X), Var phi(alpha X)) by quadrature (exact for twopoint)."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    pts = (-1.0 / alpha, 0.0, 1.0 / alpha)
    f1 = lambda x: float(phi.fn(alpha * x))
    f2 = lambda x: float(phi.fn(alpha * x)) ** 2
    m = _expect(model, f1, points=pts)
    v = _expect(model, f2, points=pts) - m * m
    return m, max(v, 0.0)


def solve_u_n(model: NoiseModel, alpha: float, phi: InfluenceSpec,
              quad_tol: float = 1e-10) -> float:
    """Root of f(x) = E phi(alpha (X - x)), the population target of the
    estimator.  Plateau midpoint convention as in the sample solver."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    sig = math.sqrt(_sigma_sq(model))
    if alpha * sig >= 1.0:
        warnings.warn("alpha*sigma >= 1: the bias certificate is vacuous",
                      RuntimeWarning, stacklevel=2)
        band = 2.0 * sig
    else:
        band = 2.0 * bias_bound(alpha, sig)
    lo0, hi0 = -band - sig, band + sig

    def f(x: float) -> float:
        pts = (x - 1.0 / alpha, x, x + 1.0 / alpha)
        return _expect(model, lambda t: float(phi.fn(alpha * (t - x))), points=pts)

    eps_f = 2.0 * quad_tol
    xtol = max(quad_tol, 1e-12)
    if not (f(lo0) > eps_f and f(hi0) < -eps_f):
        raise CatoniError("internal: u_n bracket failed; quadrature tolerance "
                          "is too loose for this model/alpha")

    def edge(threshold, above):
        a, b = lo0, hi0
        while b - a > xtol:
            mid = 0.5 * (a + b)
            if mid <= a or mid >= b:
                break
            fm = f(mid)
            if (fm > threshold) if above else (fm >= threshold):
                a = mid
            else:
                b = mid
        return 0.5 * (a + b)

    left = edge(eps_f, True)
    right = edge(-eps_f, False)
    return 0.5 * (left + right)


def beta_terms(model: NoiseModel, n: int) -> tuple[float, float]:
    """Truncated-moment pair controlling the normal-approximation error:

        beta2 = E{X^2 1(|X| >= sqrt(n) sigma)} / sigma^2
        beta3 = E{|X|^3 1(|X| <= sqrt(n) sigma)} / (sqrt(n) sigma^3)
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    sig = math.sqrt(_sigma_sq(model))
    s = math.sqrt(n) * sig
    b2 = (_expect(model, lambda x: x * x, hi=-s)
          + _expect(model, lambda x: x * x, lo=s)) / (sig * sig)
    b3 = _expect(model, lambda x: abs(x) ** 3, lo=-s, hi=s, points=(0.0,)) \
        / (math.sqrt(n) * sig ** 3)
    return b2, b3


def u_stat_lower_tail_bound(m: int, n: int, mean_h: float, p_moment: float,
                            p: float, x: float) -> float:
    """Exponential lower-tail bound for a U-statistic with nonnegative kernel:

        exp(-floor(n/m) (p-1) (E[h]-x)^(p/(p-1)) / (p (E[h^p])^(1/(p-1))))

    for 0 < x <= E[h] and p in (1, 2].
    """
    if m < 1 or n < m:
        raise ValueError("need 1 <= m <= n")
    if not (1.0 < p <= 2.0):
        raise ValueError("p must lie in (1, 2]")
    if p_moment <= 0 or mean_h <= 0:
        raise ValueError("moments must be positive")
    if x <= 0 or x > mean_h:
        raise DomainError("bound requires 0 < x <= E[h]")
    expo = (n // m) * (p - 1.0) * (mean_h - x) ** (p / (p - 1.0)) \
        / (p * p_moment ** (1.0 / (p - 1.0)))
    return math.exp(-expo)


def variance_quarter_tail_bound(n: int, delta: float, d_2d: float) -> float:
    """Bound on P(n^-1 sum (X_i - u)^2 <= sigma^2/4):
    exp(-n c_delta d^{(4+2 delta)/delta}) with
    c_delta = (delta/(2+delta)) (3/4)^{(2+delta)/delta}."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not (0.0 < delta <= 1.0):
        raise ValueError("delta must lie in (0, 1]")
    if not (0.0 < d_2d <= 1.0):
        raise ValueError("d_2d must lie in (0, 1]")
    c_delta = (delta / (2.0 + delta)) * (3.0 / 4.0) ** ((2.0 + delta) / delta)
    return math.exp(-n * c_delta * d_2d ** ((4.0 + 2.0 * delta) / delta))
