"""Seeded Monte Carlo experiments that verify the estimator's distributional
guarantees at desk scale, emitting deterministic report tables.

Determinism contract: every experiment is a pure function of its
configuration.  Replicate r of an experiment draws from
RngStream(seed, hash64(kind, n, r)); replicates are processed in fixed-size
blocks and reduced in replicate-index order, so the serialised table is
byte-identical across runs and across any worker count.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats as _scipy_stats

from . import dist
from .errors import ConfigError, HarnessAbortError, NonConvergenceError
from .influence import InfluenceSpec, influence_by_name
from .mean import MeanConfig, bias_bound, solve_mean
from .regression import (RegressionConfig, RegressionProblem, default_alpha,
                         delta_n_from_scalar, feasibility, gram_stats,
                         solve_regression, standardize)
from .specialfn import ecdf_sup_distance, std_normal_cdf, std_normal_quantile, chi2_cdf

__all__ = [
    "ExperimentConfig",
    "ReportTable",
    "run_experiment",
    "run_be_mean",
    "run_be_self",
    "run_md",
    "run_coverage",
    "run_regression_bound",
    "run_regression_mdbe",
    "run_tail_bounds",
    "config_from_dict",
]

KINDS = ("be_mean", "be_self", "md_mean", "md_self", "coverage",
         "regression_bound", "regression_mdbe", "tail_bounds")

# Fixed block size for replicate processing (part of the determinism story:
# results do not depend on it, memory does).
_BLOCK = 512
# Probability grid defining the ball-radius probes of the multi-dimensional
# normal-approximation experiment.
_BALL_PROBS = np.linspace(0.005, 0.995, 199)
# Expected tail hits below which a moderate-deviation cell is flagged.
_MIN_TAIL_HITS = 200.0
# Fraction of non-converged regression replicates tolerated before aborting.
_MAX_EXCLUDED_FRAC = 1e-3

_MASK64 = (1 << 64) - 1


def _stream_id(*tokens) -> int:
    """Stable 64-bit stream id from hashable tokens (SHA-256 based)."""
    text = "|".join(str(t) for t in tokens)
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big")


@dataclass(frozen=True)
class DesignSpec:
    p: int
    row_kind: str                  # "sphere" | "gaussian" | "ones"
    beta_star: tuple

    def __post_init__(self):
        if self.p < 1:
            raise ConfigError("design p must be >= 1")
        if self.row_kind not in ("sphere", "gaussian", "ones"):
            raise ConfigError(f"unknown design row kind '{self.row_kind}'")
        if self.row_kind == "ones" and self.p != 1:
            raise ConfigError("'ones' design requires p = 1")
        if len(self.beta_star) != self.p:
            raise ConfigError("beta_star length must equal p")


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    model: dist.NoiseModel
    n_list: tuple
    reps: int
    seed: int
    phi: InfluenceSpec = field(default_factory=lambda: influence_by_name("wide"))
    a_n_scale: float = 1.0
    a_n_list: Optional[tuple] = None
    z_grid: tuple = ()
    level: float = 0.95
    epsilon: float = 0.1
    delta: float = 1.0
    design: Optional[DesignSpec] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind '{self.kind}'")
        if self.reps < 100:
            raise ConfigError("reps must be >= 100")
        if not self.n_list or any(int(n) < 4 for n in self.n_list):
            raise ConfigError("every n in n_list must be >= 4")
        if self.a_n_list is not None and len(self.a_n_list) != len(self.n_list):
            raise ConfigError("a_n_list must match n_list in length")
        if self.kind in ("md_mean", "md_self"):
            if not self.z_grid:
                raise ConfigError("moderate-deviation experiments need z_grid")
            if any(b < a for a, b in zip(self.z_grid, self.z_grid[1:])):
                raise ConfigError("z_grid must be sorted ascending")
        if not (0.0 < self.level < 1.0):
            raise ConfigError("level must lie in (0, 1)")
        if not (0.0 < self.epsilon < 1.0):
            raise ConfigError("epsilon must lie in (0, 1)")
        if not (0.0 < self.delta <= 1.0):
            raise ConfigError("delta must lie in (0, 1]")
        if self.kind.startswith("regression") and self.design is None:
            raise ConfigError("regression experiments need a design block")
        if self.kind == "md_mean" and not dist.sqrt_exp_moment_finite(self.model):
            raise ConfigError(
                "md_mean requires a model with a finite exp(t sqrt|X|) moment "
                "(use md_self for this model)")

    def a_n(self, i: int) -> float:
        if self.a_n_list is not None:
            return float(self.a_n_list[i])
        return self.a_n_scale * float(self.n_list[i]) ** -0.5

    def canonical(self) -> dict:
        out = {
            "kind": self.kind,
            "model": dist.model_label(self.model),
            "n_list": [int(n) for n in self.n_list],
            "reps": int(self.reps),
            "seed": int(self.seed),
            "phi": self.phi.name,
            "a_n_scale": self.a_n_scale,
            "a_n_list": list(self.a_n_list) if self.a_n_list is not None else None,
            "z_grid": list(self.z_grid),
            "level": self.level,
            "epsilon": self.epsilon,
            "delta": self.delta,
            "design": None if self.design is None else {
                "p": self.design.p,
                "row_kind": self.design.row_kind,
                "beta_star": list(self.design.beta_star),
            },
        }
        return out

    def digest(self) -> str:
        text = json.dumps(self.canonical(), sort_keys=True,
                          separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


_REQUIRED_KEYS = ("kind", "model", "n_list", "reps", "seed")
_OPTIONAL_KEYS = ("phi", "a_n_scale", "a_n_list", "z_grid", "level",
                  "epsilon", "delta", "design_p", "design_kind", "beta_star")


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Build a validated config from a flat key-value mapping.

    Unknown keys are hard errors so misspelled settings cannot silently
    revert to defaults.
    """
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object of key-value pairs")
    allowed = set(_REQUIRED_KEYS) | set(_OPTIONAL_KEYS)
    for key in raw:
        if key not in allowed:
            raise ConfigError(f"unknown config key '{key}'")
    for key in _REQUIRED_KEYS:
        if key not in raw:
            raise ConfigError(f"missing config key '{key}'")
    try:
        model = dist.parse_model(raw["model"])
    except ValueError as exc:
        raise ConfigError(f"bad 'model': {exc}") from None
    try:
        phi = influence_by_name(raw.get("phi", "wide"))
    except (OSError, ValueError) as exc:
        raise ConfigError(f"bad 'phi': {exc}") from None
    design = None
    if any(k in raw for k in ("design_p", "design_kind", "beta_star")):
        for k in ("design_p", "design_kind", "beta_star"):
            if k not in raw:
                raise ConfigError(f"missing config key '{k}'")
        design = DesignSpec(p=int(raw["design_p"]),
                            row_kind=str(raw["design_kind"]),
                            beta_star=tuple(float(b) for b in raw["beta_star"]))
    kwargs = dict(
        kind=str(raw["kind"]),
        model=model,
        n_list=tuple(int(n) for n in raw["n_list"]),
        reps=int(raw["reps"]),
        seed=int(raw["seed"]),
        phi=phi,
        design=design,
    )
    if "a_n_scale" in raw:
        kwargs["a_n_scale"] = float(raw["a_n_scale"])
    if "a_n_list" in raw and raw["a_n_list"] is not None:
        kwargs["a_n_list"] = tuple(float(a) for a in raw["a_n_list"])
    if "z_grid" in raw:
        kwargs["z_grid"] = tuple(float(z) for z in raw["z_grid"])
    for key in ("level", "epsilon", "delta"):
        if key in raw:
            kwargs[key] = float(raw[key])
    return ExperimentConfig(**kwargs)


# ---------------------------------------------------------------------------
# report table


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return ""
        return format(v, ".17g")
    return str(value)


@dataclass(frozen=True)
class ReportTable:
    kind: str
    columns: tuple
    rows: tuple
    provenance: dict

    def csv_text(self) -> str:
        lines = [",".join(self.columns)]
        for row in self.rows:
            lines.append(",".join(_fmt(v) for v in row))
        return "\n".join(lines) + "\n"

    def provenance_text(self) -> str:
        return json.dumps(self.provenance, sort_keys=True,
                          separators=(",", ":")) + "\n"

    def write(self, out_dir) -> None:
        import pathlib

        out = pathlib.Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.csv").write_bytes(self.csv_text().encode())
        (out / "provenance.jsonl").write_bytes(self.provenance_text().encode())

    def column(self, name: str) -> list:
        i = self.columns.index(name)
        return [row[i] for row in self.rows]


def _provenance(config: ExperimentConfig, columns, n_rows: int) -> dict:
    return {
        "kind": config.kind,
        "seed": int(config.seed),
        "config_digest": config.digest(),
        "config": config.canonical(),
        "columns": list(columns),
        "rows": n_rows,
        "block_size": _BLOCK,
        "generator": "philox4x64",
    }


# ---------------------------------------------------------------------------
# replicate engine


def _draw_block(model, n, seed, kind, r0, count):
    X = np.empty((count, n))
    for j in range(count):
        stream = dist.RngStream(seed, _stream_id(kind, n, r0 + j))
        X[j] = dist.draw(model, n, stream)
    return X


def _solve_rows(X, alpha, phi: InfluenceSpec, tol: float = 1e-9,
                max_iter: int = 80):
    """Catoni roots for every row of X.

    Wide influence takes a masked fixed-slope iteration (the estimating sum
    has slope close to -n*alpha near the root); any row that has not met the
    step tolerance after max_iter falls back to plateau bisection, as do all
    rows for non-wide influences.
    """
    B, n = X.shape
    alpha_rows = np.broadcast_to(np.asarray(alpha, dtype=float), (B,))
    theta = np.empty(B)
    pending = np.arange(B)
    if phi.kind == "wide":
        theta[:] = X.mean(axis=1)
        active = np.arange(B)
        for _ in range(max_iter):
            a = alpha_rows[active]
            arg = a[:, None] * (X[active] - theta[active, None])
            g = phi.fn(arg).sum(axis=1)
            step = g / (n * a)
            theta[active] += step
            done = np.abs(step) <= tol
            active = active[~done]
            if active.size == 0:
                break
        pending = active
    for i in pending:
        est = solve_mean(X[i], MeanConfig(phi=phi, alpha=float(alpha_rows[i]),
                                          tol=tol, max_iter=400))
        theta[i] = est.theta_hat
    return theta


def _map_blocks(task, reps: int, threads: int):
    """Run ``task(r0, count)`` over fixed-size blocks, results in block order."""
    blocks = [(r0, min(_BLOCK, reps - r0)) for r0 in range(0, reps, _BLOCK)]
    if threads <= 1:
        return [task(r0, c) for r0, c in blocks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(task, r0, c) for r0, c in blocks]
        return [f.result() for f in futures]


def _sigma_hat_rows(X):
    return X.std(axis=1, ddof=1)


def _redraw_degenerate(X, model, n, seed, kind, r0):
    """Replace zero-dispersion rows by deterministic retry draws."""
    redraws = 0
    sd = _sigma_hat_rows(X)
    for j in np.flatnonzero(sd == 0.0):
        for attempt in range(1, 101):
            stream = dist.RngStream(
                seed, _stream_id(kind, n, r0 + j, "retry", attempt))
            X[j] = dist.draw(model, n, stream)
            redraws += 1
            if X[j].std(ddof=1) > 0.0:
                break
        else:
            raise HarnessAbortError("could not redraw a non-degenerate sample")
    return redraws


# ---------------------------------------------------------------------------
# experiments


def run_be_mean(config: ExperimentConfig, threads: int = 1) -> ReportTable:
    """Normal-approximation sup distance of sqrt(n)(theta_hat - u_n)/sigma
    against Phi, with the truncated-moment predictor beta2 + beta3."""
    _require_kind(config, "be_mean")
    sigma = math.sqrt(dist.moments(config.model).sigma_sq)
    columns = ("n", "reps", "a_n", "alpha", "u_n", "ks_distance", "ks_se",
               "beta2", "beta3", "be_predictor", "fitted_ratio")
    rows = []
    for i, n in enumerate(config.n_list):
        n = int(n)
        a_n = config.a_n(i)
        alpha = a_n / sigma
        u_n = dist.solve_u_n(config.model, alpha, config.phi)

        def task(r0, count, *, n=n, alpha=alpha):
            X = _draw_block(config.model, n, config.seed, config.kind, r0, count)
            return _solve_rows(X, alpha, config.phi)

        theta = np.concatenate(_map_blocks(task, config.reps, threads))
        stats_v = np.sqrt(n) * (theta - u_n) / sigma
        D = ecdf_sup_distance(np.sort(stats_v), std_normal_cdf)
        b2, b3 = dist.beta_terms(config.model, n)
        pred = b2 + b3
        rows.append((n, config.reps, a_n, alpha, u_n, D,
                     0.26 / math.sqrt(config.reps), b2, b3, pred,
                     D / pred if pred > 0 else math.nan))
    return ReportTable(config.kind, columns, tuple(rows),
                       _provenance(config, columns, len(rows)))


def run_be_self(config: ExperimentConfig, threads: int = 1) -> ReportTable:
    """As run_be_mean but self-normalised: statistic
    sqrt(n)(theta_s - u)/sigma_hat, centred at the true mean."""
    _require_kind(config, "be_self")
    mom = dist.moments(config.model)
    columns = ("n", "reps", "a_n", "ks_distance", "ks_se", "beta2", "beta3",
               "sqrt_n_a_n", "predictor", "fitted_ratio", "redraws")
    rows = []
    for i, n in enumerate(config.n_list):
        n = int(n)
        a_n = config.a_n(i)

        def task(r0, count, *, n=n, a_n=a_n):
            X = _draw_block(config.model, n, config.seed, config.kind, r0, count)
            redraws = _redraw_degenerate(X, config.model, n, config.seed,
                                         config.kind, r0)
            sd = _sigma_hat_rows(X)
            theta = _solve_rows(X, a_n / sd, config.phi)
            return np.sqrt(n) * (theta - mom.u) / sd, redraws

        parts = _map_blocks(task, config.reps, threads)
        stats_v = np.concatenate([p[0] for p in parts])
        redraws = sum(p[1] for p in parts)
        D = ecdf_sup_distance(np.sort(stats_v), std_normal_cdf)
        b2, b3 = dist.beta_terms(config.model, n)
        pred = b2 + b3 + math.sqrt(n) * a_n
        rows.append((n, config.reps, a_n, D, 0.26 / math.sqrt(config.reps),
                     b2, b3, math.sqrt(n) * a_n, pred, D / pred, redraws))
    return ReportTable(config.kind, columns, tuple(rows),
                       _provenance(config, columns, len(rows)))


def run_md(config: ExperimentConfig, threads: int = 1) -> ReportTable:
    """Tail-probability ratios R(z) = P(T > z) / (1 - Phi(z)) over z_grid.

    md_mean centres at u_n (plus a second ratio centred at u); md_self uses
    the self-normalised statistic centred at u.  Cells beyond the valid z
    range or with too little expected tail mass are flagged, not computed.
    """
    if config.kind not in ("md_mean", "md_self"):
        raise ConfigError(f"config kind '{config.kind}' is not a moderate-"
                          "deviation experiment")
    mom = dist.moments(config.model)
    sigma = math.sqrt(mom.sigma_sq)
    is_self = config.kind == "md_self"
    columns = ["n", "z", "status", "a_n", "expected_tail", "count", "ratio",
               "se"]
    if not is_self:
        columns += ["count_u", "ratio_u", "se_u"]
    columns = tuple(columns)
    rows = []
    for i, n in enumerate(config.n_list):
        n = int(n)
        a_n = config.a_n(i)
        if is_self:
            z_cap = dist.gamma_n(n, a_n, config.delta) \
                * mom.d_k.get(2.0 + config.delta,
                              dist.d_k(config.model, 2.0 + config.delta))
            u_n = None
            alpha = None
        else:
            z_cap = n ** (1.0 / 6.0)
            alpha = a_n / sigma
            u_n = dist.solve_u_n(config.model, alpha, config.phi)

        def task(r0, count, *, n=n, a_n=a_n, alpha=alpha):
            X = _draw_block(config.model, n, config.seed, config.kind, r0, count)
            if is_self:
                _redraw_degenerate(X, config.model, n, config.seed,
                                   config.kind, r0)
                sd = _sigma_hat_rows(X)
                theta = _solve_rows(X, a_n / sd, config.phi)
                return (np.sqrt(n) * (theta - mom.u) / sd,)
            theta = _solve_rows(X, alpha, config.phi)
            return (np.sqrt(n) * (theta - u_n) / sigma,
                    np.sqrt(n) * (theta - mom.u) / sigma)

        parts = _map_blocks(task, config.reps, threads)
        stat_n = np.concatenate([p[0] for p in parts])
        stat_u = None if is_self else np.concatenate([p[1] for p in parts])
        for z in config.z_grid:
            tail = 1.0 - std_normal_cdf(z)
            expected = config.reps * tail
            if z < 0 or z > z_cap:
                status = "out-of-range"
            elif expected < _MIN_TAIL_HITS:
                status = "low-tail"
            else:
                status = "ok"
            if status != "ok":
                row = [n, z, status, a_n, expected] + [None] * (3 if is_self else 6)
                rows.append(tuple(row))
                continue

            def cell(stat):
                k = int(np.sum(stat > z))
                p_hat = k / config.reps
                ratio = p_hat / tail
                se = math.sqrt(p_hat * (1.0 - p_hat) / config.reps) / tail
                return k, ratio, se

            row = [n, z, status, a_n, expected, *cell(stat_n)]
            if not is_self:
                row += list(cell(stat_u))
            rows.append(tuple(row))
    return ReportTable(config.kind, columns, tuple(rows),
                       _provenance(config, columns, len(rows)))


def run_coverage(config: ExperimentConfig, threads: int = 1) -> ReportTable:
    """Empirical coverage of the normal-approximation intervals (known-scale
    and self-normalised, each with and without the bias allowance) against
    the true mean."""
    _require_kind(config, "coverage")
    mom = dist.moments(config.model)
    sigma = math.sqrt(mom.sigma_sq)
    z = std_normal_quantile(0.5 * (1.0 + config.level))
    columns = ("n", "variant", "bias_corrected", "reps", "a_n", "level",
               "coverage", "se", "mean_allowance")
    rows = []
    for i, n in enumerate(config.n_list):
        n = int(n)
        a_n = config.a_n(i)
        alpha = a_n / sigma

        def task(r0, count, *, n=n, a_n=a_n, alpha=alpha):
            X = _draw_block(config.model, n, config.seed, config.kind, r0, count)
            _redraw_degenerate(X, config.model, n, config.seed, config.kind, r0)
            th_known = _solve_rows(X, alpha, config.phi)
            sd = _sigma_hat_rows(X)
            th_self = _solve_rows(X, a_n / sd, config.phi)
            return th_known, th_self, sd

        parts = _map_blocks(task, config.reps, threads)
        th_known = np.concatenate([p[0] for p in parts])
        th_self = np.concatenate([p[1] for p in parts])
        sd = np.concatenate([p[2] for p in parts])

        half_known = z * sigma / math.sqrt(n)
        allow_known = bias_bound(alpha, sigma)
        half_self = z * sd / math.sqrt(n)
        if a_n >= 1.0:
            raise HarnessAbortError("coverage with bias allowance needs a_n < 1")
        # same value as bias_bound(a_n/sd, sd) per replicate
        allow_self = a_n * sd / math.sqrt(1.0 - a_n * a_n)

        err_known = np.abs(th_known - mom.u)
        err_self = np.abs(th_self - mom.u)
        cells = [
            ("known-scale", False, err_known <= half_known, 0.0),
            ("known-scale", True, err_known <= half_known + allow_known,
             allow_known),
            ("self-normalized", False, err_self <= half_self, 0.0),
            ("self-normalized", True, err_self <= half_self + allow_self,
             float(np.mean(allow_self))),
        ]
        for variant, corrected, covered, mean_allow in cells:
            cov = float(np.mean(covered))
            se = math.sqrt(cov * (1.0 - cov) / config.reps)
            rows.append((n, variant, corrected, config.reps, a_n,
                         config.level, cov, se, mean_allow))
    return ReportTable(config.kind, columns, tuple(rows),
                       _provenance(config, columns, len(rows)))


def _make_design(config: ExperimentConfig, n: int) -> np.ndarray:
    spec = config.design
    stream = dist.RngStream(config.seed, _stream_id("design", n, 0))
    if spec.row_kind == "ones":
        return np.ones((n, 1))
    u = stream.uniforms(2 * n * spec.p).reshape(n * spec.p, 2)
    r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
    Z = (r * np.cos(2.0 * math.pi * u[:, 1])).reshape(n, spec.p)
    if spec.row_kind == "sphere":
        norms = np.linalg.norm(Z, axis=1, keepdims=True)
        norms[norms == 0.0] = 1.0
        Z = Z / norms
    return Z


def run_regression_bound(config: ExperimentConfig, threads: int = 1) -> ReportTable:
    """Violation frequency of the error-radius certificate on a fixed design
    with fresh noise per replicate, plus the mean-error decay across n."""
    _require_kind(config, "regression_bound")
    mom = dist.moments(config.model)
    sigma_bar_sq = mom.sigma_sq
    beta_star = np.asarray(config.design.beta_star, dtype=float)
    columns = ("n", "p", "design", "alpha", "sigma_bar_sq", "lambda_min",
               "lambda_max", "L_n", "kappa", "delta_sq", "beta_0",
               "corollary5_n_ok", "reps", "violations", "violation_freq",
               "se", "mean_error", "excluded")
    rows = []
    for n in config.n_list:
        n = int(n)
        X = _make_design(config, n)
        gram = gram_stats(X)
        alpha = default_alpha(n, sigma_bar_sq, config.epsilon)
        feas = feasibility(gram, sigma_bar_sq, alpha, config.epsilon, n)
        if not feas.feasible:
            log_term = math.log(1.0 / config.epsilon)
            t_alpha = alpha ** 2 * gram.lambda_max * sigma_bar_sq
            t_n = 2.0 * gram.lambda_max * log_term / n
            dominant = ("the alpha^2 c_u sigma_bar^2 term" if t_alpha >= t_n
                        else "the 2 c_u log(1/eps)/n term")
            raise HarnessAbortError(
                f"infeasible radius certificate at n={n} "
                f"(Delta^2={feas.delta_sq:.4f}; dominated by {dominant})")
        n_min = 4.0 * gram.lambda_max * gram.L_n ** 2 \
            * math.log(1.0 / config.epsilon) / gram.lambda_min ** 2
        reg_cfg = RegressionConfig(phi=config.phi, alpha=alpha, tol=1e-10)

        def task(r0, count, *, n=n, X=X, reg_cfg=reg_cfg):
            errs = np.full(count, math.nan)
            excluded = 0
            for j in range(count):
                stream = dist.RngStream(config.seed,
                                        _stream_id(config.kind, n, r0 + j))
                eps = dist.draw(config.model, n, stream)
                y = X @ beta_star + eps
                try:
                    fit = solve_regression(RegressionProblem(X, y), reg_cfg)
                except NonConvergenceError:
                    excluded += 1
                    continue
                errs[j] = np.linalg.norm(fit.beta_hat - beta_star)
            return errs, excluded

        parts = _map_blocks(task, config.reps, threads)
        errs = np.concatenate([p[0] for p in parts])
        excluded = sum(p[1] for p in parts)
        if excluded > _MAX_EXCLUDED_FRAC * config.reps:
            raise HarnessAbortError(
                f"{excluded} replicates failed to converge at n={n}")
        ok = ~np.isnan(errs)
        viol = int(np.sum(errs[ok] > feas.beta_0))
        freq = viol / config.reps
        se = math.sqrt(max(freq * (1.0 - freq), 1.0 / config.reps) / config.reps)
        rows.append((n, config.design.p, config.design.row_kind, alpha,
                     sigma_bar_sq, gram.lambda_min, gram.lambda_max, gram.L_n,
                     gram.lambda_max / gram.lambda_min, feas.delta_sq,
                     feas.beta_0, n >= n_min, config.reps, viol, freq, se,
                     float(np.mean(errs[ok])), excluded))
    return ReportTable(config.kind, columns, tuple(rows),
                       _provenance(config, columns, len(rows)))


def run_regression_mdbe(config: ExperimentConfig, threads: int = 1) -> ReportTable:
    """Multi-dimensional normal approximation of the standardised statistic:
    sup over ball radii of |P(|T|^2 <= r) - chi2_p(r)| plus the worst
    axis-aligned half-space gap against Phi."""
    _require_kind(config, "regression_mdbe")
    mom = dist.moments(config.model)
    if math.isinf(mom.abs_central_moment[3.0]):
        raise ConfigError("regression_mdbe requires a finite third moment")
    beta_star = np.asarray(config.design.beta_star, dtype=float)
    p_dim = config.design.p
    columns = ("n", "p", "alpha", "m_phi", "sigma_tilde", "reps", "excluded",
               "ball_gap", "halfspace_gap", "ks_se")
    rows = []
    for n in config.n_list:
        n = int(n)
        X = _make_design(config, n)
        gram = gram_stats(X)
        alpha = default_alpha(n, mom.sigma_sq, config.epsilon)
        m_phi, v_phi = dist.phi_mean_and_var(config.model, alpha, config.phi)
        sigma_tilde = math.sqrt(v_phi) / alpha
        delta_n = delta_n_from_scalar(X, m_phi, alpha, gram.S_n)
        reg_cfg = RegressionConfig(phi=config.phi, alpha=alpha, tol=1e-10)

        def task(r0, count, *, n=n, X=X, delta_n=delta_n,
                 sigma_tilde=sigma_tilde, reg_cfg=reg_cfg, gram=gram):
            T = np.full((count, p_dim), math.nan)
            excluded = 0
            for j in range(count):
                stream = dist.RngStream(config.seed,
                                        _stream_id(config.kind, n, r0 + j))
                eps = dist.draw(config.model, n, stream)
                y = X @ beta_star + eps
                try:
                    fit = solve_regression(RegressionProblem(X, y), reg_cfg)
                except NonConvergenceError:
                    excluded += 1
                    continue
                T[j] = standardize(fit.beta_hat, beta_star, delta_n,
                                   sigma_tilde, gram.S_n, n).T
            return T, excluded

        parts = _map_blocks(task, config.reps, threads)
        T = np.vstack([p[0] for p in parts])
        excluded = sum(p[1] for p in parts)
        if excluded > _MAX_EXCLUDED_FRAC * config.reps:
            raise HarnessAbortError(
                f"{excluded} replicates failed to converge at n={n}")
        T = T[~np.isnan(T[:, 0])]
        m_eff = T.shape[0]
        t2 = np.sort((T * T).sum(axis=1))
        r_grid = _scipy_stats.chi2.ppf(_BALL_PROBS, df=p_dim)
        emp = np.searchsorted(t2, r_grid, side="right") / m_eff
        ball_gap = float(np.max(np.abs(emp - chi2_cdf(r_grid, p_dim))))
        half_gap = max(
            ecdf_sup_distance(np.sort(T[:, j]), std_normal_cdf)
            for j in range(p_dim))
        rows.append((n, p_dim, alpha, m_phi, sigma_tilde, config.reps,
                     excluded, ball_gap, half_gap,
                     0.26 / math.sqrt(config.reps)))
    return ReportTable(config.kind, columns, tuple(rows),
                       _provenance(config, columns, len(rows)))


def run_tail_bounds(config: ExperimentConfig, threads: int = 1) -> ReportTable:
    """Empirical frequency of {n^-1 sum X_i^2 <= sigma^2/4} against its
    exponential upper bound."""
    _require_kind(config, "tail_bounds")
    mom = dist.moments(config.model)
    d2d = dist.d_k(config.model, 2.0 + config.delta)
    columns = ("n", "delta", "d_2_plus_delta", "reps", "frequency", "se",
               "bound", "dominated")
    rows = []
    for n in config.n_list:
        n = int(n)
        threshold = mom.sigma_sq / 4.0

        def task(r0, count, *, n=n):
            X = _draw_block(config.model, n, config.seed, config.kind, r0, count)
            return np.sum((X * X).mean(axis=1) <= threshold)

        hits = sum(_map_blocks(task, config.reps, threads))
        freq = hits / config.reps
        se = math.sqrt(max(freq * (1.0 - freq), 1.0 / config.reps) / config.reps)
        bound = dist.variance_quarter_tail_bound(n, config.delta, d2d)
        rows.append((n, config.delta, d2d, config.reps, freq, se, bound,
                     freq <= bound + 3.0 * se))
    return ReportTable(config.kind, columns, tuple(rows),
                       _provenance(config, columns, len(rows)))


def _require_kind(config: ExperimentConfig, kind: str) -> None:
    if config.kind != kind:
        raise ConfigError(f"config kind '{config.kind}' does not match "
                          f"experiment '{kind}'")


_RUNNERS = {
    "be_mean": run_be_mean,
    "be_self": run_be_self,
    "md_mean": run_md,
    "md_self": run_md,
    "coverage": run_coverage,
    "regression_bound": run_regression_bound,
    "regression_mdbe": run_regression_mdbe,
    "tail_bounds": run_tail_bounds,
}


def run_experiment(config: ExperimentConfig, threads: int = 1) -> ReportTable:
    """Dispatch a validated config to its experiment runner."""
    return _RUNNERS[config.kind](config, threads=threads)
