"""Combining correlations across studies.

Two routes are provided side by side:

* the classical one: Fisher z-transform each r, average with weights
  (n_i - 3), back-transform, and attach a normal-theory interval;
* the likelihood one: maximise the summed exact log-likelihood (or a B-spline
  surrogate of it) and report highest likelihood regions (HLR).

An HLR normalises exp(log-likelihood) to unit mass over the rho domain and
returns the set of highest values holding the requested mass. For the
unimodal likelihoods met here that set is an interval containing the mode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Callable, Literal, NamedTuple, Sequence, Union

import numpy as np

from . import bspline
from .likelihood import (
    LikelihoodCurve,
    Study,
    build_curve,
    combined_log_likelihood_array,
    log_likelihood,
    rho_domain,
)
from .numerics import (
    ConvergenceError,
    DomainError,
    Tolerance,
    chi_square_quantile,
    chi_square_sf,
    find_root,
    integrate,
    maximize_1d,
)

Method = Literal["asymptotic", "exact_hlr", "spline_hlr"]
HLRMode = Literal["mass", "lr"]

DEFAULT_EPSILON = 1e-3
DEFAULT_GRID = 2001
DEFAULT_KNOTS = 3

_OPT_TOL = Tolerance(abs_tol=1e-10, rel_tol=1e-10, max_iterations=500)
_QUAD_TOL = Tolerance(abs_tol=1e-11, rel_tol=1e-11, max_iterations=2000)
_ROOT_TOL = Tolerance(abs_tol=1e-12, rel_tol=1e-12, max_iterations=500)


class MultimodalError(ValueError):
    """The highest likelihood region is not a single interval."""


@dataclass(frozen=True)
class IntervalEstimate:
    lower: float
    upper: float
    level: float
    method: Method
    mode: str = "mass"

    def __post_init__(self):
        if not -1.0 <= self.lower <= self.upper <= 1.0:
            raise ValueError(f"invalid interval ({self.lower}, {self.upper})")
        if not 0.0 < self.level < 1.0:
            raise ValueError(f"level must lie in (0, 1), got {self.level}")

    def __contains__(self, x: float) -> bool:
        return self.lower <= x <= self.upper

    @property
    def width(self) -> float:
        return self.upper - self.lower


class Homogeneity(NamedTuple):
    q: float
    df: int
    p_value: float

    def critical_value(self, alpha: float = 0.05) -> float:
        return chi_square_quantile(1.0 - alpha, self.df)

    def rejects(self, alpha: float = 0.05) -> bool:
        return self.q > self.critical_value(alpha)


@dataclass(frozen=True)
class MetaResult:
    mle: float
    mle_interval: IntervalEstimate
    pooled: float
    pooled_interval: IntervalEstimate
    q_statistic: float | None
    q_df: int | None
    q_p_value: float | None
    mle_spline: float | None = None
    spline_interval: IntervalEstimate | None = None


@dataclass(frozen=True)
class StudyResult:
    study: Study
    mle: float
    asymptotic: IntervalEstimate
    exact_hlr: IntervalEstimate
    spline_hlr: IntervalEstimate


@dataclass(frozen=True)
class Analysis:
    studies: tuple[Study, ...]
    per_study: tuple[StudyResult, ...]
    combined: MetaResult
    settings: dict = field(default_factory=dict)


def _as_list(studies: Study | Sequence[Study]) -> list[Study]:
    if isinstance(studies, Study):
        return [studies]
    studies = list(studies)
    if not studies:
        raise ValueError("at least one study is required")
    return studies


# ---------------------------------------------------------------------------
# exact combined likelihood
# ---------------------------------------------------------------------------


def combined_log_likelihood(rho: float, studies: Sequence[Study]) -> float:
    return math.fsum(log_likelihood(rho, s) for s in _as_list(studies))


@dataclass(frozen=True)
class ExactLikelihood:
    """Vectorised combined log-likelihood restricted to a rho domain."""

    studies: tuple[Study, ...]
    domain: tuple[float, float]

    @classmethod
    def of(cls, studies, domain_epsilon: float = DEFAULT_EPSILON, support: str = "full"):
        return cls(tuple(_as_list(studies)), rho_domain(domain_epsilon, support))

    def __call__(self, rho):
        values = combined_log_likelihood_array(rho, self.studies)
        return float(values) if np.ndim(values) == 0 else values


LogLik = Union[ExactLikelihood, LikelihoodCurve, bspline.SplineModel]


def _as_function(source: LogLik) -> tuple[Callable, tuple[float, float], Method]:
    if isinstance(source, ExactLikelihood):
        return source, source.domain, "exact_hlr"
    if isinstance(source, bspline.SplineModel):
        return source, source.fit_domain, "spline_hlr"
    if isinstance(source, LikelihoodCurve):
        grid, values = source.rho_grid, source.log_lik

        def interp(x):
            out = np.interp(x, grid, values)
            return float(out) if np.ndim(out) == 0 else out

        return interp, source.domain, "exact_hlr"
    raise TypeError(f"cannot derive a log-likelihood from {type(source).__name__}")


def _peak(f: Callable, lo: float, hi: float, probes: int = 201) -> tuple[float, float]:
    # Locate the bracket on a coarse grid first so a flat start cannot mislead Brent.
    xs = np.linspace(lo, hi, probes)
    ys = np.asarray(f(xs), dtype=float)
    k = int(np.argmax(ys))
    a, b = xs[max(k - 1, 0)], xs[min(k + 1, probes - 1)]
    best = maximize_1d(f, float(a), float(b), _OPT_TOL)
    if not best.converged:
        raise ConvergenceError("likelihood maximisation did not converge", estimate=best.x)
    return best.x, best.fx


def maximize(source: LogLik) -> tuple[float, float]:
    """(argmax, max) of a log-likelihood source over its domain."""
    if isinstance(source, bspline.SplineModel):
        return bspline.spline_maximum(source)
    f, (lo, hi), _ = _as_function(source)
    return _peak(f, lo, hi)


def spline_surrogate(studies, grid_size: int = DEFAULT_GRID, domain_epsilon: float = DEFAULT_EPSILON,
                     n_inner: int = DEFAULT_KNOTS, support: str = "full",
                     window_drop: float | None = bspline.DEFAULT_WINDOW_DROP) -> bspline.SplineModel:
    curve = build_curve(_as_list(studies), grid_size, domain_epsilon, support)
    return bspline.fit_log_likelihood(curve, n_inner, window_drop)


def mle(studies, method: Literal["exact", "spline"] = "exact", *,
        domain_epsilon: float = DEFAULT_EPSILON, grid_size: int = DEFAULT_GRID,
        n_inner: int = DEFAULT_KNOTS, support: str = "full") -> float:
    """Maximiser of the combined log-likelihood or of its spline surrogate."""
    if method == "exact":
        return maximize(ExactLikelihood.of(studies, domain_epsilon, support))[0]
    if method == "spline":
        model = spline_surrogate(studies, grid_size, domain_epsilon, n_inner, support)
        return maximize(model)[0]
    raise ValueError(f"unknown method {method!r}")


# ---------------------------------------------------------------------------
# highest likelihood regions
# ---------------------------------------------------------------------------


def _edge(f, target: float, lo: float, hi: float, peak: float, side: int) -> float:
    end = lo if side < 0 else hi
    if f(peak) <= target:
        # zero drop: the region shrinks to the mode (up to evaluation rounding)
        return peak
    if f(end) >= target:
        return end
    a, b = (end, peak) if side < 0 else (peak, end)
    return find_root(lambda x: f(x) - target, a, b, _ROOT_TOL)


def _check_single_interval(f, lo, hi, a, b, cutoff, probes=801):
    xs = np.linspace(lo, hi, probes)
    ys = np.asarray(f(xs), dtype=float)
    outside = (xs < a) | (xs > b)
    slack = 1e-7 * max(1.0, abs(cutoff))
    if np.any(ys[outside] > cutoff + slack) or np.any(ys[~outside] < cutoff - slack):
        raise MultimodalError("highest likelihood region is not a single interval")


def hlr_interval(source: LogLik, level: float = 0.95, mode: HLRMode = "mass") -> IntervalEstimate:
    """Highest likelihood region of a unimodal log-likelihood.

    ``mode="mass"`` finds the cutoff whose superlevel set holds ``level`` of
    the normalised likelihood mass, by root-finding on the log drop below the
    peak so that the mass matches to 1e-6. ``mode="lr"`` instead uses the
    fixed drop chi2_{1, level} / 2 of the likelihood-ratio interval.
    """
    if not 0.0 < level < 1.0:
        raise DomainError(f"level must lie in (0, 1), got {level}")
    f, (lo, hi), method = _as_function(source)
    peak, top = maximize(source)

    if mode == "lr":
        drop = chi_square_quantile(level, 1) / 2.0
        a = _edge(f, top - drop, lo, hi, peak, -1)
        b = _edge(f, top - drop, lo, hi, peak, +1)
        _check_single_interval(f, lo, hi, a, b, top - drop)
        return IntervalEstimate(a, b, level, method, "lr")
    if mode != "mass":
        raise ValueError(f"unknown HLR mode {mode!r}")

    def density(x):
        return np.exp(np.asarray(f(x), dtype=float) - top)

    def mass(a, b):
        left = integrate(density, a, peak, _QUAD_TOL, vectorized=True) if a < peak else 0.0
        right = integrate(density, peak, b, _QUAD_TOL, vectorized=True) if b > peak else 0.0
        return left + right

    total = mass(lo, hi)

    def region(drop):
        a = _edge(f, top - drop, lo, hi, peak, -1)
        b = _edge(f, top - drop, lo, hi, peak, +1)
        return a, b

    def excess(drop):
        a, b = region(drop)
        return mass(a, b) / total - level

    hi_drop = 1.0
    while excess(hi_drop) < 0:
        hi_drop *= 2.0
        if hi_drop > 1e4:
            raise ConvergenceError("HLR cutoff search diverged")
    drop = find_root(excess, 0.0, hi_drop, Tolerance(1e-12, 1e-12, 500))
    a, b = region(drop)
    # a second mode outside [a, b] is the usual reason the mass misses the level
    _check_single_interval(f, lo, hi, a, b, top - drop)
    if abs(mass(a, b) / total - level) > 1e-6:
        raise ConvergenceError("HLR mass did not reach the requested level")
    return IntervalEstimate(a, b, level, method, "mass")


# ---------------------------------------------------------------------------
# homogeneity
# ---------------------------------------------------------------------------


def homogeneity_test(studies: Sequence[Study], domain_epsilon: float = DEFAULT_EPSILON) -> Homogeneity:
    """Likelihood-ratio test that all studies share one rho.

    Q = -2 [sup over common rho - sum of per-study suprema], referred to
    chi-square with k - 1 degrees of freedom.
    """
    studies = _as_list(studies)
    if len(studies) < 2:
        raise ValueError("the homogeneity test needs at least two studies")
    common = maximize(ExactLikelihood.of(studies, domain_epsilon))[1]
    separate = math.fsum(maximize(ExactLikelihood.of(s, domain_epsilon))[1] for s in studies)
    q = -2.0 * (common - separate)
    if q <= 0:  # also folds -0.0 from equal suprema
        if q < -1e-8:
            raise ConvergenceError(f"negative homogeneity statistic {q}")
        q = 0.0
    df = len(studies) - 1
    return Homogeneity(q, df, chi_square_sf(q, df))


# ---------------------------------------------------------------------------
# Fisher z baseline
# ---------------------------------------------------------------------------


def fisher_z(r: float) -> float:
    if not -1.0 < r < 1.0:
        raise DomainError(f"fisher_z requires |r| < 1, got {r}")
    return math.atanh(r)


def inv_fisher_z(z: float) -> float:
    return math.tanh(z)


def pooled_weights(studies: Sequence[Study]) -> np.ndarray:
    dof = np.array([s.n - 3 for s in _as_list(studies)], dtype=float)
    return dof / dof.sum()


def pooled_z(studies: Sequence[Study]) -> float:
    studies = _as_list(studies)
    return float(pooled_weights(studies) @ np.array([fisher_z(s.r) for s in studies]))


def pooled_estimate(studies: Sequence[Study]) -> float:
    return inv_fisher_z(pooled_z(studies))


def _z_interval(z: float, dof: float, level: float, clamp_at_zero: bool) -> IntervalEstimate:
    if not 0.0 < level < 1.0:
        raise DomainError(f"level must lie in (0, 1), got {level}")
    half = NormalDist().inv_cdf(0.5 * (1.0 + level)) / math.sqrt(dof)
    lower, upper = inv_fisher_z(z - half), inv_fisher_z(z + half)
    if clamp_at_zero:
        lower, upper = max(lower, 0.0), max(upper, 0.0)
    return IntervalEstimate(lower, upper, level, "asymptotic")


def asymptotic_ci(r: float, n: int, level: float = 0.95, clamp_at_zero: bool = False) -> IntervalEstimate:
    """Normal-theory interval z(r) +/- z_crit / sqrt(n - 3), back-transformed."""
    if n < 4:
        raise DomainError(f"asymptotic_ci requires n >= 4, got {n}")
    return _z_interval(fisher_z(r), n - 3.0, level, clamp_at_zero)


def pooled_ci(studies: Sequence[Study], level: float = 0.95, clamp_at_zero: bool = False) -> IntervalEstimate:
    studies = _as_list(studies)
    dof = float(sum(s.n - 3 for s in studies))
    return _z_interval(pooled_z(studies), dof, level, clamp_at_zero)


# ---------------------------------------------------------------------------
# full analysis
# ---------------------------------------------------------------------------


def analyze(studies: Sequence[Study], level: float = 0.95, *, n_inner: int = DEFAULT_KNOTS,
            grid_size: int = DEFAULT_GRID, domain_epsilon: float = DEFAULT_EPSILON,
            hlr_mode: HLRMode = "mass", support: str = "full",
            clamp_asymptotic_at_zero: bool = False) -> Analysis:
    """Per-study and combined estimates in the layout of the summary tables."""
    studies = _as_list(studies)

    def intervals(group):
        exact = ExactLikelihood.of(group, domain_epsilon, support)
        spline = spline_surrogate(group, grid_size, domain_epsilon, n_inner, support)
        return (maximize(exact)[0], hlr_interval(exact, level, hlr_mode),
                maximize(spline)[0], hlr_interval(spline, level, hlr_mode))

    rows = []
    for s in studies:
        rho_hat, exact_iv, _, spline_iv = intervals([s])
        rows.append(StudyResult(s, rho_hat, asymptotic_ci(s.r, s.n, level, clamp_asymptotic_at_zero),
                                exact_iv, spline_iv))

    rho_hat, exact_iv, rho_spline, spline_iv = intervals(studies)
    if len(studies) >= 2:
        q, df, p = homogeneity_test(studies, domain_epsilon)
    else:
        q = df = p = None
    combined = MetaResult(
        mle=rho_hat,
        mle_interval=exact_iv,
        pooled=pooled_estimate(studies),
        pooled_interval=pooled_ci(studies, level, clamp_asymptotic_at_zero),
        q_statistic=q,
        q_df=df,
        q_p_value=p,
        mle_spline=rho_spline,
        spline_interval=spline_iv,
    )
    settings = dict(level=level, knots=n_inner, grid=grid_size, epsilon=domain_epsilon,
                    hlr_mode=hlr_mode, support=support,
                    clamp_asymptotic_at_zero=clamp_asymptotic_at_zero)
    return Analysis(tuple(studies), tuple(rows), combined, settings)
