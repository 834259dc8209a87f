"""Exact likelihood of a population correlation given one sample correlation.

The likelihood of rho for a sample correlation r from n bivariate-normal pairs
is Hotelling's form

    L(rho | r, n) = (n-2)/sqrt(2 pi) * Gamma(n-1)/Gamma(n-1/2)
                    * (1-rho^2)^((n-1)/2) * (1-r^2)^((n-4)/2)
                    * (1-rho r)^-(n-3/2)
                    * 2F1(1/2, 1/2; n-1/2; (1+rho r)/2)

and is evaluated in log space throughout. The exponent on (1 - rho r) is
-(n - 3/2); with -(n - 1/2) the density does not integrate to one (see
``tests/test_likelihood.py::test_density_normalisation``).

:func:`density_r` is Anderson's power-series form of the same density,
summed in arbitrary precision. It shares no code with :func:`log_likelihood`
and exists to cross-check it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import mpmath
import numpy as np
from scipy import special

from .numerics import DEFAULT_TOLERANCE, ConvergenceError, DomainError, Tolerance, integrate

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
MIN_SAMPLE_SIZE = 4

# Tolerance used when the series feeds a log-likelihood; F >= 1 so this is
# also a relative bound.
SERIES_TOLERANCE = Tolerance(abs_tol=1e-15, rel_tol=1e-15, max_iterations=200_000)


@dataclass(frozen=True)
class Study:
    id: str
    r: float
    n: int

    def __post_init__(self):
        if not -1.0 < self.r < 1.0:
            raise DomainError(f"study {self.id!r}: r must lie in (-1, 1), got {self.r}")
        if int(self.n) != self.n or self.n < MIN_SAMPLE_SIZE:
            raise DomainError(
                f"study {self.id!r}: n must be an integer >= {MIN_SAMPLE_SIZE}, got {self.n}"
            )
        object.__setattr__(self, "n", int(self.n))


@dataclass(frozen=True)
class LikelihoodCurve:
    """Log-likelihood tabulated on an equally spaced rho grid."""

    rho_grid: np.ndarray
    log_lik: np.ndarray
    domain_epsilon: float

    def __post_init__(self):
        rho = np.asarray(self.rho_grid, dtype=float)
        ll = np.asarray(self.log_lik, dtype=float)
        if rho.ndim != 1 or rho.shape != ll.shape or rho.size < 2:
            raise ValueError("rho_grid and log_lik must be 1-D of equal length >= 2")
        if np.any(np.diff(rho) <= 0):
            raise ValueError("rho_grid must be strictly increasing")
        if not np.all(np.isfinite(ll)):
            raise ValueError("log_lik values must be finite")
        object.__setattr__(self, "rho_grid", rho)
        object.__setattr__(self, "log_lik", ll)

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.rho_grid[0]), float(self.rho_grid[-1])

    @property
    def argmax(self) -> float:
        return float(self.rho_grid[np.argmax(self.log_lik)])

    def __len__(self):
        return self.rho_grid.size


# ---------------------------------------------------------------------------
# Gauss hypergeometric series
# ---------------------------------------------------------------------------


class SeriesResult(NamedTuple):
    value: float
    tail_bound: float
    terms: int
    certificate: str = "ratio"  # which bound certified the tail: "ratio", "integral" or "exact"


def _ratio_sup(a: float, b: float, c: float, j: float) -> float:
    """sup over t >= j of (t+a)(t+b) / ((t+c)(t+1)).

    Writing the ratio as 1 + h(t) with h = (alpha t + beta) / ((t+c)(t+1)),
    the supremum is attained at j, at a stationary point of h, or in the
    limit t -> inf where h -> 0.
    """
    alpha = a + b - c - 1.0
    beta = a * b - c

    def h(t):
        return (alpha * t + beta) / ((t + c) * (t + 1.0))

    best = max(h(j), 0.0)
    # stationary points: alpha t^2 + 2 beta t + beta (c+1) - alpha c = 0
    if alpha != 0.0:
        disc = beta * beta - alpha * (beta * (c + 1.0) - alpha * c)
        if disc >= 0.0:
            root = math.sqrt(disc)
            for t in ((-beta + root) / alpha, (-beta - root) / alpha):
                if t > j:
                    best = max(best, h(t))
    elif beta != 0.0:
        t = -(c + 1.0) / 2.0
        if t > j:
            best = max(best, h(t))
    return 1.0 + best


def _series(a: float, b: float, c: float, x: float, tol: Tolerance) -> SeriesResult:
    # Terms follow t_{j+1} = t_j (a+j)(b+j) x / ((c+j)(j+1)). After summing
    # through index m the remainder is certified by whichever bound meets
    # tol first:
    #   ratio:    |t_{m+1}| / (1 - q), q = x * sup_{j > m} ratio (once signs are stable);
    #   integral: t_{m+1} + int_{m+1}^inf t_s ds (all parameters positive).
    # The integral bound needs a quadrature, so it is only tried once the
    # estimate t_{m+1} (1 + 1 / -ln(ratio)) predicts that it will succeed.
    sign_stable_from = max(-a, -b, -c, 0.0)
    integral_ok = a > 0 and b > 0 and c > 0 and 0.0 < x < 1.0
    term = 1.0
    total = 1.0
    if x == 0.0:
        return SeriesResult(1.0, 0.0, 1, "exact")
    comp = 0.0  # Kahan compensation
    for j in range(tol.max_iterations):
        term *= (a + j) * (b + j) / ((c + j) * (j + 1.0)) * x
        y = term - comp
        t = total + y
        comp = (t - total) - y
        total = t
        if term == 0.0:
            return SeriesResult(total, 0.0, j + 2, "exact")
        nxt = j + 1.0
        if nxt > sign_stable_from:
            q = x * _ratio_sup(a, b, c, nxt)
            if q < 1.0:
                following = abs(term) * q
                if following / (1.0 - q) <= tol.abs_tol:
                    return SeriesResult(total, following / (1.0 - q), j + 2, "ratio")
                if integral_ok:
                    ratio = (a + nxt) * (b + nxt) / ((c + nxt) * (nxt + 1.0)) * x
                    if ratio < 1.0 and abs(term) * ratio * (1.0 - 1.0 / math.log(ratio)) <= tol.abs_tol:
                        upper = integral_test_bounds(a, b, c, x, j + 1)[1]
                        if upper <= tol.abs_tol:
                            return SeriesResult(total, upper, j + 2, "integral")
    raise ConvergenceError(
        f"2F1({a}, {b}; {c}; {x}) needs more than {tol.max_iterations} terms",
        estimate=total,
    )


def _check_series_args(c: float, x: float) -> None:
    if not c > 0:
        raise DomainError(f"2F1 requires c > 0, got {c}")
    if not 0.0 <= x < 1.0:
        raise DomainError(f"2F1 series requires 0 <= x < 1, got {x}")


def hyp2f1_series(a: float, b: float, c: float, x: float,
                  tol: Tolerance = DEFAULT_TOLERANCE) -> SeriesResult:
    """Direct power series for 2F1(a, b; c; x) with a certified tail bound.

    Summation stops as soon as the remaining terms are provably below
    ``tol.abs_tol``; the returned ``tail_bound`` is that certificate.
    """
    _check_series_args(c, x)
    return _series(float(a), float(b), float(c), float(x), tol)


def gauss_hypergeometric_F(a: float, b: float, c: float, x: float,
                           tol: Tolerance = DEFAULT_TOLERANCE) -> float:
    return hyp2f1_series(a, b, c, x, tol).value


def _log_term(a: float, b: float, c: float, x: float, t):
    """Natural log of the series term at (possibly fractional) index t."""
    t = np.asarray(t, dtype=float)
    return (special.gammaln(a + t) - special.gammaln(a) + special.gammaln(b + t)
            - special.gammaln(b) + special.gammaln(c) - special.gammaln(c + t)
            - special.gammaln(t + 1.0) + t * math.log(x))


def integral_test_bounds(a: float, b: float, c: float, x: float, m: int) -> tuple[float, float]:
    """Bracket the series remainder after index m by the integral test.

    With the term a_t extended to real t through Gamma functions and
    decreasing on [m+1, inf),

        int_{m+1}^inf a_t dt  <=  sum_{j > m} a_j  <=  a_{m+1} + int_{m+1}^inf a_t dt.

    Requires positive parameters and 0 < x < 1. The integral is computed by
    quadrature over a finite window, with the geometric remainder beyond the
    window added to the upper bound.
    """
    if not (a > 0 and b > 0 and c > 0 and 0.0 < x < 1.0):
        raise DomainError("integral_test_bounds needs a, b, c > 0 and 0 < x < 1")
    start = float(m + 1)
    if x * _ratio_sup(a, b, c, start) >= 1.0:
        raise DomainError("terms are not yet decreasing at the requested index")
    log_first = float(_log_term(a, b, c, x, start))
    # Terms shrink at least like x^t; stretch the window until that envelope
    # drops 40 orders of magnitude below the first term.
    width = max(20.0, 40.0 * math.log(10.0) / -math.log(x))

    def f(t):
        return np.exp(_log_term(a, b, c, x, t) - log_first)

    scale = math.exp(log_first)
    # panels of doubling width keep the quadrature resolving the fast initial decay
    edges = [start]
    step = 1.0
    while edges[-1] < start + width:
        edges.append(min(edges[-1] + step, start + width))
        step *= 2.0
    panel_tol = Tolerance(1e-13, 1e-12, 2000)
    inner = math.fsum(integrate(f, lo, hi, panel_tol, vectorized=True) for lo, hi in zip(edges[:-1], edges[1:]))
    q = x * _ratio_sup(a, b, c, start + width)
    beyond = float(f(start + width)) / -math.log(q)
    lower = scale * inner
    upper = scale * (1.0 + inner + beyond)
    return lower, upper


def _series_array(a, b, c, x, tol: Tolerance) -> np.ndarray:
    """Vectorised :func:`_series` over broadcast ``c`` and ``x``.

    Each element leaves the working set as soon as its own tail bound is
    certified, so the cost tracks the slowest-converging element only for
    that element.
    """
    a = float(a)
    b = float(b)
    c, x = np.broadcast_arrays(np.asarray(c, dtype=float), np.asarray(x, dtype=float))
    c = c.ravel().copy()
    x = x.ravel().copy()
    total = np.ones_like(x)
    idx = np.flatnonzero(x != 0.0)
    ca, xa = c[idx], x[idx]
    ta = np.ones_like(xa)
    sa = np.ones_like(xa)
    sup = _RatioSup(a, b, ca)
    stable = np.maximum(np.maximum(-ca, max(-a, -b)), 0.0)
    for j in range(tol.max_iterations):
        if idx.size == 0:
            break
        ta *= (a + j) * (b + j) / ((ca + j) * (j + 1.0)) * xa
        sa += ta
        nxt = j + 1.0
        q = xa * sup(nxt)
        with np.errstate(divide="ignore", invalid="ignore"):
            bound = np.abs(ta) * q / (1.0 - q)
        done = ((nxt > stable) & (q < 1.0) & (bound <= tol.abs_tol)) | (ta == 0.0)
        if done.any():
            total[idx[done]] = sa[done]
            keep = ~done
            idx, ca, xa, ta, sa, stable = idx[keep], ca[keep], xa[keep], ta[keep], sa[keep], stable[keep]
            sup = sup.subset(keep)
    else:
        if idx.size:
            raise ConvergenceError(f"2F1 series: {idx.size} elements did not converge")
    return total


class _RatioSup:
    """Array form of :func:`_ratio_sup` with the stationary points solved once."""

    def __init__(self, a: float, b: float, c: np.ndarray, _state=None):
        if _state is not None:
            self.alpha, self.beta, self.c, self.roots, self.peaks, self.trivial = _state
            return
        self.c = c
        self.alpha = a + b - c - 1.0
        self.beta = a * b - c
        # h(t) <= 0 for all t >= 0 when alpha, beta <= 0, so the sup is 1
        self.trivial = bool(np.all((self.alpha <= 0) & (self.beta <= 0)))
        alpha, beta = self.alpha, self.beta
        with np.errstate(divide="ignore", invalid="ignore"):
            disc = beta * beta - alpha * (beta * (c + 1.0) - alpha * c)
            root = np.sqrt(np.where(disc >= 0, disc, np.nan))
            roots = [(-beta + root) / alpha, (-beta - root) / alpha]
        roots = [np.where(np.isfinite(t), t, -np.inf) for t in roots]
        self.roots = roots
        self.peaks = [self._h(np.where(np.isfinite(t), t, 0.0)) for t in roots]

    def _h(self, t):
        return (self.alpha * t + self.beta) / ((t + self.c) * (t + 1.0))

    def subset(self, keep):
        if self.trivial:
            return self
        state = (self.alpha[keep], self.beta[keep], self.c[keep],
                 [t[keep] for t in self.roots], [p[keep] for p in self.peaks], False)
        return _RatioSup(0.0, 0.0, None, state)

    def __call__(self, j: float):
        if self.trivial:
            return 1.0
        best = np.maximum(self._h(j), 0.0)
        for t, peak in zip(self.roots, self.peaks):
            best = np.where(t > j, np.maximum(best, peak), best)
        return 1.0 + best


# Below this c the direct series slows down sharply as x -> 1.
_CONNECTION_MAX_C = 20.0
_CONNECTION_MIN_X = 0.5


def hyp2f1_half(c, x, tol: Tolerance = SERIES_TOLERANCE) -> np.ndarray:
    """2F1(1/2, 1/2; c; x) for half-integer c >= 3/2 and 0 <= x < 1.

    Uses the direct series except when c is small and x > 1/2, where the
    direct series needs up to ~1e5 terms. There the x -> 1 - x connection
    formula is used; with s = c - 1 a half-integer it has no logarithmic
    terms and both series converge at least as fast as 2^-j:

        F(x) = A * F(1/2, 1/2; 1-s; 1-x) + (-1)^(s+1/2) * ((1-x)/x)^s * F(1/2, 1/2; c; 1-x)

    with A = Gamma(c) Gamma(s) / Gamma(c - 1/2)^2.
    """
    c, x = np.broadcast_arrays(np.asarray(c, dtype=float), np.asarray(x, dtype=float))
    shape = x.shape
    c = c.ravel()
    x = x.ravel()
    if np.any((x < 0) | (x >= 1)):
        raise DomainError("hyp2f1_half requires 0 <= x < 1")
    out = np.empty_like(x)
    conn = (c < _CONNECTION_MAX_C) & (x > _CONNECTION_MIN_X)
    direct = ~conn
    if np.any(direct):
        out[direct] = _series_array(0.5, 0.5, c[direct], x[direct], tol)
    if np.any(conn):
        cc = c[conn]
        s = cc - 1.0
        y = 1.0 - x[conn]
        log_a = special.gammaln(cc) + special.gammaln(s) - 2.0 * special.gammaln(cc - 0.5)
        first = _series_array(0.5, 0.5, 1.0 - s, y, tol)
        second = _series_array(0.5, 0.5, cc, y, tol)
        sign = np.where(np.round(s - 0.5) % 2 == 0, -1.0, 1.0)
        out[conn] = np.exp(log_a) * first + sign * np.exp(s * np.log(y / x[conn])) * second
    return out.reshape(shape)


# ---------------------------------------------------------------------------
# likelihood
# ---------------------------------------------------------------------------


class LikelihoodTerms(NamedTuple):
    """Additive pieces of ln L(rho | r, n)."""

    constant: float
    rho_factor: float  # (n-1)/2 ln(1 - rho^2)
    r_factor: float  # (n-4)/2 ln(1 - r^2)
    cross_factor: float  # -(n - 3/2) ln(1 - rho r)
    log_series: float  # ln 2F1(1/2, 1/2; n - 1/2; (1 + rho r)/2)

    @property
    def total(self) -> float:
        return self.constant + self.rho_factor + self.r_factor + self.cross_factor + self.log_series


def _log_constant(n):
    n = np.asarray(n, dtype=float)
    return np.log(n - 2.0) - LOG_SQRT_2PI + special.gammaln(n - 1.0) - special.gammaln(n - 0.5)


def log_likelihood_array(rho, r, n) -> np.ndarray:
    """Broadcasting log-likelihood; ``rho``, ``r`` and ``n`` are array-like.

    No validation of ``r`` or ``n`` beyond what numpy enforces; use
    :func:`log_likelihood` for checked scalar calls.
    """
    rho = np.asarray(rho, dtype=float)
    r = np.asarray(r, dtype=float)
    n = np.asarray(n, dtype=float)
    if np.any(np.abs(rho) >= 1.0):
        raise DomainError("log-likelihood diverges at |rho| = 1")
    rr = rho * r
    return (_log_constant(n)
            + 0.5 * (n - 1.0) * np.log1p(-rho * rho)
            + 0.5 * (n - 4.0) * np.log1p(-r * r)
            - (n - 1.5) * np.log1p(-rr)
            + np.log(hyp2f1_half(n - 0.5, 0.5 * (1.0 + rr))))


def likelihood_terms(rho: float, study: Study) -> LikelihoodTerms:
    if not abs(rho) < 1.0:
        raise DomainError(f"log-likelihood diverges at |rho| = 1 (rho={rho})")
    n, r = study.n, study.r
    rr = rho * r
    return LikelihoodTerms(
        constant=float(_log_constant(n)),
        rho_factor=0.5 * (n - 1.0) * math.log1p(-rho * rho),
        r_factor=0.5 * (n - 4.0) * math.log1p(-r * r),
        cross_factor=-(n - 1.5) * math.log1p(-rr),
        log_series=math.log(float(hyp2f1_half(n - 0.5, 0.5 * (1.0 + rr)))),
    )


def log_likelihood(rho: float, study: Study) -> float:
    return likelihood_terms(rho, study).total


# ---------------------------------------------------------------------------
# Anderson's series form (independent oracle)
# ---------------------------------------------------------------------------


def _anderson_sum(x: mpmath.mpf, n: int, tail_rel: float):
    # sum_k (2x)^k / k! * g_k^2 with g_k = Gamma((n-1+k)/2) / Gamma((n-1)/2);
    # returns the signed sum and the sum of absolute terms.
    two_x = 2 * x
    g = [mpmath.mpf(1), mpmath.gamma(mpmath.mpf(n) / 2) / mpmath.gamma(mpmath.mpf(n - 1) / 2)]
    power = two_x  # (2x)^k / k! at k = 1
    terms = [mpmath.mpf(1), power * g[1] ** 2]
    total = terms[0] + terms[1]
    abs_total = abs(terms[0]) + abs(terms[1])
    k = 1
    while True:
        k += 1
        power = power * two_x / k
        g[k % 2] = g[k % 2] * mpmath.mpf(n - 3 + k) / 2
        term = power * g[k % 2] ** 2
        total += term
        abs_total += abs(term)
        terms = [terms[1], term]
        # |t_{j+2} / t_j| = (2x)^2 ((n-1+j)/2)^2 / ((j+1)(j+2)) decreases in j,
        # so its value at j = k-1 bounds every later step of both parities.
        q = two_x ** 2 * (mpmath.mpf(n - 2 + k) / 2) ** 2 / (k * (k + 1))
        if q < 1:
            tail = (abs(terms[0]) + abs(terms[1])) * q / (1 - q)
            if tail <= tail_rel * abs(total):
                return total, abs_total


def density_r(r: float, rho: float, n: int) -> float:
    """Sampling density of r given rho and n from Anderson's series.

    Terms alternate in sign when rho * r < 0, losing roughly
    (n - 3/2) log10((1+|rho r|)/(1-|rho r|)) digits to cancellation, so the
    sum runs in mpmath with that many extra digits and is repeated with 20
    more until two precisions agree.
    """
    return math.exp(log_density_r(r, rho, n))


def log_density_r(r: float, rho: float, n: int) -> float:
    if not (-1.0 < r < 1.0 and -1.0 < rho < 1.0):
        raise DomainError("density_r requires r and rho in (-1, 1)")
    if int(n) != n or n < MIN_SAMPLE_SIZE:
        raise DomainError(f"density_r requires integer n >= {MIN_SAMPLE_SIZE}")
    n = int(n)
    xr = rho * r
    dps = 30
    if xr < 0:
        dps += int(math.ceil((n - 1.5) * math.log10((1 - xr) / (1 + xr))))
    previous = None
    while dps <= 8000:
        with mpmath.workdps(dps):
            x = mpmath.mpf(rho) * mpmath.mpf(r)
            total, _ = _anderson_sum(x, n, 1e-18)
            lead = (
                (n - 3) * mpmath.log(2)
                + mpmath.mpf(n - 1) / 2 * mpmath.log1p(-mpmath.mpf(rho) ** 2)
                + mpmath.mpf(n - 4) / 2 * mpmath.log1p(-mpmath.mpf(r) ** 2)
                - mpmath.log(mpmath.pi)
                - mpmath.loggamma(n - 2)
                + 2 * mpmath.loggamma(mpmath.mpf(n - 1) / 2)
            )
            value = float(lead + mpmath.log(total)) if total > 0 else None
        if value is not None and previous is not None and abs(value - previous) <= 1e-13 * max(1.0, abs(value)):
            return value
        previous = value
        dps += 20
    raise ConvergenceError("density_r: precision escalation failed")


# ---------------------------------------------------------------------------
# curves
# ---------------------------------------------------------------------------


def rho_domain(domain_epsilon: float, support: str = "full") -> tuple[float, float]:
    """Truncated rho domain: [-1+eps, 1-eps], or [0, 1-eps] for nonnegative support."""
    if not 0.0 < domain_epsilon <= 0.5:
        raise DomainError(f"domain_epsilon must lie in (0, 0.5], got {domain_epsilon}")
    if support == "full":
        return -1.0 + domain_epsilon, 1.0 - domain_epsilon
    if support == "nonnegative":
        return 0.0, 1.0 - domain_epsilon
    raise ValueError(f"unknown support {support!r}")


def _as_studies(studies: Study | Sequence[Study]) -> list[Study]:
    if isinstance(studies, Study):
        return [studies]
    studies = list(studies)
    if not studies:
        raise ValueError("at least one study is required")
    return studies


def combined_log_likelihood_array(rho, studies: Study | Sequence[Study]) -> np.ndarray:
    studies = _as_studies(studies)
    rho = np.asarray(rho, dtype=float)
    r = np.array([s.r for s in studies])
    n = np.array([s.n for s in studies])
    values = log_likelihood_array(rho[..., None], r, n)
    return values.sum(axis=-1)


def build_curve(studies: Study | Sequence[Study], grid_size: int = 2001,
                domain_epsilon: float = 1e-3, support: str = "full") -> LikelihoodCurve:
    """Tabulate the (summed) log-likelihood on an equally spaced grid."""
    if grid_size < 2:
        raise DomainError("grid_size must be >= 2")
    lo, hi = rho_domain(domain_epsilon, support)
    grid = np.linspace(lo, hi, grid_size)
    if grid_size % 2:
        grid[grid_size // 2] = 0.5 * (lo + hi)
    return LikelihoodCurve(grid, combined_log_likelihood_array(grid, studies), domain_epsilon)
