"""Special functions, quadrature and 1-D optimisation used across the package.

Everything here is a pure function of its arguments. The chi-square routines
only cover what the homogeneity test needs; this is not a distribution library.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy import optimize, special


class DomainError(ValueError):
    """An argument lies outside the domain of the function."""


class ConvergenceError(RuntimeError):
    """An iterative method ran out of iterations.

    The best estimate found so far and its error bound are attached so callers
    can decide whether it is still usable.
    """

    def __init__(self, message: str, estimate: float = math.nan, error: float = math.inf):
        super().__init__(message)
        self.estimate = estimate
        self.error = error


@dataclass(frozen=True)
class Tolerance:
    abs_tol: float = 1e-9
    rel_tol: float = 1e-9
    max_iterations: int = 10_000

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise DomainError("tolerances must be positive")
        if self.max_iterations < 1:
            raise DomainError("max_iterations must be >= 1")


DEFAULT_TOLERANCE = Tolerance()


def log_gamma(x: float) -> float:
    """ln Gamma(x) for x > 0."""
    if not x > 0:
        raise DomainError(f"log_gamma requires x > 0, got {x!r}")
    return math.lgamma(x)


# ---------------------------------------------------------------------------
# chi-square
# ---------------------------------------------------------------------------


def _check_df(df: int) -> None:
    if int(df) != df or df < 1:
        raise DomainError(f"degrees of freedom must be a positive integer, got {df!r}")


def chi_square_cdf(q: float, df: int) -> float:
    _check_df(df)
    if q < 0:
        raise DomainError(f"chi-square argument must be >= 0, got {q!r}")
    return float(special.gammainc(df / 2.0, q / 2.0))


def chi_square_sf(q: float, df: int) -> float:
    """Upper tail probability P(X >= q) of a chi-square variable."""
    _check_df(df)
    if q < 0:
        raise DomainError(f"chi-square argument must be >= 0, got {q!r}")
    return float(special.gammaincc(df / 2.0, q / 2.0))


def chi_square_quantile(p: float, df: int) -> float:
    """Inverse of the chi-square CDF, found by bisection.

    The bracket is grown geometrically until it contains the quantile, then
    halved until its width is below 1e-12.
    """
    _check_df(df)
    if not 0.0 <= p < 1.0:
        raise DomainError(f"probability must lie in [0, 1), got {p!r}")
    if p == 0.0:
        return 0.0
    lo, hi = 0.0, max(1.0, float(df))
    while chi_square_cdf(hi, df) < p:
        lo, hi = hi, 2.0 * hi
    while hi - lo > 1e-12 * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if chi_square_cdf(mid, df) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------

# Gauss-Kronrod 7/15 abscissae and weights on [-1, 1].
_XGK = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
])
_WGK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
])
_NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])
_KRONROD_W = np.concatenate([_WGK[:-1], _WGK[::-1]])
# Gauss nodes are the odd-indexed Kronrod nodes (xgk[1], xgk[3], ..., 0).
_GAUSS_W = np.zeros(15)
_GAUSS_W[[1, 3, 5, 7, 9, 11, 13]] = np.concatenate([_WG[:-1], [_WG[-1]], _WG[:-1][::-1]])


class IntegrationResult(NamedTuple):
    value: float
    error: float
    intervals: int


def _gk15(f, a: float, b: float, vectorized: bool) -> tuple[float, float]:
    half = 0.5 * (b - a)
    mid = 0.5 * (a + b)
    x = mid + half * _NODES
    if vectorized:
        fx = np.asarray(f(x), dtype=float)
    else:
        fx = np.array([f(float(t)) for t in x], dtype=float)
    if not np.all(np.isfinite(fx)):
        raise DomainError(f"integrand is not finite on [{a}, {b}]")
    kronrod = half * float(_KRONROD_W @ fx)
    gauss = half * float(_GAUSS_W @ fx)
    return kronrod, abs(kronrod - gauss)


def integrate_adaptive(
    f: Callable[[float], float],
    a: float,
    b: float,
    tol: Tolerance = DEFAULT_TOLERANCE,
    vectorized: bool = False,
) -> IntegrationResult:
    """Globally adaptive Gauss-Kronrod (7, 15) quadrature.

    The interval with the largest local error estimate is bisected until the
    summed error falls below ``max(abs_tol, rel_tol * |I|)``. With
    ``vectorized=True`` the integrand is called once per panel on an array of
    15 nodes.

    Raises
    ------
    ConvergenceError
        After ``tol.max_iterations`` bisections; carries the best estimate.
    """
    if not a < b:
        raise DomainError(f"integrate requires a < b, got [{a}, {b}]")
    value, err = _gk15(f, a, b, vectorized)
    heap = [(-err, a, b, value)]
    total, total_err = value, err
    splits = 0
    while total_err > max(tol.abs_tol, tol.rel_tol * abs(total)):
        if splits >= tol.max_iterations:
            raise ConvergenceError(
                f"quadrature did not converge after {splits} subdivisions",
                estimate=total, error=total_err,
            )
        neg_err, lo, hi, v = heapq.heappop(heap)
        mid = 0.5 * (lo + hi)
        v1, e1 = _gk15(f, lo, mid, vectorized)
        v2, e2 = _gk15(f, mid, hi, vectorized)
        heapq.heappush(heap, (-e1, lo, mid, v1))
        heapq.heappush(heap, (-e2, mid, hi, v2))
        splits += 1
        # Re-sum from the heap so rounding in running totals cannot accumulate.
        total = math.fsum(item[3] for item in heap)
        total_err = math.fsum(-item[0] for item in heap)
    return IntegrationResult(total, total_err, len(heap))


def integrate(
    f: Callable[[float], float],
    a: float,
    b: float,
    tol: Tolerance = DEFAULT_TOLERANCE,
    vectorized: bool = False,
) -> float:
    """Integral of ``f`` over ``[a, b]``; see :func:`integrate_adaptive`."""
    return integrate_adaptive(f, a, b, tol, vectorized).value


# ---------------------------------------------------------------------------
# root finding and maximisation
# ---------------------------------------------------------------------------


def find_root(f: Callable[[float], float], lo: float, hi: float,
              tol: Tolerance = DEFAULT_TOLERANCE) -> float:
    """Root of ``f`` in a sign-changing bracket (Brent's method)."""
    flo, fhi = f(lo), f(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if flo * fhi > 0:
        raise DomainError(f"root is not bracketed by [{lo}, {hi}]")
    try:
        return optimize.brentq(f, lo, hi, xtol=tol.abs_tol, rtol=max(tol.rel_tol, 4.5e-16),
                               maxiter=tol.max_iterations)
    except RuntimeError as exc:
        raise ConvergenceError(str(exc)) from exc


class Maximum(NamedTuple):
    x: float
    fx: float
    converged: bool
    iterations: int


_GOLDEN = 0.5 * (3.0 - math.sqrt(5.0))


def maximize_1d(f: Callable[[float], float], lo: float, hi: float,
                tol: Tolerance = DEFAULT_TOLERANCE) -> Maximum:
    """Maximise a unimodal function on ``[lo, hi]``.

    Brent's combination of golden-section steps and parabolic interpolation.
    The endpoints are compared with the interior optimum at the end, so a
    function that is monotone on the bracket returns the right endpoint.
    Running out of iterations does not raise; ``converged`` is False instead.
    """
    if not lo < hi:
        raise DomainError(f"maximize_1d requires lo < hi, got [{lo}, {hi}]")

    def g(t):
        return -f(t)

    a, b = lo, hi
    x = w = v = a + _GOLDEN * (b - a)
    fx = fw = fv = g(x)
    d = e = 0.0
    converged = False
    it = 0
    for it in range(1, tol.max_iterations + 1):
        m = 0.5 * (a + b)
        tol1 = tol.rel_tol * abs(x) + tol.abs_tol / 3.0
        tol2 = 2.0 * tol1
        if abs(x - m) <= tol2 - 0.5 * (b - a):
            converged = True
            break
        use_golden = True
        if abs(e) > tol1:
            r = (x - w) * (fx - fv)
            q = (x - v) * (fx - fw)
            p = (x - v) * q - (x - w) * r
            q = 2.0 * (q - r)
            if q > 0:
                p = -p
            q = abs(q)
            if abs(p) < abs(0.5 * q * e) and q * (a - x) < p < q * (b - x):
                e, d = d, p / q
                u = x + d
                if (u - a) < tol2 or (b - u) < tol2:
                    d = tol1 if x < m else -tol1
                use_golden = False
        if use_golden:
            e = (b - x) if x < m else (a - x)
            d = _GOLDEN * e
        u = x + d if abs(d) >= tol1 else x + (tol1 if d > 0 else -tol1)
        fu = g(u)
        if fu <= fx:
            if u < x:
                b = x
            else:
                a = x
            v, fv, w, fw, x, fx = w, fw, x, fx, u, fu
        else:
            if u < x:
                a = u
            else:
                b = u
            if fu <= fw or w == x:
                v, fv, w, fw = w, fw, u, fu
            elif fu <= fv or v == x or v == w:
                v, fv = u, fu
    best_x, best_f = x, -fx
    for end in (lo, hi):
        fe = f(end)
        if fe > best_f:
            best_x, best_f = end, fe
    return Maximum(best_x, best_f, converged, it)
