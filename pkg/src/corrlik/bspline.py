"""B-spline basis by the Cox-de Boor recursion and least-squares surrogates.

Indices are 0-based: with order M and K inner knots the augmented sequence
``tau`` has K + 2M entries and there are K + M basis functions of order M,
``B_0 .. B_{K+M-1}``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .likelihood import LikelihoodCurve
from .numerics import DomainError

CUBIC = 4


class RankDeficientError(np.linalg.LinAlgError):
    """The design matrix of a least-squares fit does not have full column rank."""


@dataclass(frozen=True)
class KnotVector:
    order: int
    boundary: tuple[float, float]
    inner: np.ndarray
    tau: np.ndarray

    @property
    def n_basis(self) -> int:
        return len(self.inner) + self.order


@dataclass(frozen=True)
class SplineModel:
    knots: KnotVector
    coefficients: np.ndarray
    fit_domain: tuple[float, float]

    def __post_init__(self):
        coef = np.asarray(self.coefficients, dtype=float)
        if coef.shape != (self.knots.n_basis,):
            raise ValueError(f"expected {self.knots.n_basis} coefficients, got {coef.shape}")
        object.__setattr__(self, "coefficients", coef)

    def __call__(self, x):
        return evaluate_spline(self, x)


def augment_knots(inner: Sequence[float], boundary: tuple[float, float],
                  order: int = CUBIC) -> KnotVector:
    """Build the augmented knot sequence with ``order``-fold boundary knots."""
    lo, hi = float(boundary[0]), float(boundary[1])
    if not lo < hi:
        raise DomainError(f"boundary must satisfy lo < hi, got {boundary}")
    if order < 1:
        raise DomainError("order must be >= 1")
    inner = np.asarray(inner, dtype=float).ravel()
    if inner.size:
        if np.any(np.diff(inner) < 0):
            raise DomainError("inner knots must be sorted")
        if inner[0] <= lo or inner[-1] >= hi:
            raise DomainError("inner knots must lie strictly inside the boundary")
    tau = np.concatenate([np.full(order, lo), inner, np.full(order, hi)])
    return KnotVector(order, (lo, hi), inner, tau)


def uniform_knots(boundary: tuple[float, float], n_inner: int = 3, order: int = CUBIC) -> KnotVector:
    lo, hi = boundary
    inner = np.linspace(lo, hi, n_inner + 2)[1:-1]
    return augment_knots(inner, boundary, order)


def _last_span(tau: np.ndarray) -> int:
    # index of the last non-degenerate interval; it is closed on the right
    return int(np.flatnonzero(np.diff(tau) > 0)[-1])


def basis(i: int, m: int, x: float, knots: KnotVector) -> float:
    """Single basis function B_{i,m}(x) by direct recursion."""
    tau = knots.tau
    if not 1 <= m <= knots.order:
        raise IndexError(f"order {m} outside 1..{knots.order}")
    if not 0 <= i < len(tau) - m:
        raise IndexError(f"basis index {i} out of range for order {m}")
    last = _last_span(tau)

    def rec(i: int, m: int) -> float:
        if m == 1:
            if tau[i] < tau[i + 1] and (tau[i] <= x < tau[i + 1] or (i == last and x == tau[i + 1])):
                return 1.0
            return 0.0
        out = 0.0
        d1 = tau[i + m - 1] - tau[i]
        if d1 > 0:
            out += (x - tau[i]) / d1 * rec(i, m - 1)
        d2 = tau[i + m] - tau[i + 1]
        if d2 > 0:
            out += (tau[i + m] - x) / d2 * rec(i + 1, m - 1)
        return out

    return rec(i, m)


def basis_matrix(x, knots: KnotVector, order: int | None = None) -> np.ndarray:
    """All order-``order`` basis functions at each x; shape (len(x), n_basis)."""
    tau = knots.tau
    m_max = knots.order if order is None else order
    x = np.atleast_1d(np.asarray(x, dtype=float))
    last = _last_span(tau)
    left, right = tau[:-1], tau[1:]
    b = ((left <= x[:, None]) & (x[:, None] < right)).astype(float)
    at_end = x == tau[last + 1]
    b[at_end, :] = 0.0
    b[at_end, last] = 1.0
    for m in range(2, m_max + 1):
        count = len(tau) - m
        d1 = tau[m - 1:m - 1 + count] - tau[:count]
        d2 = tau[m:m + count] - tau[1:1 + count]
        with np.errstate(divide="ignore", invalid="ignore"):
            w1 = np.where(d1 > 0, (x[:, None] - tau[:count]) / d1, 0.0)
            w2 = np.where(d2 > 0, (tau[m:m + count] - x[:, None]) / d2, 0.0)
        b = w1 * b[:, :count] + w2 * b[:, 1:count + 1]
    return b


def fit_least_squares(xs, ys, knots: KnotVector) -> SplineModel:
    """Least-squares spline coefficients via a QR factorisation of the design."""
    xs = np.asarray(xs, dtype=float).ravel()
    ys = np.asarray(ys, dtype=float).ravel()
    if xs.shape != ys.shape:
        raise ValueError("xs and ys must have the same length")
    lo, hi = knots.boundary
    if xs.size and (xs.min() < lo or xs.max() > hi):
        raise DomainError("abscissae must lie within the knot boundary")
    p = knots.n_basis
    if xs.size < p:
        raise RankDeficientError(f"{xs.size} points cannot determine {p} coefficients")
    design = basis_matrix(xs, knots)
    q, r = np.linalg.qr(design)
    diag = np.abs(np.diag(r))
    if diag.min() <= 1e-12 * diag.max():
        empty = [j for j in range(p) if not np.any(design[:, j] > 0)]
        raise RankDeficientError(
            f"design matrix is rank deficient (basis functions without data: {empty})"
        )
    coef = np.linalg.solve(r, q.T @ ys)
    return SplineModel(knots, coef, (lo, hi))


def evaluate_spline(model: SplineModel, x):
    """sum_i c_i B_i(x); scalar in, scalar out."""
    lo, hi = model.fit_domain
    arr = np.asarray(x, dtype=float)
    slack = 1e-12 * (hi - lo)
    if np.any(arr < lo - slack) or np.any(arr > hi + slack):
        raise DomainError(f"x outside the fitted domain [{lo}, {hi}]")
    values = basis_matrix(np.clip(arr.ravel(), lo, hi), model.knots) @ model.coefficients
    if arr.ndim == 0:
        return float(values[0])
    return values.reshape(arr.shape)


# Maps values at t = 0, 1/3, 2/3, 1 to power-basis coefficients of a cubic in t.
_CUBIC_FROM_VALUES = np.linalg.inv(np.vander(np.array([0.0, 1 / 3, 2 / 3, 1.0]), 4, increasing=True))


def spline_maximum(model: SplineModel) -> tuple[float, float]:
    """Exact maximum of a cubic spline over its fit domain.

    Each polynomial piece is recovered from four values and its stationary
    points solved in closed form; the best of those and the breakpoints wins.
    """
    if model.knots.order != CUBIC:
        raise ValueError("spline_maximum handles cubic splines only")
    lo, hi = model.fit_domain
    breaks = np.unique(np.concatenate([[lo], model.knots.inner, [hi]]))
    a, width = breaks[:-1], np.diff(breaks)
    t = np.array([0.0, 1 / 3, 2 / 3, 1.0])
    values = evaluate_spline(model, a[:, None] + t * width[:, None])
    c0, c1, c2, c3 = (values @ _CUBIC_FROM_VALUES.T).T
    # derivative 3 c3 t^2 + 2 c2 t + c1 = 0
    qa, qb, qc = 3.0 * c3, 2.0 * c2, c1
    disc = qb * qb - 4.0 * qa * qc
    root = np.sqrt(np.maximum(disc, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        quad = np.abs(qa) > 1e-14 * (np.abs(qb) + np.abs(qc))
        r1 = np.where(quad, (-qb + root) / (2.0 * qa), -qc / qb)
        r2 = np.where(quad, (-qb - root) / (2.0 * qa), np.nan)
    real = disc >= 0
    starts = np.concatenate([a[real], a[real]])
    spans = np.concatenate([width[real], width[real]])
    ts = np.concatenate([r1[real], r2[real]])
    inside = np.isfinite(ts) & (ts > 0.0) & (ts < 1.0)
    xs = np.concatenate([starts[inside] + ts[inside] * spans[inside], breaks])
    ys = evaluate_spline(model, xs)
    k = int(np.argmax(ys))
    return float(xs[k]), float(ys[k])


# ---------------------------------------------------------------------------
# log-likelihood surrogates
# ---------------------------------------------------------------------------

# Fit window: grid points whose log-likelihood lies within this many units of
# the maximum. A near-normal likelihood keeps ~5e-4 of its mass beyond a drop
# of 6, which moves 95% interval endpoints by well under 1e-3; wider windows
# force the cubic pieces to chase the log(1 - rho^2) walls instead of the peak.
DEFAULT_WINDOW_DROP = 6.0


def likelihood_window(curve: LikelihoodCurve, window_drop: float | None = DEFAULT_WINDOW_DROP,
                      min_points: int = 0) -> slice:
    """Contiguous grid range around the curve maximum within ``window_drop``.

    ``None`` selects the whole curve. The range is widened symmetrically when
    needed so it holds at least ``min_points`` grid points.
    """
    size = len(curve)
    if window_drop is None:
        return slice(0, size)
    ll = curve.log_lik
    peak = int(np.argmax(ll))
    keep = ll >= ll[peak] - window_drop
    lo = peak
    while lo > 0 and keep[lo - 1]:
        lo -= 1
    hi = peak
    while hi < size - 1 and keep[hi + 1]:
        hi += 1
    while hi - lo + 1 < min(min_points, size):
        if lo > 0:
            lo -= 1
        if hi < size - 1 and hi - lo + 1 < min_points:
            hi += 1
    return slice(lo, hi + 1)


def fit_log_likelihood(curve: LikelihoodCurve, n_inner: int = 3,
                       window_drop: float | None = DEFAULT_WINDOW_DROP,
                       order: int = CUBIC) -> SplineModel:
    """Cubic B-spline least-squares surrogate of a tabulated log-likelihood.

    The fit uses the curve's own grid points inside :func:`likelihood_window`
    and places ``n_inner`` equally spaced inner knots across that window.
    """
    # Ten points per coefficient keeps every basis support populated.
    window = likelihood_window(curve, window_drop, min_points=10 * (n_inner + order))
    xs = curve.rho_grid[window]
    ys = curve.log_lik[window]
    knots = uniform_knots((float(xs[0]), float(xs[-1])), n_inner, order)
    return fit_least_squares(xs, ys, knots)
