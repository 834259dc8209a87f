"""Monte Carlo comparison of the pooled Fisher-z estimator with the MLEs.

Each replication draws one sample correlation per study from bivariate
normal data with the case's true rho and computes three estimates: the
pooled z-average, the exact combined-likelihood MLE, and the MLE of the
spline surrogate. Mean squared errors against the true rho are returned.

Replication ``i`` draws from its own generator spawned from the case seed, so
results do not depend on chunking or evaluation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import bspline
from .likelihood import LikelihoodCurve, log_likelihood_array, rho_domain
from .meta import maximize
from .numerics import DomainError

# The eight cases: five studies each, n = 4 or n = 100.
BENCHMARK_CASES: dict[int, tuple[float, tuple[int, ...]]] = {
    1: (0.2, (4,) * 5),
    2: (0.2, (100,) * 5),
    3: (-0.3, (4,) * 5),
    4: (-0.3, (100,) * 5),
    5: (0.6, (4,) * 5),
    6: (0.6, (100,) * 5),
    7: (-0.7, (4,) * 5),
    8: (-0.7, (100,) * 5),
}

MAX_RESAMPLES = 100
SIM_GRID = 401
_CHUNK = 256
_GOLDEN_ITERATIONS = 36


@dataclass(frozen=True)
class SimCase:
    rho: float
    sizes: tuple[int, ...]
    replications: int = 100
    seed: int = 0

    def __post_init__(self):
        if not -1.0 < self.rho < 1.0:
            raise DomainError(f"rho must lie in (-1, 1), got {self.rho}")
        sizes = tuple(int(n) for n in self.sizes)
        if not sizes or any(n < 4 for n in sizes):
            raise DomainError(f"every sample size must be >= 4, got {self.sizes}")
        if self.replications < 1:
            raise DomainError("replications must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise DomainError("seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "sizes", sizes)

    @classmethod
    def benchmark(cls, case: int, replications: int = 100, seed: int = 0) -> "SimCase":
        rho, sizes = BENCHMARK_CASES[case]
        return cls(rho, sizes, replications, seed)


@dataclass(frozen=True)
class SimResult:
    mse_pooled: float
    mse_mle_exact: float
    mse_mle_spline: float
    replications_used: int
    se_pooled: float = math.nan
    se_mle_exact: float = math.nan
    se_mle_spline: float = math.nan
    failed: tuple[int, ...] = field(default=())
    resamples: int = 0


def sample_correlation(rho: float, n: int, rng: np.random.Generator) -> tuple[float, int]:
    """Pearson r of n draws from a standard bivariate normal with correlation rho.

    Returns ``(r, resamples)``; a degenerate draw (zero variance, or |r|
    rounding to 1) is redrawn, at most ``MAX_RESAMPLES`` times.
    """
    if not -1.0 < rho < 1.0:
        raise DomainError(f"rho must lie in (-1, 1), got {rho}")
    if n < 4:
        raise DomainError(f"n must be >= 4, got {n}")
    scale = math.sqrt(1.0 - rho * rho)
    for attempt in range(MAX_RESAMPLES + 1):
        z = rng.standard_normal((2, n))
        x = z[0]
        y = rho * z[0] + scale * z[1]
        dx = x - x.mean()
        dy = y - y.mean()
        sxx = float(dx @ dx)
        syy = float(dy @ dy)
        if sxx > 0 and syy > 0:
            r = float(dx @ dy) / math.sqrt(sxx * syy)
            if abs(r) < 1.0:
                return r, attempt
    raise RuntimeError(f"no non-degenerate sample after {MAX_RESAMPLES} redraws")


def draw_correlations(case: SimCase) -> tuple[np.ndarray, int]:
    """Sample correlations, shape (replications, studies), and the redraw count."""
    streams = np.random.SeedSequence(case.seed).spawn(case.replications)
    out = np.empty((case.replications, len(case.sizes)))
    redraws = 0
    for i, ss in enumerate(streams):
        rng = np.random.Generator(np.random.PCG64(ss))
        for j, n in enumerate(case.sizes):
            out[i, j], k = sample_correlation(case.rho, n, rng)
            redraws += k
    return out, redraws


def pooled_estimates(r: np.ndarray, sizes: Sequence[int]) -> np.ndarray:
    w = np.asarray(sizes, dtype=float) - 3.0
    return np.tanh(np.arctanh(r) @ (w / w.sum()))


def _golden_max(f, a: np.ndarray, b: np.ndarray, iterations: int) -> np.ndarray:
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iterations):
        left = fc >= fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        # reuse the surviving interior point
        new_c = np.where(left, b - inv_phi * (b - a), d)
        new_d = np.where(left, c, a + inv_phi * (b - a))
        new_fc_needed = left
        fc_old, fd_old = fc, fd
        c, d = new_c, new_d
        fresh = f(np.where(new_fc_needed, c, d))
        fc = np.where(new_fc_needed, fresh, fd_old)
        fd = np.where(new_fc_needed, fc_old, fresh)
    return 0.5 * (a + b)


def estimate_batch(r: np.ndarray, sizes: Sequence[int], *, grid_size: int = SIM_GRID,
                   domain_epsilon: float = 1e-3, n_inner: int = 3,
                   window_drop: float | None = bspline.DEFAULT_WINDOW_DROP):
    """Pooled, exact-MLE and spline-MLE estimates for each row of ``r``.

    Returns three arrays plus the row indices whose spline stage failed
    (those carry NaN in the spline column).
    """
    r = np.atleast_2d(np.asarray(r, dtype=float))
    n = np.asarray(sizes, dtype=float)
    lo, hi = rho_domain(domain_epsilon)
    grid = np.linspace(lo, hi, grid_size)
    step = grid[1] - grid[0]
    pooled = pooled_estimates(r, sizes)
    exact = np.empty(len(r))
    spline = np.empty(len(r))
    failed = []
    for start in range(0, len(r), _CHUNK):
        rc = r[start:start + _CHUNK]
        curves = log_likelihood_array(grid[None, :, None], rc[:, None, :], n).sum(axis=-1)
        peak = np.argmax(curves, axis=1)
        a = np.maximum(grid[peak] - step, lo)
        b = np.minimum(grid[peak] + step, hi)

        def f(x, rc=rc):
            return log_likelihood_array(x[:, None], rc, n).sum(axis=-1)

        exact[start:start + len(rc)] = _golden_max(f, a, b, _GOLDEN_ITERATIONS)
        for k, values in enumerate(curves):
            idx = start + k
            try:
                model = bspline.fit_log_likelihood(LikelihoodCurve(grid, values, domain_epsilon),
                                                   n_inner, window_drop)
                spline[idx] = maximize(model)[0]
            except (ArithmeticError, ValueError, RuntimeError, np.linalg.LinAlgError):
                spline[idx] = math.nan
                failed.append(idx)
    return pooled, exact, spline, failed


def _mse(estimates: np.ndarray, rho: float) -> tuple[float, float]:
    sq = (estimates - rho) ** 2
    m = math.fsum(sq) / sq.size
    se = math.sqrt(math.fsum((sq - m) ** 2) / (sq.size - 1) / sq.size) if sq.size > 1 else math.nan
    return m, se


def run_case(case: SimCase, *, grid_size: int = SIM_GRID, domain_epsilon: float = 1e-3,
             n_inner: int = 3) -> SimResult:
    r, redraws = draw_correlations(case)
    pooled, exact, spline, failed = estimate_batch(
        r, case.sizes, grid_size=grid_size, domain_epsilon=domain_epsilon, n_inner=n_inner
    )
    ok = np.ones(len(r), dtype=bool)
    ok[failed] = False
    if not ok.any():
        raise RuntimeError("every replication failed")
    mp, sp = _mse(pooled[ok], case.rho)
    me, se = _mse(exact[ok], case.rho)
    ms, ss = _mse(spline[ok], case.rho)
    return SimResult(mp, me, ms, int(ok.sum()), sp, se, ss, tuple(failed), redraws)
