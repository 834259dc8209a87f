import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from corrlik import simulate
from corrlik.likelihood import Study
from corrlik.meta import mle, pooled_estimate
from corrlik.numerics import DomainError
from corrlik.simulate import (
    BENCHMARK_CASES,
    SimCase,
    draw_correlations,
    estimate_batch,
    run_case,
    sample_correlation,
)


class TestSimCase:
    def test_table_cases(self):
        assert len(BENCHMARK_CASES) == 8
        case = SimCase.benchmark(7, replications=10, seed=3)
        assert (case.rho, case.sizes, case.replications, case.seed) == (-0.7, (4,) * 5, 10, 3)

    @pytest.mark.parametrize("kwargs", [
        dict(rho=1.0), dict(rho=-1.2), dict(sizes=(4, 3)), dict(sizes=()), dict(replications=0), dict(seed=-1),
    ])
    def test_invalid(self, kwargs):
        args = dict(rho=0.2, sizes=(10, 10), replications=5, seed=0) | kwargs
        with pytest.raises(DomainError):
            SimCase(**args)


class TestSampleCorrelation:
    def test_large_sample(self):
        rng = np.random.default_rng(11)
        r, _ = sample_correlation(0.9, 1_000_000, rng)
        assert r == pytest.approx(0.9, abs=0.002)

    def test_same_seed_same_output(self):
        a = sample_correlation(0.3, 20, np.random.default_rng(42))
        b = sample_correlation(0.3, 20, np.random.default_rng(42))
        assert a == b

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-0.99, 0.99), st.integers(4, 30), st.integers(0, 2**32 - 1))
    def test_bounded(self, rho, n, seed):
        r, redraws = sample_correlation(rho, n, np.random.default_rng(seed))
        assert -1.0 <= r <= 1.0
        assert redraws >= 0

    @pytest.mark.parametrize("rho, n", [(1.0, 10), (0.2, 3)])
    def test_invalid(self, rho, n):
        with pytest.raises(DomainError):
            sample_correlation(rho, n, np.random.default_rng(0))

    def test_degenerate_draws_are_redrawn(self):
        class Stuck:
            def __init__(self):
                self.calls = 0

            def standard_normal(self, shape):
                self.calls += 1
                if self.calls == 1:
                    return np.ones(shape)  # zero variance
                return np.random.default_rng(0).standard_normal(shape)

        rng = Stuck()
        r, redraws = sample_correlation(0.2, 10, rng)
        assert redraws == 1 and -1 < r < 1

    def test_gives_up_eventually(self):
        class Constant:
            def standard_normal(self, shape):
                return np.ones(shape)

        with pytest.raises(RuntimeError):
            sample_correlation(0.2, 10, Constant())


class TestStreams:
    def test_prefix_stable(self):
        # replication i does not depend on how many replications follow it
        short, _ = draw_correlations(SimCase(0.2, (4, 4, 4), 5, seed=9))
        long, _ = draw_correlations(SimCase(0.2, (4, 4, 4), 50, seed=9))
        assert np.array_equal(short, long[:5])

    def test_batch_matches_library_estimators(self):
        r, _ = draw_correlations(SimCase(0.4, (4, 10, 30), 6, seed=2))
        sizes = (4, 10, 30)
        pooled, exact, spline, failed = estimate_batch(r, sizes)
        assert failed == []
        for i, row in enumerate(r):
            group = [Study(str(j), float(x), n) for j, (x, n) in enumerate(zip(row, sizes))]
            assert pooled[i] == pytest.approx(pooled_estimate(group), abs=1e-12)
            assert exact[i] == pytest.approx(mle(group), abs=1e-7)
            assert spline[i] == pytest.approx(mle(group, "spline", grid_size=simulate.SIM_GRID), abs=1e-9)

    def test_failed_replications_are_reported(self, monkeypatch):
        real = simulate.bspline.fit_log_likelihood
        calls = {"n": 0}

        def flaky(*args, **kwargs):
            calls["n"] += 1
            if calls["n"] == 2:
                raise np.linalg.LinAlgError("forced")
            return real(*args, **kwargs)

        monkeypatch.setattr(simulate.bspline, "fit_log_likelihood", flaky)
        res = run_case(SimCase(0.2, (10,) * 3, 5, seed=1))
        assert res.failed == (1,)
        assert res.replications_used == 4


class TestRunCase:
    def test_large_samples_case(self):
        res = run_case(SimCase.benchmark(2, replications=100, seed=0))
        for value in (res.mse_pooled, res.mse_mle_exact, res.mse_mle_spline):
            assert value == pytest.approx(0.002, abs=0.001)

    def test_small_samples_ordering(self):
        res = run_case(SimCase.benchmark(1, replications=2000, seed=1))
        assert res.mse_mle_exact < res.mse_pooled

    def test_single_replication_deterministic(self):
        case = SimCase(0.5, (4, 4, 4, 4, 4), 1, seed=123)
        assert run_case(case) == run_case(case)

    def test_deterministic(self):
        case = SimCase(-0.3, (4, 8, 12), 40, seed=77)
        a, b = run_case(case), run_case(case)
        assert a == b
        assert all(math.isfinite(v) and v >= 0 for v in (a.mse_pooled, a.mse_mle_exact, a.mse_mle_spline))

    def test_large_n_consistency(self):
        res = run_case(SimCase(0.2, (100,) * 5, 1000, seed=4))
        assert max(res.mse_pooled, res.mse_mle_exact, res.mse_mle_spline) <= 0.005

    @pytest.mark.slow
    def test_sign_symmetry(self):
        pos = run_case(SimCase(0.3, (4,) * 5, 10_000, seed=2024))
        neg = run_case(SimCase(-0.3, (4,) * 5, 10_000, seed=2024))
        for field in ("pooled", "mle_exact", "mle_spline"):
            a, b = getattr(pos, f"mse_{field}"), getattr(neg, f"mse_{field}")
            se = math.hypot(getattr(pos, f"se_{field}"), getattr(neg, f"se_{field}"))
            assert abs(a - b) < 3 * se
