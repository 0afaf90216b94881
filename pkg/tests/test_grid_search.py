"""
Tests for grid bisection
"""

import logging

import pytest

from utils.grid_search import bisect_grid, grid_bounds, grid_point, monotonicity_violations

logger = logging.getLogger('coarse_guidance.test')


def counting(trial):
    calls = []

    def wrapped(point):
        calls.append(point)
        return trial(point)
    return wrapped, calls


@pytest.mark.unit
class TestGridHelpers:

    def test_bounds_skip_zero(self):
        assert grid_bounds(0.0, 10.0, 0.01) == (1, 1000)

    def test_bounds_with_positive_floor(self):
        assert grid_bounds(0.5, 2.0, 0.25) == (2, 8)

    def test_points_are_rounded(self):
        assert grid_point(3, 0.1) == 0.3

    def test_violations(self):
        assert monotonicity_violations({1.0: True, 2.0: False, 3.0: True, 4.0: False}) == [(2.0, 3.0)]
        assert monotonicity_violations({1.0: True, 2.0: True, 3.0: False}) == []


@pytest.mark.unit
class TestBisectGrid:

    def test_threshold(self):
        result = bisect_grid(lambda d: d <= 1.23, 0.0, 10.0, 0.01, logger)
        assert result.limit == pytest.approx(1.23)
        assert result.lower_witness == pytest.approx(1.23)
        assert result.upper_witness == pytest.approx(1.24)
        assert not result.floor_failed

    def test_floor_failure(self):
        """Nothing passes: limit 0 with the first grid point as witness"""
        result = bisect_grid(lambda d: False, 0.0, 10.0, 0.01, logger)
        assert result.limit == 0.0
        assert result.floor_failed
        assert result.lower_witness is None
        assert result.upper_witness == pytest.approx(0.01)

    def test_ceiling_pass(self):
        result = bisect_grid(lambda d: True, 0.0, 10.0, 0.01, logger)
        assert result.limit == pytest.approx(10.0)
        assert result.upper_witness is None

    def test_positive_floor(self):
        result = bisect_grid(lambda d: d <= 3.0, 2.0, 4.0, 0.5, logger)
        assert result.limit == pytest.approx(3.0)
        assert min(result.trials) == pytest.approx(2.0)

    def test_each_point_evaluated_once(self):
        trial, calls = counting(lambda d: d <= 4.2)
        bisect_grid(trial, 0.0, 10.0, 0.1, logger, confirm=True)
        assert len(calls) == len(set(calls))

    def test_confirmation_widens_downward(self):
        """A failed re-evaluation below the bracket walks the limit down"""
        passing = {1.0, 2.0, 3.0, 5.0}
        result = bisect_grid(lambda d: d in passing, 0.0, 10.0, 1.0, logger, confirm=True)
        assert result.limit == pytest.approx(3.0)
        assert result.upper_witness == pytest.approx(4.0)
        assert result.widenings == 1
        assert result.monotonicity_violations == [(4.0, 5.0)]

    def test_without_confirmation_keeps_first_bracket(self):
        passing = {1.0, 2.0, 3.0, 5.0}
        result = bisect_grid(lambda d: d in passing, 0.0, 10.0, 1.0, logger)
        assert result.limit == pytest.approx(5.0)
        assert result.widenings == 0
