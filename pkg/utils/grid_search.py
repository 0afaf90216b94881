"""
Coarse Guidance Toolkit - Grid Bisection
Largest grid point j * granularity for which a monotone yes/no trial holds.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

from utils.logging_config import log_with_context


@dataclass
class GridSearchResult:
    limit: float
    lower_witness: Optional[float]
    upper_witness: Optional[float]
    trials: Dict[float, bool] = field(default_factory=dict)
    floor_failed: bool = False
    monotonicity_violations: List[Tuple[float, float]] = field(default_factory=list)
    widenings: int = 0


def grid_point(j: int, granularity: float) -> float:
    return round(j * granularity, 10)


def grid_bounds(low: float, high: float, granularity: float) -> Tuple[int, int]:
    """First and last positive grid indices inside [low, high]"""
    j_low = max(1, int(math.ceil(low / granularity - 1e-9)))
    j_high = int(math.floor(high / granularity + 1e-9))
    return j_low, j_high


def monotonicity_violations(trials: Dict[float, bool]) -> List[Tuple[float, float]]:
    """(smaller, larger) pairs where the larger point passes and the smaller one fails"""
    points = sorted(trials)
    violations = []
    for i, smaller in enumerate(points):
        if trials[smaller]:
            continue
        for larger in points[i + 1:]:
            if trials[larger]:
                violations.append((smaller, larger))
    return violations


def bisect_grid(trial: Callable[[float], bool], low: float, high: float, granularity: float,
                logger: logging.Logger, label: str = 'hold_limit', confirm: bool = False) -> GridSearchResult:
    """
    Binary search for the largest passing grid point

    With confirm=True the point one step below the bracket is re-evaluated; a failure there
    walks the bracket down one step at a time until a passing point with a passing
    neighbour below is found.
    """
    j_low, j_high = grid_bounds(low, high, granularity)
    trials: Dict[float, bool] = {}

    def check(j: int) -> bool:
        point = grid_point(j, granularity)
        if point not in trials:
            trials[point] = bool(trial(point))
        return trials[point]

    if j_high < j_low or not check(j_low):
        return GridSearchResult(limit=0.0, lower_witness=None,
                                upper_witness=grid_point(j_low, granularity), trials=trials,
                                floor_failed=True)

    if check(j_high):
        return GridSearchResult(limit=grid_point(j_high, granularity),
                                lower_witness=grid_point(j_high, granularity), upper_witness=None,
                                trials=trials)

    lo, hi = j_low, j_high
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if check(mid):
            lo = mid
        else:
            hi = mid

    widenings = 0
    if confirm:
        while lo > j_low and not check(lo - 1):
            widenings += 1
            hi = lo - 1
            lo = hi - 1
            while lo > j_low and not check(lo):
                hi = lo
                lo -= 1
            log_with_context(logger, logging.WARNING, "Bracket widened after failed confirmation",
                             search=label, lower=grid_point(lo, granularity), upper=grid_point(hi, granularity))

    violations = monotonicity_violations(trials)
    if violations:
        log_with_context(logger, logging.WARNING, "Non-monotone trial results",
                         search=label, violations=violations[:10], count=len(violations))

    return GridSearchResult(limit=grid_point(lo, granularity),
                            lower_witness=grid_point(lo, granularity),
                            upper_witness=grid_point(hi, granularity),
                            trials=trials, monotonicity_violations=violations, widenings=widenings)
