"""Worst-case quantile bounds of the moment ambiguity set and their estimation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core_model import AmbiguityCell, Instance, plan_intervals


@dataclass(frozen=True)
class RobustBounds:
    u: float
    l: float


def worst_case_var(cell: AmbiguityCell, eps1: float) -> float:
    """Largest (1-eps1)-quantile any distribution of the set can have."""
    if not 0.0 < eps1 < 1.0:
        raise ValueError(f"eps1 must lie in (0,1), got {eps1}")
    mu = cell.mean
    return mu + min(cell.hi - mu, (1.0 - eps1) / eps1 * (mu - cell.lo), cell.mad / (2.0 * eps1))


def worst_case_lq(cell: AmbiguityCell, eps2: float) -> float:
    """Smallest eps2-quantile any distribution of the set can have; eps2 = 0 gives lo."""
    if not 0.0 <= eps2 < 1.0:
        raise ValueError(f"eps2 must lie in [0,1), got {eps2}")
    if eps2 == 0.0:
        return cell.lo
    mu = cell.mean
    return mu - min((1.0 - eps2) / eps2 * (cell.hi - mu), mu - cell.lo, cell.mad / (2.0 * eps2))


def robust_bounds(cell: AmbiguityCell, eps1: float, eps2: float) -> RobustBounds:
    return RobustBounds(worst_case_var(cell, eps1), worst_case_lq(cell, eps2))


class BoundsGrid:
    """U and L for every retailer-period of an instance, with interval sums."""

    def __init__(self, inst: Instance) -> None:
        self.T = inst.cycle_len
        self.U = np.array([[worst_case_var(c, inst.eps_capacity) for c in row] for row in inst.ambiguity])
        self.L = np.array([[worst_case_lq(c, inst.eps_overshoot) for c in row] for row in inst.ambiguity])
        self.hi = np.array([[c.hi for c in row] for row in inst.ambiguity])
        self.mean = np.array([[c.mean for c in row] for row in inst.ambiguity])

    def _sum(self, arr: np.ndarray, i: int, t1: int, t2: int) -> float:
        T = self.T
        length = (t2 - t1) % T or T
        return float(sum(arr[i, (t1 + k) % T] for k in range(length)))

    def u_sum(self, i: int, t1: int, t2: int) -> float:
        return self._sum(self.U, i, t1, t2)

    def l_sum(self, i: int, t1: int, t2: int) -> float:
        return self._sum(self.L, i, t1, t2)

    def hi_sum(self, i: int, t1: int, t2: int) -> float:
        return self._sum(self.hi, i, t1, t2)

    def mean_sum(self, i: int, t1: int, t2: int) -> float:
        return self._sum(self.mean, i, t1, t2)

    def level_bound(self, i: int, t1: int, t2: int) -> int:
        """Integer upper bound on the order-up-to level at t1 for interval (t1, t2)."""
        return int(np.floor(self.hi_sum(i, t1, t2) + 1e-9))


def interval_load(grid: BoundsGrid, i: int, t1: int, t2: int, s1: float, s2: float) -> float:
    """Robust load of delivering at t2 after the visit at t1."""
    return s2 - s1 + grid.u_sum(i, t1, t2)


def loads_by_period(grid: BoundsGrid, i: int, levels: dict[int, int]) -> dict[int, float]:
    """Robust load of each delivery of one plan, keyed by its delivery period."""
    T = grid.T
    out = {}
    for iv in plan_intervals(list(levels), T):
        out[iv.end] = interval_load(grid, i, iv.start, iv.end, levels[iv.start], levels[iv.end])
    return out


def capacity_coefficient(plans: dict[int, dict[int, int]], period: int, grid: BoundsGrid) -> float:
    """Left side of the deterministic capacity row for deliveries made in ``period``.

    ``plans`` maps retailer -> {visit period: order-up-to level}.  Each delivery
    is charged to the period in which it is made, i.e. the end of the interval
    that precedes it.
    """
    total = 0.0
    for i, levels in plans.items():
        total += loads_by_period(grid, i, levels).get(period, 0.0)
    return total


def overshoot_slack(grid: BoundsGrid, i: int, t1: int, t2: int, s1: float, s2: float) -> float:
    """Left side of the no-overshoot row; negative means violated."""
    return s2 - s1 + grid.l_sum(i, t1, t2)


def estimate_ambiguity(samples: Sequence[Sequence[Sequence[float]]]) -> list[list[AmbiguityCell]]:
    """Estimate one cell per retailer-period from demand samples ``samples[i][t]``."""
    grid = []
    for row in samples:
        out_row = []
        for cell_samples in row:
            x = np.asarray(cell_samples, float)
            if x.size == 0:
                raise ValueError("empty samples for a cell")
            lo, hi, mean = float(x.min()), float(x.max()), float(x.mean())
            mad = float(np.abs(x - mean).mean())
            if mean <= 0.0:
                raise ValueError("all-zero samples admit no cell with 0 <= lo < mean")
            if not lo < mean < hi:
                lo, hi = max(lo - 1.0, 0.0), hi + 1.0
            out_row.append(AmbiguityCell(lo, hi, mean, mad))
        grid.append(out_row)
    return grid
