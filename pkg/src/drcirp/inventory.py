"""Worst-case expected inventory cost of a replenishment interval.

The cost of an interval is evaluated by a linear program over turning
classes: class ``k`` (1-based position within the interval) collects demand
scenarios whose cumulative demand first reaches the order-up-to level in
the ``k``-th period, class 0 those that never reach it.  Each class carries
a probability ``pi_k`` and a first-moment vector ``lambda_k``; the optimal
``(pi_k, lambda_k / pi_k)`` pairs are the atoms of a worst-case distribution.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core_model import AmbiguityCell, CyclicInterval, Instance
from .lp import LpProblem, solve_dense

_ATOM_TOL = 1e-9


@dataclass(frozen=True)
class InventoryCostQuery:
    retailer: int
    interval: CyclicInterval
    order_up_to: int


@dataclass
class Atom:
    prob: float
    demand: tuple[float, ...]
    turning: int | None  # 1-based position within the interval, None = never depleted


@dataclass
class WorstCaseDistribution:
    atoms: list[Atom]
    value: float
    periods: tuple[int, ...] = ()


@dataclass
class LopData:
    """Dense LOP with the index layout needed to read a solution."""

    c: np.ndarray
    A: np.ndarray
    senses: list[str]
    b: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    H: int
    pi_idx: list[int]
    lam_idx: list[list[int]]

    def to_problem(self) -> LpProblem:
        p = LpProblem("max")
        names = {}
        for k, j in enumerate(self.pi_idx):
            names[j] = f"pi[{self.classes[k]}]"
            for t, jj in enumerate(self.lam_idx[k]):
                names[jj] = f"lam[{self.classes[k]},{t + 1}]"
        for j in range(len(self.c)):
            p.add_var(self.lb[j], self.ub[j], self.c[j], names.get(j, f"aux{j}"))
        for r in range(len(self.b)):
            row = {j: self.A[r, j] for j in np.flatnonzero(self.A[r])}
            p.add_row(row, self.senses[r], float(self.b[r]))
        return p

    @property
    def classes(self) -> list[int]:
        """Turning index per class slot: 1..H then 0."""
        return list(range(1, self.H + 1)) + [0]


def interval_cells(inst: Instance, i: int, iv: CyclicInterval) -> list[AmbiguityCell]:
    return [inst.cell(i, t) for t in iv.demand_periods()]


def lop_arrays(cells: Sequence[AmbiguityCell], s: float, h: float, b: float) -> LopData:
    """Assemble the turning-class LP for the cells of one interval."""
    H = len(cells)
    mu = np.array([c.mean for c in cells])
    lo = np.array([c.lo for c in cells])
    hi = np.array([c.hi for c in cells])
    sig = np.array([c.mad for c in cells])
    K = H + 1  # classes 1..H and 0 (stored last)
    # variable layout per class: pi, lam[H], lam_plus[H], lam_minus[H]
    per = 1 + 3 * H
    nv = K * per
    pi_idx = [k * per for k in range(K)]
    lam_idx = [[k * per + 1 + t for t in range(H)] for k in range(K)]
    lp_idx = [[k * per + 1 + H + t for t in range(H)] for k in range(K)]
    lm_idx = [[k * per + 1 + 2 * H + t for t in range(H)] for k in range(K)]
    c = np.zeros(nv)
    lb = np.zeros(nv)
    ub = np.full(nv, math.inf)
    for k in range(K):
        for t in range(H):
            lb[lam_idx[k][t]] = -math.inf
    # objective: class k (1-based turning position kk) holds before kk, backorders from kk on
    for k in range(K):
        kk = k + 1 if k < H else None
        for t in range(H):  # position t (0-based) of cumulative inventory s - cum_t
            # cum_t = sum_{j<=t} lam_j
            if kk is None or t < kk - 1:
                c[pi_idx[k]] += h * s
                for j in range(t + 1):
                    c[lam_idx[k][j]] -= h
            else:
                c[pi_idx[k]] -= b * s
                for j in range(t + 1):
                    c[lam_idx[k][j]] += b
    rows: list[np.ndarray] = []
    senses: list[str] = []
    rhs: list[float] = []

    def row(coefs: dict[int, float], sense: str, r: float) -> None:
        v = np.zeros(nv)
        for j, a in coefs.items():
            v[j] += a
        rows.append(v)
        senses.append(sense)
        rhs.append(r)

    row({pi_idx[k]: 1.0 for k in range(K)}, "=", 1.0)
    for t in range(H):
        row({lam_idx[k][t]: 1.0 for k in range(K)}, "=", float(mu[t]))
    for t in range(H):
        coefs = {}
        for k in range(K):
            coefs[lp_idx[k][t]] = 1.0
            coefs[lm_idx[k][t]] = 1.0
        row(coefs, "<=", float(sig[t]))
    for k in range(K):
        for t in range(H):
            row({lam_idx[k][t]: 1.0, pi_idx[k]: -mu[t], lp_idx[k][t]: -1.0, lm_idx[k][t]: 1.0}, "=", 0.0)
            row({lam_idx[k][t]: 1.0, pi_idx[k]: -hi[t]}, "<=", 0.0)
            row({lam_idx[k][t]: 1.0, pi_idx[k]: -lo[t]}, ">=", 0.0)
    for k in range(K):
        if k < H:
            kk = k + 1
            if kk >= 2:  # cumulative demand before kk stays within the level
                row({**{lam_idx[k][j]: 1.0 for j in range(kk - 1)}, pi_idx[k]: -s}, "<=", 0.0)
            row({**{lam_idx[k][j]: 1.0 for j in range(kk)}, pi_idx[k]: -s}, ">=", 0.0)
        else:
            row({**{lam_idx[k][j]: 1.0 for j in range(H)}, pi_idx[k]: -s}, "<=", 0.0)
    A = np.array(rows)
    return LopData(c, A, senses, np.array(rhs), lb, ub, H, pi_idx, lam_idx)


def compact_lop_arrays(cells: Sequence[AmbiguityCell], s: float, h: float, b: float):
    """Same LP with lambda substituted out (lambda = pi*mu + plus - minus).

    Variables per class: pi, plus[H], minus[H].  Smaller and faster; used
    for the cost oracle, while :func:`lop_arrays` keeps the explicit form.
    """
    H = len(cells)
    mu = np.array([c.mean for c in cells])
    up = np.array([c.hi - c.mean for c in cells])
    dn = np.array([c.mean - c.lo for c in cells])
    sig = np.array([c.mad for c in cells])
    K = H + 1
    per = 1 + 2 * H
    nv = K * per
    cum_mu = np.cumsum(mu)
    c = np.zeros(nv)
    rows = []
    senses = []
    rhs = []
    for k in range(K):
        base = k * per
        kk = k + 1 if k < H else None
        # coefficient of lambda_{k,j} in the objective
        lam_c = np.zeros(H)
        for t in range(H):
            if kk is None or t < kk - 1:
                c[base] += h * (s - cum_mu[t])
                lam_c[: t + 1] -= h
            else:
                c[base] += b * (cum_mu[t] - s)
                lam_c[: t + 1] += b
        c[base + 1: base + 1 + H] += lam_c
        c[base + 1 + H: base + 1 + 2 * H] -= lam_c
    v = np.zeros(nv)
    v[[k * per for k in range(K)]] = 1.0
    rows.append(v); senses.append("="); rhs.append(1.0)
    for t in range(H):
        v = np.zeros(nv)
        for k in range(K):
            v[k * per + 1 + t] = 1.0
            v[k * per + 1 + H + t] = -1.0
        rows.append(v); senses.append("="); rhs.append(0.0)
        v = np.zeros(nv)
        for k in range(K):
            v[k * per + 1 + t] = 1.0
            v[k * per + 1 + H + t] = 1.0
        rows.append(v); senses.append("<="); rhs.append(float(sig[t]))
    for k in range(K):
        base = k * per
        for t in range(H):
            v = np.zeros(nv)
            v[base + 1 + t] = 1.0
            v[base + 1 + H + t] = -1.0
            v[base] = -up[t]
            rows.append(v); senses.append("<="); rhs.append(0.0)
            v = np.zeros(nv)
            v[base + 1 + t] = 1.0
            v[base + 1 + H + t] = -1.0
            v[base] = dn[t]
            rows.append(v); senses.append(">="); rhs.append(0.0)
    for k in range(K):
        base = k * per

        def bracket(n_periods: int, sense: str) -> None:
            v = np.zeros(nv)
            v[base] = cum_mu[n_periods - 1] - s
            v[base + 1: base + 1 + n_periods] = 1.0
            v[base + 1 + H: base + 1 + H + n_periods] = -1.0
            rows.append(v); senses.append(sense); rhs.append(0.0)

        if k < H:
            if k >= 1:
                bracket(k, "<=")
            bracket(k + 1, ">=")
        else:
            bracket(H, "<=")
    return c, np.array(rows), senses, np.array(rhs), np.zeros(nv), np.full(nv, math.inf)


def build_lop(query: InventoryCostQuery, inst: Instance) -> LpProblem:
    cells = interval_cells(inst, query.retailer, query.interval)
    return lop_arrays(cells, query.order_up_to, inst.hold_cost, inst.backorder_cost).to_problem()


def scenario_cost(demand: Sequence[float], s: float, h: float, b: float) -> float:
    """Holding plus backorder cost of one demand path starting from level s."""
    cost = 0.0
    inv = s
    for d in demand:
        inv -= d
        cost += h * inv if inv > 0 else -b * inv
    return cost


def deterministic_cost(cells: Sequence[AmbiguityCell], s: float, h: float, b: float) -> float:
    return scenario_cost([c.mean for c in cells], s, h, b)


class LopInfeasible(AssertionError):
    pass


def solve_lop(cells: Sequence[AmbiguityCell], s: float, h: float, b: float):
    data = lop_arrays(cells, s, h, b)
    sol = solve_dense(data.c, data.A, data.senses, data.b, data.lb, data.ub, sense="max")
    if not sol.optimal:
        raise LopInfeasible(f"worst-case LP {sol.status} for cells {cells} s={s}")
    return data, sol


def worst_case_cost(cells: Sequence[AmbiguityCell], s: float, h: float, b: float) -> float:
    if all(c.mad == 0.0 for c in cells):
        return deterministic_cost(cells, s, h, b)
    sol = solve_dense(*compact_lop_arrays(cells, s, h, b), sense="max")
    if not sol.optimal:
        raise LopInfeasible(f"worst-case LP {sol.status} for cells {cells} s={s}")
    return float(sol.objective)


class InventoryCostCache:
    """Memo of f_inv values keyed by (retailer, t1, t2, s); safe for concurrent use."""

    def __init__(self, inst: Instance) -> None:
        self.inst = inst
        self._store: dict[tuple, float] = {}
        self._lock = threading.Lock()
        self.solves = 0

    def get(self, i: int, t1: int, t2: int, s: int) -> float:
        key = (i, t1, t2, int(s))
        v = self._store.get(key)
        if v is not None:
            return v
        iv = CyclicInterval(t1, t2, self.inst.cycle_len)
        v = worst_case_cost(interval_cells(self.inst, i, iv), s, self.inst.hold_cost, self.inst.backorder_cost)
        with self._lock:
            self.solves += 1
            self._store.setdefault(key, v)
        return v

    def __len__(self) -> int:
        return len(self._store)


def f_inv(query: InventoryCostQuery, inst: Instance, cache: InventoryCostCache | None = None) -> float:
    iv = query.interval
    if cache is not None:
        return cache.get(query.retailer, iv.start, iv.end, query.order_up_to)
    cells = interval_cells(inst, query.retailer, iv)
    return worst_case_cost(cells, query.order_up_to, inst.hold_cost, inst.backorder_cost)


def canonical_turning(demand: Sequence[float], s: float, tol: float = 1e-7) -> int | None:
    cum = 0.0
    for k, d in enumerate(demand, start=1):
        cum += d
        if cum >= s - tol:
            return k
    return None


def _atoms_from(data: LopData, x: np.ndarray, s: float) -> list[Atom]:
    merged: dict[tuple, Atom] = {}
    for k, j in enumerate(data.pi_idx):
        p = float(x[j])
        if p <= _ATOM_TOL:
            continue
        dem = tuple(float(x[jj]) / p for jj in data.lam_idx[k])
        key = tuple(round(v, 9) for v in dem)
        if key in merged:
            merged[key].prob += p
        else:
            merged[key] = Atom(p, dem, canonical_turning(dem, s))
    return sorted(merged.values(), key=lambda a: (a.turning is None, a.turning or 0, a.demand))


def worst_distribution(cells: Sequence[AmbiguityCell], s: float, h: float, b: float) -> WorstCaseDistribution:
    """Worst-case discrete distribution, preferring the fewest turning classes."""
    data, sol = solve_lop(cells, s, h, b)
    value = float(sol.objective)
    closed = slack_two_point(cells)
    if closed is not None:
        # slack deviation bound: the extreme two-point law is optimal, report it over tied optima
        atoms = [Atom(a.prob, a.demand, canonical_turning(a.demand, s)) for a in closed]
        if abs(distribution_cost(atoms, s, h, b) - value) <= 1e-9 * max(1.0, abs(value)):
            return WorstCaseDistribution(atoms, value)
    support = [k for k, j in enumerate(data.pi_idx) if sol.x[j] > _ATOM_TOL]
    outside = [data.pi_idx[k] for k in range(len(data.pi_idx)) if k not in support]
    x = sol.x
    if outside and len(support) > 1:
        # keep the optimum, push mass away from classes the first solve did not use
        c2 = np.zeros_like(data.c)
        c2[outside] = -1.0
        A2 = np.vstack([data.A, data.c])
        s2 = data.senses + [">="]
        b2 = np.concatenate([data.b, [value - 1e-9 * max(1.0, abs(value))]])
        sol2 = solve_dense(c2, A2, s2, b2, data.lb, data.ub, sense="max")
        if sol2.optimal:
            x = sol2.x
    atoms = _atoms_from(data, x, s)
    return WorstCaseDistribution(atoms, value)


def extract_worst_distribution(query: InventoryCostQuery, inst: Instance) -> WorstCaseDistribution:
    cells = interval_cells(inst, query.retailer, query.interval)
    wd = worst_distribution(cells, query.order_up_to, inst.hold_cost, inst.backorder_cost)
    wd.periods = query.interval.demand_periods()
    return wd


def distribution_cost(atoms: Sequence[Atom], s: float, h: float, b: float) -> float:
    return float(sum(a.prob * scenario_cost(a.demand, s, h, b) for a in atoms))


def membership_issues(atoms: Sequence[Atom], cells: Sequence[AmbiguityCell], s: float, tol: float = 1e-6) -> list[str]:
    """Check a discrete distribution against the ambiguity set and turning semantics."""
    out = []
    H = len(cells)
    if any(a.prob <= 0 for a in atoms):
        out.append("non-positive atom probability")
    if abs(sum(a.prob for a in atoms) - 1.0) > tol:
        out.append("probabilities do not sum to one")
    if len(atoms) > H + 1:
        out.append("more than H+1 atoms")
    for t, c in enumerate(cells):
        vals = [a.demand[t] for a in atoms]
        if min(vals) < c.lo - tol or max(vals) > c.hi + tol:
            out.append(f"support violated in position {t + 1}")
        mean = sum(a.prob * a.demand[t] for a in atoms)
        if abs(mean - c.mean) > tol:
            out.append(f"mean violated in position {t + 1}")
        mad = sum(a.prob * abs(a.demand[t] - c.mean) for a in atoms)
        if mad > c.mad + tol:
            out.append(f"deviation bound violated in position {t + 1}")
    for a in atoms:
        cum = np.cumsum(a.demand)
        if a.turning is None:
            if cum[-1] > s + tol:
                out.append("never-depleted atom exceeds the level")
        else:
            k = a.turning
            before = cum[k - 2] if k >= 2 else 0.0
            if not (before < s + tol and s <= cum[k - 1] + tol):
                out.append(f"turning bracket violated for atom {a}")
    return out


def slack_two_point(cells: Sequence[AmbiguityCell]) -> list[Atom] | None:
    """Two-point worst case when the deviation bound is slack and the support is proportional."""
    hi = np.array([c.hi for c in cells])
    lo = np.array([c.lo for c in cells])
    mu = np.array([c.mean for c in cells])
    sig = np.array([c.mad for c in cells])
    if np.any(sig < np.maximum(hi - mu, mu - lo) - 1e-12):
        return None
    up, dn = hi - mu, mu - lo
    ratio = dn / up  # m/n with m (hi - mu) = n (mu - lo)
    if np.ptp(ratio) > 1e-9:
        return None
    m_over = float(ratio[0])
    p_hi = m_over / (1.0 + m_over)
    return [Atom(1.0 - p_hi, tuple(lo.tolist()), None), Atom(p_hi, tuple(hi.tolist()), None)]


def check_convexity(i: int, interval: CyclicInterval, inst: Instance, s_grid: Sequence[int],
                    cache: InventoryCostCache | None = None, tol: float = 1e-7) -> list[str]:
    cache = cache or InventoryCostCache(inst)
    vals = {s: cache.get(i, interval.start, interval.end, s) for s in s_grid}
    out = []
    for s in s_grid:
        if s - 1 in vals and s + 1 in vals:
            if vals[s - 1] + vals[s + 1] < 2 * vals[s] - tol:
                out.append(f"midpoint convexity fails at s={s}")
    return out


# ---------------------------------------------------------------------------
# stationary variant used by the fixed-interval policy


def stationary_lop_value(cell: AmbiguityCell, kappa: int, s: float, h: float, b: float) -> float:
    """Worst-case cost of kappa periods of one stationary demand drawn once.

    Cumulative demand after t periods is ``t * zeta``.  Class ``k`` in
    1..kappa gathers scenarios with ``(k-1) zeta <= s <= k zeta``; class
    ``kappa+1`` the scenarios that never deplete the level.
    """
    if cell.mad == 0.0:
        return scenario_cost([cell.mean] * kappa, s, h, b)
    K = kappa + 1
    nv = 4 * K  # pi, lam, lam_plus, lam_minus per class
    c = np.zeros(nv)
    lb = np.zeros(nv)
    ub = np.full(nv, math.inf)
    rows, senses, rhs = [], [], []

    def row(coefs, sense, r):
        v = np.zeros(nv)
        for j, a in coefs.items():
            v[j] += a
        rows.append(v)
        senses.append(sense)
        rhs.append(r)

    for k in range(K):
        tk = k + 1
        pi, lam, lp, lm = 4 * k, 4 * k + 1, 4 * k + 2, 4 * k + 3
        lb[lam] = -math.inf
        c[pi] += h * (tk - 1) * s - b * (kappa + 1 - tk) * s
        c[lam] += -h * (tk - 1) * tk / 2.0 + b * (kappa + 1 - tk) * (kappa + tk) / 2.0
        row({lam: 1.0, pi: -cell.mean, lp: -1.0, lm: 1.0}, "=", 0.0)
        row({lam: 1.0, pi: -cell.hi}, "<=", 0.0)
        row({lam: 1.0, pi: -cell.lo}, ">=", 0.0)
        row({lam: float(tk - 1), pi: -s}, "<=", 0.0)
        if tk <= kappa:
            row({lam: float(tk), pi: -s}, ">=", 0.0)
    row({4 * k: 1.0 for k in range(K)}, "=", 1.0)
    row({4 * k + 1: 1.0 for k in range(K)}, "=", cell.mean)
    row({**{4 * k + 2: 1.0 for k in range(K)}, **{4 * k + 3: 1.0 for k in range(K)}}, "<=", cell.mad)
    sol = solve_dense(c, np.array(rows), senses, np.array(rhs), lb, ub, sense="max")
    if not sol.optimal:
        raise LopInfeasible(f"stationary LP {sol.status}")
    return float(sol.objective)


def stationary_cell(cells: Sequence[AmbiguityCell]) -> AmbiguityCell:
    """Pool one retailer's cycle into a single stationary cell."""
    lo = min(c.lo for c in cells)
    hi = max(c.hi for c in cells)
    mean = float(np.mean([c.mean for c in cells]))
    mad = float(np.mean([c.mad for c in cells]))
    return AmbiguityCell(lo, hi, mean, mad)


@dataclass
class StationaryCostCache:
    h: float
    b: float
    store: dict = field(default_factory=dict)

    def get(self, cell: AmbiguityCell, kappa: int, s: int) -> float:
        key = (cell, kappa, int(s))
        v = self.store.get(key)
        if v is None:
            v = stationary_lop_value(cell, kappa, s, self.h, self.b)
            self.store[key] = v
        return v
