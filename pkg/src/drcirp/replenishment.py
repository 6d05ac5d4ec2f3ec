"""Replenishment pricing: the best cyclic plan for one retailer under master duals.

A plan's reduced cost is the sum of its interval costs plus a retailer
constant.  Interval ``(t1, t2)`` with level ``s`` at ``t1`` costs

    f_inv(s) / T + (psi[t1] - psi[t2]) * s + delta[t1] + psi[t2] * sum(U over [t1, t2-1])

where ``psi`` and ``delta`` are the (non-negative) penalty forms of the
capacity and coverage duals.  The no-overshoot rows
``s[t2] - s[t1] + sum(L) >= 0`` couple consecutive levels; they are handled
lazily by a small branch-and-bound over enforced/forbidden intervals.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .ambiguity import BoundsGrid
from .core_model import Instance
from .inventory import InventoryCostCache

PHI = (1.0 + math.sqrt(5.0)) / 2.0
WARM_EPS = 1e-9
MAX_BRANCH_INTERVALS = 3

Interval = tuple[int, int]


@dataclass
class ReplenishmentDuals:
    """Dual information seen by one retailer's pricing problem."""

    psi: Sequence[float]
    delta: Sequence[float]
    theta: float = 0.0
    pi: float = 0.0
    const: float = 0.0
    emergency: float = 0.0  # e / T, replaces psi[t2] by psi[t2] - e/T on the level term

    @staticmethod
    def zero(T: int) -> "ReplenishmentDuals":
        return ReplenishmentDuals([0.0] * T, [0.0] * T)

    def level_coef(self, t1: int, t2: int) -> float:
        return (self.psi[t1] - self.emergency) - (self.psi[t2] - self.emergency)


@dataclass
class LevelRestriction:
    """Order-up-to restrictions at one period: a forced value or a set of banned values."""

    forced: int | None = None
    banned: frozenset[int] = frozenset()

    def allows(self, s: int) -> bool:
        if self.forced is not None and s != self.forced:
            return False
        return s not in self.banned


@dataclass
class PricingRestrictions:
    forced_intervals: frozenset[Interval] = frozenset()
    forbidden_intervals: frozenset[Interval] = frozenset()
    levels: dict[int, LevelRestriction] = field(default_factory=dict)

    def level(self, t: int) -> LevelRestriction:
        return self.levels.get(t, _NO_RESTRICTION)


_NO_RESTRICTION = LevelRestriction()


# ---------------------------------------------------------------------------
# interval costs


def golden_section(cost: Callable[[int], float], lo: int, hi: int) -> tuple[int, float]:
    """Minimise a discrete convex function on ``lo..hi``; ties go to the lowest level."""
    L, R = lo, hi
    s1 = R - (R - L) / PHI
    s2 = L + (R - L) / PHI
    while R - L > 3:
        c1 = cost(math.floor(s1))
        c2 = cost(math.ceil(s2))
        if c1 < c2:
            R = math.ceil(s2)
            s2 = s1
            s1 = R - (R - L) / PHI
        else:
            L = math.floor(s1)
            s1 = s2
            s2 = L + (R - L) / PHI
    best_s, best_c = L, math.inf
    for s in sorted({L, min(L + 1, R), max(R - 1, L), R}):
        c = cost(s)
        if c < best_c:
            best_s, best_c = s, c
    # minimisers of a convex function are contiguous; take the lowest
    while best_s > lo and cost(best_s - 1) <= best_c:
        best_s -= 1
    return best_s, best_c


def restricted_min(cost: Callable[[int], float], s_star: int, lo: int, hi: int,
                   rule: LevelRestriction) -> tuple[int | None, float]:
    """Best allowed level given the unrestricted argmin of a convex function."""
    if rule.forced is not None:
        s = rule.forced
        if lo <= s <= hi and s not in rule.banned:
            return s, cost(s)
        return None, math.inf
    if rule.allows(s_star):
        return s_star, cost(s_star)
    best: tuple[int | None, float] = (None, math.inf)
    left = s_star - 1
    while left >= lo and not rule.allows(left):
        left -= 1
    right = s_star + 1
    while right <= hi and not rule.allows(right):
        right += 1
    for s in (left, right):
        if lo <= s <= hi:
            c = cost(s)
            if c < best[1]:
                best = (s, c)
    return best


@dataclass
class IntervalCostEntry:
    interval: Interval
    base_s: int  # argmin with zero duals
    best_s: int | None
    best_cost: float  # includes all dual terms
    bound: int


class IntervalCoster:
    """Dual-adjusted interval costs for one retailer, on top of the shared f_inv cache."""

    def __init__(self, inst: Instance, grid: BoundsGrid, cache: InventoryCostCache, i: int) -> None:
        self.inst = inst
        self.grid = grid
        self.cache = cache
        self.i = i
        self.T = inst.cycle_len
        self._base: dict[Interval, int] = {}

    def bound(self, t1: int, t2: int) -> int:
        return self.grid.level_bound(self.i, t1, t2)

    def inv(self, t1: int, t2: int, s: int) -> float:
        return self.cache.get(self.i, t1, t2, s) / self.T

    def constant(self, t1: int, t2: int, duals: ReplenishmentDuals) -> float:
        g = self.grid
        return (duals.delta[t1] + duals.psi[t2] * g.u_sum(self.i, t1, t2)
                - duals.emergency * g.mean_sum(self.i, t1, t2))

    def cost_fn(self, t1: int, t2: int, duals: ReplenishmentDuals) -> Callable[[int], float]:
        coef = duals.level_coef(t1, t2)
        return lambda s: self.inv(t1, t2, s) + coef * s

    def full_cost(self, t1: int, t2: int, s: int, duals: ReplenishmentDuals) -> float:
        return self.cost_fn(t1, t2, duals)(s) + self.constant(t1, t2, duals)

    def base_level(self, t1: int, t2: int) -> int:
        key = (t1, t2)
        if key not in self._base:
            self._base[key], _ = golden_section(lambda s: self.inv(t1, t2, s), 0, self.bound(t1, t2))
        return self._base[key]

    def interval_cost(self, t1: int, t2: int, duals: ReplenishmentDuals,
                      rule: LevelRestriction = _NO_RESTRICTION) -> IntervalCostEntry:
        """Golden-section search over the level at t1."""
        B = self.bound(t1, t2)
        f = self.cost_fn(t1, t2, duals)
        s_star, _ = golden_section(f, 0, B)
        s, c = restricted_min(f, s_star, 0, B, rule)
        return IntervalCostEntry((t1, t2), self.base_level(t1, t2), s, c + self.constant(t1, t2, duals), B)

    def warm_update(self, entry: IntervalCostEntry, duals: ReplenishmentDuals,
                    rule: LevelRestriction = _NO_RESTRICTION) -> IntervalCostEntry:
        """Walk from the zero-dual optimum in the direction of the level dual."""
        t1, t2 = entry.interval
        B = entry.bound
        dual = duals.level_coef(t1, t2)
        f = self.cost_fn(t1, t2, duals)
        s = entry.base_s
        while True:
            if dual == 0.0:
                break
            nxt = s - 1 if dual > 0 else s + 1
            if not 0 <= nxt <= B:
                break
            diff = self.inv(t1, t2, nxt) - self.inv(t1, t2, s)
            if diff >= abs(dual):
                break
            if diff <= WARM_EPS or abs(dual) <= 5.0 * diff:
                s = nxt
                continue
            s, _ = golden_section(f, 0, B)
            break
        best_s, c = restricted_min(f, s, 0, B, rule)
        return IntervalCostEntry((t1, t2), entry.base_s, best_s, c + self.constant(t1, t2, duals), B)


# ---------------------------------------------------------------------------
# plan structure helpers


def interval_len(t1: int, t2: int, T: int) -> int:
    d = (t2 - t1) % T
    return d if d else T


def interior(t1: int, t2: int, T: int) -> set[int]:
    return {(t1 + k) % T for k in range(1, interval_len(t1, t2, T))}


def conflicts(a: Interval, b: Interval, T: int) -> bool:
    """True when no single plan can contain both intervals."""
    if a == b:
        return False
    ia, ib = interior(*a, T), interior(*b, T)
    if a[0] == b[0] or a[1] == b[1]:
        return True
    if a[0] in ib or a[1] in ib or b[0] in ia or b[1] in ia:
        return True
    return False


def build_chains(enforced: Iterable[Interval], T: int) -> tuple[list[list[Interval]], bool]:
    """Group enforced intervals into maximal paths/cycles; flag infeasible sets."""
    ivs = sorted(set(enforced))
    for a, b in itertools.combinations(ivs, 2):
        if conflicts(a, b, T):
            return [], False
    by_start = {a: (a, b) for a, b in ivs}
    ends = {b for _, b in ivs}
    chains: list[list[Interval]] = []
    used: set[Interval] = set()
    for iv in ivs:
        if iv in used or iv[0] in ends:
            continue
        chain = [iv]
        used.add(iv)
        while chain[-1][1] in by_start and by_start[chain[-1][1]] not in used:
            nxt = by_start[chain[-1][1]]
            chain.append(nxt)
            used.add(nxt)
        chains.append(chain)
    for iv in ivs:  # leftovers are full cycles
        if iv in used:
            continue
        chain = [iv]
        used.add(iv)
        while by_start[chain[-1][1]] not in used:
            nxt = by_start[chain[-1][1]]
            chain.append(nxt)
            used.add(nxt)
        chains.append(chain)
    return chains, True


def is_cycle(chain: Sequence[Interval]) -> bool:
    return chain[-1][1] == chain[0][0]


# ---------------------------------------------------------------------------
# chain dynamic programme


def chain_dp(intervals: Sequence[Interval], costs: Sequence[Callable[[int], float]],
             domains: Sequence[Sequence[int]], slack: Sequence[float],
             constrained: Sequence[bool], cyclic: bool) -> tuple[list[int] | None, float]:
    """Jointly optimise levels along a chain of intervals.

    ``costs[j](s)`` prices interval j at start level s over ``domains[j]``;
    when ``constrained[j]`` the next level must satisfy
    ``s[j+1] >= s[j] - slack[j]``.  For a cyclic chain the last interval links
    back to the first.  Backward recursion with suffix minima.
    """
    k = len(intervals)
    doms = [np.asarray(sorted(d), dtype=int) for d in domains]
    if any(d.size == 0 for d in doms):
        return None, math.inf
    vals = [np.array([costs[j](int(s)) for s in doms[j]]) for j in range(k)]

    def backward(wrap_first: int | None) -> tuple[list[np.ndarray], list[np.ndarray]]:
        # W[j][a] = best cost of intervals j..k-1 given level doms[j][a]
        W = [None] * k
        arg = [None] * k
        last = vals[k - 1].copy()
        if wrap_first is not None and constrained[k - 1]:
            ok = wrap_first >= doms[k - 1] - slack[k - 1] - 1e-9
            last = np.where(ok, last, math.inf)
        W[k - 1] = last
        for j in range(k - 2, -1, -1):
            nxt = W[j + 1]
            # suffix minima over the next level
            suf = np.minimum.accumulate(nxt[::-1])[::-1]
            sarg = np.empty(len(nxt), dtype=int)
            best_i = len(nxt) - 1
            for a in range(len(nxt) - 1, -1, -1):
                if nxt[a] <= nxt[best_i]:
                    best_i = a
                sarg[a] = best_i
            if constrained[j]:
                thr = doms[j] - slack[j] - 1e-9
                pos = np.searchsorted(doms[j + 1], thr, side="left")
            else:
                pos = np.zeros(len(doms[j]), dtype=int)
            tail = np.where(pos < len(nxt), suf[np.minimum(pos, len(nxt) - 1)], math.inf)
            W[j] = vals[j] + tail
            arg[j] = np.where(pos < len(nxt), sarg[np.minimum(pos, len(nxt) - 1)], -1)
        return W, arg

    def trace(W, arg, a0: int) -> list[int]:
        levels = [int(doms[0][a0])]
        a = a0
        for j in range(k - 1):
            a = int(arg[j][a])
            levels.append(int(doms[j + 1][a]))
        return levels

    if not cyclic:
        W, arg = backward(None)
        a0 = int(np.argmin(W[0]))
        if not math.isfinite(W[0][a0]):
            return None, math.inf
        return trace(W, arg, a0), float(W[0][a0])
    best: tuple[list[int] | None, float] = (None, math.inf)
    for a0, s0 in enumerate(doms[0]):
        W, arg = backward(int(s0))
        total = W[0][a0]
        if total < best[1] - 1e-12:
            best = (trace(W, arg, a0), float(total))
    return best


# ---------------------------------------------------------------------------
# temporal labeling


@dataclass
class TemporalLabel:
    visited: tuple[int, ...]
    unreachable: frozenset[int]
    cost: float
    arcs: tuple[int, ...] = ()  # indices into the arc list


@dataclass
class PlanArc:
    start: int
    end: int
    length: int
    cost: float
    visits: tuple[int, ...]  # visit periods covered (start plus chain interior visits)
    levels: tuple[int, ...]


def cheapest_cycle(arcs: Sequence[PlanArc], T: int, anchors: Sequence[int], restrict_to_max: bool,
                   dominance: bool = True) -> tuple[list[PlanArc] | None, float]:
    """Minimum-cost set of arcs going once around the cycle.

    For each anchor period the labels walk forward in cyclic order and
    close at the anchor after exactly T steps.  With ``restrict_to_max`` the
    anchor is the largest visited period, so periods after it start out
    unreachable and each plan is found exactly once.
    """
    out_of: dict[int, list[int]] = {}
    for k, a in enumerate(arcs):
        out_of.setdefault(a.start, []).append(k)
    best: tuple[list[PlanArc] | None, float] = (None, math.inf)
    for te in anchors:
        excluded = frozenset(t for t in range(T) if t > te) if restrict_to_max else frozenset()
        store: dict[int, list[TemporalLabel]] = {0: [TemporalLabel((te,), excluded | {te}, 0.0)]}
        for p in range(T):
            for lab in store.get(p, []):
                for k in out_of.get(lab.visited[-1], []):
                    a = arcs[k]
                    q = p + a.length
                    if q > T:
                        continue
                    if any(v in excluded for v in a.visits[1:]):
                        continue
                    if q < T and a.end in lab.unreachable:
                        continue
                    passed = {(te + d) % T for d in range(p + 1, q + 1)}
                    nl = TemporalLabel(lab.visited + (a.end,), lab.unreachable | passed,
                                       lab.cost + a.cost, lab.arcs + (k,))
                    bucket = store.setdefault(q, [])
                    if dominance:
                        if any(o.visited[-1] == nl.visited[-1] and o.unreachable <= nl.unreachable
                               and o.cost <= nl.cost for o in bucket):
                            continue
                        bucket[:] = [o for o in bucket if not (o.visited[-1] == nl.visited[-1]
                                                                and nl.unreachable <= o.unreachable
                                                                and nl.cost <= o.cost)]
                    bucket.append(nl)
        for lab in store.get(T, []):
            if lab.cost < best[1] - 1e-12:
                best = ([arcs[k] for k in lab.arcs], lab.cost)
    return best


# ---------------------------------------------------------------------------
# retailer pricing with lazy no-overshoot rows


@dataclass
class PricedPlan:
    levels: dict[int, int]
    reduced_cost: float
    plan_cost: float  # sum of interval costs only

    @property
    def visits(self) -> tuple[int, ...]:
        return tuple(sorted(self.levels))


@dataclass
class LazyNodeState:
    enforced: frozenset[Interval]
    forbidden: frozenset[Interval]
    bound: float = -math.inf


class RetailerPricer:
    """Exact pricing of replenishment plans for one retailer."""

    def __init__(self, inst: Instance, grid: BoundsGrid, cache: InventoryCostCache, i: int) -> None:
        self.inst = inst
        self.grid = grid
        self.i = i
        self.T = inst.cycle_len
        self.coster = IntervalCoster(inst, grid, cache, i)
        self.entries: dict[Interval, IntervalCostEntry] = {}
        self.nodes_explored = 0
        self.trace: list[str] = []

    # interval table --------------------------------------------------
    def _table(self, duals: ReplenishmentDuals, restr: PricingRestrictions) -> dict[Interval, IntervalCostEntry]:
        T = self.T
        table = {}
        for t1 in range(T):
            rule = restr.level(t1)
            for t2 in range(T):
                iv = (t1, t2)
                if iv in restr.forbidden_intervals:
                    continue
                prev = self.entries.get(iv)
                if prev is None:
                    e = self.coster.interval_cost(t1, t2, duals, rule)
                else:
                    e = self.coster.warm_update(prev, duals, rule)
                self.entries[iv] = e
                if e.best_s is not None:
                    table[iv] = e
        return table

    def _domain(self, t1: int, t2: int, restr: PricingRestrictions) -> list[int]:
        rule = restr.level(t1)
        return [s for s in range(self.coster.bound(t1, t2) + 1) if rule.allows(s)]

    def _chain_eval(self, ivs: Sequence[Interval], n_constrained: int, cyclic: bool,
                    duals: ReplenishmentDuals, restr: PricingRestrictions) -> tuple[list[int] | None, float]:
        costs = []
        for (a, b) in ivs:
            f = self.coster.cost_fn(a, b, duals)
            cst = self.coster.constant(a, b, duals)
            costs.append(lambda s, f=f, cst=cst: f(s) + cst)
        domains = [self._domain(a, b, restr) for a, b in ivs]
        slack = [self.grid.l_sum(self.i, a, b) for a, b in ivs]
        constrained = [j < n_constrained for j in range(len(ivs))]
        return chain_dp(ivs, costs, domains, slack, constrained, cyclic)

    def _relaxation(self, node: LazyNodeState, table: dict[Interval, IntervalCostEntry],
                    duals: ReplenishmentDuals, restr: PricingRestrictions, dominance: bool = True):
        T = self.T
        chains, ok = build_chains(node.enforced, T)
        if not ok:
            return None, math.inf
        enforced = node.enforced
        free = [iv for iv in table if iv not in node.forbidden and iv not in enforced
                and not any(conflicts(iv, e, T) for e in enforced)]
        arcs: list[PlanArc] = []
        for iv in free:
            e = table[iv]
            arcs.append(PlanArc(iv[0], iv[1], interval_len(*iv, T), e.best_cost, (iv[0],), (int(e.best_s),)))
        path_chains = [c for c in chains if not is_cycle(c)]
        cyc_chains = [c for c in chains if is_cycle(c)]
        if cyc_chains:
            if len(chains) > 1:
                return None, math.inf
            ch = cyc_chains[0]
            levels, cost = self._chain_eval(ch, len(ch), True, duals, restr)
            if levels is None:
                return None, math.inf
            return [PlanArc(ch[0][0], ch[0][0], T, cost, tuple(a for a, _ in ch), tuple(levels))], cost
        # replace every enforced path by composite arcs through its following free interval
        for ch in path_chains:
            tail = ch[-1][1]
            for iv in free:
                if iv[0] != tail:
                    continue
                ivs = list(ch) + [iv]
                length = sum(interval_len(*x, T) for x in ivs)
                if length > T:
                    continue
                levels, cost = self._chain_eval(ivs, len(ch), False, duals, restr)
                if levels is None:
                    continue
                arcs.append(PlanArc(ch[0][0], iv[1], length, cost, tuple(a for a, _ in ivs), tuple(levels)))
        chain_nodes = {a for ch in path_chains for a, _ in ch[1:]} | {c[-1][1] for c in path_chains}
        if path_chains:
            # plans must pass through chain starts; a composite arc is the only way out of one
            starts = {ch[0][0] for ch in path_chains}
            arcs = [a for a in arcs if not (a.start in starts and len(a.visits) == 1)]
            arcs = [a for a in arcs if a.start not in chain_nodes - starts or len(a.visits) > 1]
            anchors = [path_chains[0][0][0]]
            plan, cost = cheapest_cycle(arcs, T, anchors, restrict_to_max=False, dominance=dominance)
        else:
            plan, cost = cheapest_cycle(arcs, T, list(range(T)), restrict_to_max=True, dominance=dominance)
        if plan is None:
            return None, math.inf
        visited = set()
        for a in plan:
            visited.update(a.visits)
        if any(ch[0][0] not in visited for ch in path_chains):
            return None, math.inf
        return plan, cost

    @staticmethod
    def _levels_of(plan: Sequence[PlanArc]) -> dict[int, int]:
        out: dict[int, int] = {}
        for a in plan:
            for t, s in zip(a.visits, a.levels):
                out[t] = s
        return out

    def violated(self, levels: dict[int, int], node: LazyNodeState) -> list[Interval]:
        vs = sorted(levels)
        bad = []
        for k, t1 in enumerate(vs):
            t2 = vs[(k + 1) % len(vs)]
            if (t1, t2) in node.enforced:
                continue
            if levels[t2] - levels[t1] + self.grid.l_sum(self.i, t1, t2) < -1e-9:
                bad.append((t1, t2))
        return bad

    def price(self, duals: ReplenishmentDuals, restr: PricingRestrictions | None = None,
              dominance: bool = True, debug: bool = False) -> PricedPlan | None:
        """Best plan satisfying every no-overshoot row, or None if none exists."""
        restr = restr or PricingRestrictions()
        table = self._table(duals, restr)
        root = LazyNodeState(frozenset(restr.forced_intervals), frozenset(restr.forbidden_intervals))
        counter = itertools.count()
        heap: list[tuple[float, int, LazyNodeState, list[PlanArc], int]] = []
        self.trace = []

        def push(node: LazyNodeState, depth: int) -> None:
            plan, cost = self._relaxation(node, table, duals, restr, dominance)
            node.bound = cost
            if debug:
                self.trace.append("  " * depth + f"node Y={sorted(node.enforced)} N={sorted(node.forbidden)} bound={cost:.6g}")
            if plan is not None:
                heapq.heappush(heap, (cost, next(counter), node, plan, depth))

        push(root, 0)
        self.nodes_explored = 0
        while heap:
            cost, _, node, plan, depth = heapq.heappop(heap)
            self.nodes_explored += 1
            levels = self._levels_of(plan)
            bad = self.violated(levels, node)
            if not bad:
                const = duals.theta - duals.pi + duals.const
                return PricedPlan(levels, cost + const, cost)
            branch = bad[:MAX_BRANCH_INTERVALS]
            for choice in itertools.product((False, True), repeat=len(branch)):
                enf = set(node.enforced)
                forb = set(node.forbidden)
                for iv, on in zip(branch, choice):
                    (enf if on else forb).add(iv)
                push(LazyNodeState(frozenset(enf), frozenset(forb)), depth + 1)
        return None

    def plan_reduced_cost(self, levels: dict[int, int], duals: ReplenishmentDuals) -> float:
        vs = sorted(levels)
        total = duals.theta - duals.pi + duals.const
        for k, t1 in enumerate(vs):
            t2 = vs[(k + 1) % len(vs)]
            total += self.coster.full_cost(t1, t2, levels[t1], duals)
        return total

    def dump_tree(self) -> str:
        return "\n".join(self.trace) + "\n"


def plan_feasible(levels: dict[int, int], grid: BoundsGrid, i: int) -> bool:
    """No-overshoot rows and level bounds for a complete plan."""
    vs = sorted(levels)
    for k, t1 in enumerate(vs):
        t2 = vs[(k + 1) % len(vs)]
        s1 = levels[t1]
        if s1 < 0 or s1 > grid.level_bound(i, t1, t2):
            return False
        if levels[t2] - s1 + grid.l_sum(i, t1, t2) < -1e-9:
            return False
    return True
