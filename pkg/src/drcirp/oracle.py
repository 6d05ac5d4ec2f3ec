"""Exhaustive reference solvers for small instances."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .ambiguity import BoundsGrid
from .core_model import Instance
from .inventory import InventoryCostCache
from .replenishment import IntervalCoster, PricingRestrictions, ReplenishmentDuals
from .routing import StationaryRetailerModel, divisors, route_length


def visit_sets(T: int):
    for k in range(1, T + 1):
        yield from itertools.combinations(range(T), k)


def _interval_table(coster: IntervalCoster, duals: ReplenishmentDuals, t1: int, t2: int) -> np.ndarray:
    B = coster.bound(t1, t2)
    return np.array([coster.full_cost(t1, t2, s, duals) for s in range(B + 1)])


def brute_force_pricing(inst: Instance, grid: BoundsGrid, cache: InventoryCostCache, i: int,
                        duals: ReplenishmentDuals,
                        restr: PricingRestrictions | None = None) -> tuple[dict[int, int] | None, float]:
    """Best feasible plan over every visit set and every integer level vector."""
    restr = restr or PricingRestrictions()
    coster = IntervalCoster(inst, grid, cache, i)
    T = inst.cycle_len
    best: tuple[dict[int, int] | None, float] = (None, math.inf)
    for vs in visit_sets(T):
        k = len(vs)
        ivs = [(vs[j], vs[(j + 1) % k]) for j in range(k)]
        if not restr.forced_intervals <= set(ivs) or restr.forbidden_intervals & set(ivs):
            continue
        tabs = []
        for a, b in ivs:
            tab = _interval_table(coster, duals, a, b)
            rule = restr.level(a)
            mask = np.array([rule.allows(s) for s in range(len(tab))])
            tabs.append(np.where(mask, tab, np.inf))
        total = np.zeros([len(t) for t in tabs])
        for j, tab in enumerate(tabs):
            shape = [1] * k
            shape[j] = len(tab)
            total = total + tab.reshape(shape)
        for j, (a, b) in enumerate(ivs):
            nj = (j + 1) % k
            slack = grid.l_sum(i, a, b)
            if k == 1:
                ok = np.arange(len(tabs[0])) * 0 + slack >= -1e-9
                total = np.where(ok, total, np.inf)
                continue
            si = np.arange(len(tabs[j]))
            sn = np.arange(len(tabs[nj]))
            ok2 = (sn[None, :] - si[:, None] + slack) >= -1e-9
            shape = [1] * k
            shape[j] = len(si)
            shape[nj] = len(sn)
            if nj < j:
                ok2 = ok2.T
            total = np.where(ok2.reshape(shape), total, np.inf)
        idx = np.unravel_index(int(np.argmin(total)), total.shape)
        val = float(total[idx])
        if math.isfinite(val) and val < best[1] - 1e-12:
            best = ({vs[j]: int(idx[j]) for j in range(k)}, val)
    plan, val = best
    return plan, val + duals.theta - duals.pi + duals.const


class CapsExceeded(ValueError):
    pass


ORACLE_MAX_N = 4
ORACLE_MAX_T = 4
ORACLE_MAX_LEVEL = 30


def held_karp(nodes: Sequence[int], dist) -> tuple[float, tuple[int, ...]]:
    """Shortest tour from the warehouse through ``nodes`` (node ids)."""
    nodes = tuple(sorted(nodes))
    if not nodes:
        return 0.0, ()
    k = len(nodes)
    best: dict[tuple[int, int], tuple[float, int]] = {}
    for j in range(k):
        best[(1 << j, j)] = (dist[0][nodes[j]], -1)
    for mask in range(1, 1 << k):
        for j in range(k):
            if (mask, j) not in best:
                continue
            c, _ = best[(mask, j)]
            for l in range(k):
                if mask & (1 << l):
                    continue
                key = (mask | (1 << l), l)
                val = c + dist[nodes[j]][nodes[l]]
                if key not in best or val < best[key][0] - 1e-12:
                    best[key] = (val, j)
    full = (1 << k) - 1
    end = min(range(k), key=lambda j: (best[(full, j)][0] + dist[nodes[j]][0], j))
    length = best[(full, end)][0] + dist[nodes[end]][0]
    seq, mask, j = [], full, end
    while j != -1:
        seq.append(nodes[j])
        _, prev = best[(mask, j)]
        mask ^= 1 << j
        j = prev
    return float(length), tuple(reversed(seq))


def _pareto(loads: np.ndarray, cost: np.ndarray, payload: list) -> tuple[np.ndarray, np.ndarray, list]:
    order = np.lexsort((np.arange(len(cost)), cost))
    kept: list[int] = []
    for k in order:
        if kept:
            K = loads[kept]
            if np.any(np.all(K <= loads[k] + 1e-9, axis=1)):
                continue
        kept.append(int(k))
    return loads[kept], cost[kept], [payload[k] for k in kept]


@dataclass
class RetailerOptions:
    """Pareto-optimal (loads, cost) level vectors of one retailer for every visit set."""

    by_visits: dict[tuple[int, ...], tuple[np.ndarray, np.ndarray, list]]


def retailer_options(inst: Instance, grid: BoundsGrid, cache: InventoryCostCache, i: int) -> RetailerOptions:
    T = inst.cycle_len
    out = {}
    for vs in visit_sets(T):
        k = len(vs)
        ivs = [(vs[j], vs[(j + 1) % k]) for j in range(k)]
        bounds = [grid.level_bound(i, a, b) for a, b in ivs]
        if max(bounds) > ORACLE_MAX_LEVEL:
            raise CapsExceeded(f"level bound {max(bounds)} exceeds {ORACLE_MAX_LEVEL}")
        grids = np.meshgrid(*[np.arange(B + 1) for B in bounds], indexing="ij")
        S = np.stack([g.ravel() for g in grids], axis=1)
        ok = np.ones(len(S), bool)
        cost = np.zeros(len(S))
        loads = np.zeros((len(S), T))
        for j, (a, b) in enumerate(ivs):
            nj = (j + 1) % k
            tab = np.array([cache.get(i, a, b, s) for s in range(bounds[j] + 1)]) / T
            cost += tab[S[:, j]]
            ok &= S[:, nj] - S[:, j] + grid.l_sum(i, a, b) >= -1e-9
            loads[:, b] += S[:, nj] - S[:, j] + grid.u_sum(i, a, b)
        ok &= np.all(loads <= inst.capacity + 1e-9, axis=1)
        idx = np.flatnonzero(ok)
        if idx.size == 0:
            continue
        payload = [tuple(int(x) for x in S[r]) for r in idx]
        out[vs] = _pareto(loads[idx], cost[idx], payload)
    return RetailerOptions(out)


def _merge(a, b, cap: float):
    La, Ca, Pa = a
    Lb, Cb, Pb = b
    L = (La[:, None, :] + Lb[None, :, :]).reshape(-1, La.shape[1])
    C = (Ca[:, None] + Cb[None, :]).ravel()
    P = [pa + pb for pa in Pa for pb in Pb]
    ok = np.all(L <= cap + 1e-9, axis=1)
    idx = np.flatnonzero(ok)
    if idx.size == 0:
        return None
    return _pareto(L[idx], C[idx], [P[r] for r in idx])


def _cluster_inventory(members: Sequence[int], choice: Sequence[tuple[int, ...]], opts, cap: float):
    acc = None
    for i, vs in zip(members, choice):
        L, C, P = opts[i].by_visits[vs]
        cur = (L, C, [(x,) for x in P])
        acc = cur if acc is None else _merge(acc, cur, cap)
        if acc is None:
            return None
    k = int(np.argmin(acc[1]))
    return float(acc[1][k]), acc[2][k]


def _tour(nodes: frozenset[int], inst: Instance, memo: dict) -> tuple[float, tuple[int, ...]] | None:
    if nodes not in memo:
        length, seq = held_karp(sorted(nodes), inst.dist)
        memo[nodes] = (length, seq) if length <= inst.max_tour_len + 1e-9 else None
    return memo[nodes]


def best_cluster_flexible(members, inst, opts, memo, policy: str = "flexible"):
    """Cheapest pattern for a cluster: (cost, visit sets, level vectors, per-period tours)."""
    T = inst.cycle_len
    rho = inst.trans_cost
    best = None
    choices = [sorted(opts[i].by_visits) for i in members]
    if any(not c for c in choices):
        return None
    nodes_all = frozenset(i + 1 for i in members)
    if policy == "consistent":
        full = _tour(nodes_all, inst, memo)
        if full is None:
            return None
    for choice in itertools.product(*choices):
        if policy == "consistent":
            active = sorted(set().union(*map(set, choice)))
            route_cost = rho * full[0] * len(active) / T
            tours = {t: full[1] for t in active}
        else:
            route_cost = 0.0
            tours = {}
            feasible = True
            for t in range(T):
                at = frozenset(i + 1 for i, vs in zip(members, choice) if t in vs)
                if not at:
                    continue
                tr = _tour(at, inst, memo)
                if tr is None:
                    feasible = False
                    break
                route_cost += rho * tr[0] / T
                tours[t] = tr[1]
            if not feasible:
                continue
        if best is not None and route_cost >= best[0]:
            continue
        inv = _cluster_inventory(members, choice, opts, inst.capacity)
        if inv is None:
            continue
        total = route_cost + inv[0]
        if best is None or total < best[0] - 1e-12:
            best = (total, choice, inv[1], tours)
    return best


def best_cluster_fixed(members, inst: Instance, model: StationaryRetailerModel, memo):
    tr = _tour(frozenset(i + 1 for i in members), inst, memo)
    if tr is None:
        return None
    best = None
    for k in divisors(inst.cycle_len):
        if sum(model.load(i, k) for i in members) > inst.capacity + 1e-9:
            continue
        c = (inst.trans_cost * tr[0] + sum(model.best(i, k)[1] for i in members)) / k
        if best is None or c < best[0] - 1e-12:
            best = (c, k, tr[1])
    return best


def set_partitions(items: Sequence[int]):
    items = list(items)
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in set_partitions(rest):
        yield [[first]] + part
        for k in range(len(part)):
            yield part[:k] + [[first] + part[k]] + part[k + 1:]


@dataclass
class OracleResult:
    objective: float
    clusters: list[tuple[int, ...]]
    patterns: list  # bnp.Pattern objects of the optimal partition
    feasible: bool

    def solution(self, inst: Instance, policy: str):
        """The oracle optimum in the solver's solution format."""
        from .bnp import Solution, emergency_constant

        const = emergency_constant(inst)
        if not self.feasible:
            return Solution(policy, "infeasible", [], math.inf, -math.inf, const)
        pats = sorted(self.patterns, key=lambda p: p.cluster)
        return Solution(policy, "optimal", pats, self.objective, self.objective, const)


def brute_force_solve(inst: Instance, policy: str = "flexible",
                      cache: InventoryCostCache | None = None) -> OracleResult:
    """Exhaustive optimum over partitions, visit sets, level vectors and tours."""
    from .bnp import (assemble_pattern, emergency_constant, fixed_pattern, make_plan)
    from .routing import FixedIntervalPattern, fixed_interval_cost

    N, T = inst.n_retailers, inst.cycle_len
    if N > ORACLE_MAX_N or T > ORACLE_MAX_T:
        raise CapsExceeded(f"oracle limited to N <= {ORACLE_MAX_N} and T <= {ORACLE_MAX_T}")
    grid = BoundsGrid(inst)
    cache = cache or InventoryCostCache(inst)
    memo: dict = {}
    cluster_best: dict[tuple[int, ...], tuple[float, object]] = {}
    if policy == "fixed-interval":
        model = StationaryRetailerModel(inst)
        for k in range(1, N + 1):
            for members in itertools.combinations(range(N), k):
                r = best_cluster_fixed(members, inst, model, memo)
                if r is not None:
                    c, kappa, seq = r
                    fp = FixedIntervalPattern(seq, kappa, tuple(model.best(j - 1, kappa)[0] for j in seq),
                                              route_length(seq, inst.dist), fixed_interval_cost(model, seq, kappa))
                    pat = fixed_pattern(inst, grid, model, fp)
                    cluster_best[members] = (pat.cost, pat)
    else:
        opts = [retailer_options(inst, grid, cache, i) for i in range(N)]
        for k in range(1, N + 1):
            for members in itertools.combinations(range(N), k):
                r = best_cluster_flexible(members, inst, opts, memo, policy)
                if r is None:
                    continue
                _, choice, levels, tours = r
                plans = [make_plan(inst, grid, cache, i, dict(zip(vs, lv)))
                         for i, vs, lv in zip(members, choice, levels)]
                pat = assemble_pattern(inst, plans, sorted(tours.items()))
                cluster_best[members] = (pat.cost, pat)
    best = (math.inf, None)
    for part in set_partitions(range(N)):
        if len(part) > inst.n_vehicles:
            continue
        keys = [tuple(sorted(b)) for b in part]
        if any(k not in cluster_best for k in keys):
            continue
        c = sum(cluster_best[k][0] for k in keys)
        if c < best[0] - 1e-12:
            best = (c, sorted(keys))
    if best[1] is None:
        return OracleResult(math.inf, [], [], False)
    pats = [cluster_best[k][1] for k in best[1]]
    return OracleResult(best[0] + emergency_constant(inst), best[1], pats, True)
