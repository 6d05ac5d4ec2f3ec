"""Nested branch-and-price over retailer clusters.

The first level picks a partition of retailers into vehicle patterns.  The
second level builds one pattern for a cluster by combining route columns
with per-retailer replenishment plans, and is itself solved by
branch-and-price.  The fixed-interval policy prices whole patterns directly.
"""

from __future__ import annotations

import heapq
import itertools
import json
import math
import random
import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .ambiguity import BoundsGrid, loads_by_period
from .core_model import Instance, plan_intervals
from .inventory import InventoryCostCache
from .lp import INTEGRALITY_TOL, NumericalError, solve_dense
from .replenishment import LevelRestriction, PricingRestrictions, ReplenishmentDuals, RetailerPricer
from .routing import (ArcRules, FixedIntervalPattern, RouteColumn, RoutingDuals, StationaryRetailerModel,
                      divisors, fixed_interval_cost, generate_consistent_routes, generate_fixed_interval_pattern,
                      generate_flexible_routes, route_length)

POLICIES = ("fixed-interval", "consistent", "flexible")
BRANCH_TARGET = 0.6


class InstanceInfeasible(RuntimeError):
    pass


@dataclass
class SolverConfig:
    policy: str = "flexible"
    time_limit: float = 3600.0
    pp_time_limit: float = 300.0
    early_stop_nodes: int = 50
    column_cap: int = 50
    tol: float = 1e-7
    seed: int = 0
    random_arc: bool = False
    record_times: bool = False
    dominance: bool = True

    def __post_init__(self) -> None:
        if self.policy not in POLICIES:
            raise ValueError(f"unknown policy {self.policy!r}; expected one of {POLICIES}")


# ---------------------------------------------------------------------------
# columns


@dataclass(frozen=True)
class PlanColumn:
    retailer: int
    visits: tuple[int, ...]
    levels: tuple[int, ...]
    inventory: float  # per-period worst-case inventory cost
    emergency: float  # per-period share of the emergency term (0 when e = 0)
    loads: tuple[float, ...]  # robust delivery load per period

    @property
    def key(self) -> tuple:
        return self.retailer, self.visits, self.levels

    def level_map(self) -> dict[int, int]:
        return dict(zip(self.visits, self.levels))

    def intervals(self, T: int) -> list[tuple[int, int]]:
        return [(iv.start, iv.end) for iv in plan_intervals(list(self.visits), T)]

    def to_json(self) -> dict:
        return {"retailer": self.retailer + 1, "visits": [t + 1 for t in self.visits],
                "levels": list(self.levels), "inventoryCost": self.inventory}


def make_plan(inst: Instance, grid: BoundsGrid, cache: InventoryCostCache, i: int,
              levels: dict[int, int]) -> PlanColumn:
    T = inst.cycle_len
    visits = tuple(sorted(levels))
    inv = sum(cache.get(i, iv.start, iv.end, levels[iv.start]) for iv in plan_intervals(list(visits), T)) / T
    by_t = loads_by_period(grid, i, levels)
    loads = tuple(float(by_t.get(t, 0.0)) for t in range(T))
    return PlanColumn(i, visits, tuple(levels[t] for t in visits), inv, plan_emergency(inst, grid, i), loads)


def plan_emergency(inst: Instance, grid: BoundsGrid, i: int) -> float:
    """Share of the emergency term carried by one served retailer."""
    if inst.emergency_cost == 0.0:
        return 0.0
    T = inst.cycle_len
    return -inst.emergency_cost / T * float(grid.mean[i].sum())


def emergency_constant(inst: Instance) -> float:
    """Solution-level part of the emergency term: e * V * Q."""
    return inst.emergency_cost * inst.n_vehicles * inst.capacity


@dataclass(frozen=True)
class Pattern:
    cluster: tuple[int, ...]
    routes: tuple[tuple[int, tuple[int, ...]], ...]  # (period, nodes) for each executed period
    plans: tuple[PlanColumn, ...]
    vehicle: float
    transport: float
    inventory: float
    emergency: float
    kappa: int | None = None

    @property
    def cost(self) -> float:
        return self.vehicle + self.transport + self.inventory + self.emergency

    @property
    def key(self) -> tuple:
        return self.cluster, self.routes, tuple(p.key for p in self.plans), self.kappa

    def arcs(self) -> set[tuple[int, int]]:
        out = set()
        for _, nodes in self.routes:
            seq = (0,) + nodes + (0,)
            out.update(zip(seq[:-1], seq[1:]))
        return out

    def route_sequences(self) -> list[tuple[int, ...]]:
        return [(0,) + nodes + (0,) for _, nodes in self.routes]

    def to_json(self) -> dict:
        d = {"retailers": [i + 1 for i in self.cluster],
             "routes": [{"period": t + 1, "nodes": [0, *nodes, 0]} for t, nodes in self.routes],
             "plans": [p.to_json() for p in self.plans],
             "cost": {"vehicle": self.vehicle, "transport": self.transport,
                      "inventory": self.inventory, "emergency": self.emergency, "total": self.cost}}
        if self.kappa is not None:
            d["kappa"] = self.kappa
        return d


def pattern_from_json(d: dict, inst: Instance) -> Pattern:
    plans = tuple(PlanColumn(p["retailer"] - 1, tuple(t - 1 for t in p["visits"]), tuple(p["levels"]),
                             p.get("inventoryCost", 0.0), 0.0, ()) for p in d["plans"])
    routes = tuple((r["period"] - 1, tuple(r["nodes"][1:-1])) for r in d["routes"])
    c = d["cost"]
    return Pattern(tuple(i - 1 for i in d["retailers"]), routes, plans, c["vehicle"], c["transport"],
                   c["inventory"], c["emergency"], d.get("kappa"))


def assemble_pattern(inst: Instance, plans: Sequence[PlanColumn], routes: Sequence[tuple[int, tuple[int, ...]]],
                     kappa: int | None = None, inventory: float | None = None) -> Pattern:
    T = inst.cycle_len
    routes = tuple(sorted((t, tuple(n)) for t, n in routes if n))
    transport = sum(inst.trans_cost * route_length(n, inst.dist) for _, n in routes) / T
    plans = tuple(sorted(plans, key=lambda p: p.retailer))
    inv = sum(p.inventory for p in plans) if inventory is None else inventory
    return Pattern(tuple(p.retailer for p in plans), routes, plans, inst.vehicle_cost, transport, inv,
                   sum(p.emergency for p in plans), kappa)


def pattern_issues(pat: Pattern, inst: Instance, grid: BoundsGrid) -> list[str]:
    """Visit consistency, capacity and tour length of one pattern."""
    out = []
    T = inst.cycle_len
    visited = {t: set(n) for t, n in pat.routes}
    for p in pat.plans:
        for t in p.visits:
            if p.retailer + 1 not in visited.get(t, set()):
                out.append(f"retailer {p.retailer + 1} replenished in period {t + 1} without a visit")
    for t in range(T):
        load = sum(p.loads[t] for p in pat.plans if p.loads)
        if load > inst.capacity + 1e-6:
            out.append(f"robust load {load:.6g} exceeds capacity in period {t + 1}")
    for t, n in pat.routes:
        if route_length(n, inst.dist) > inst.max_tour_len + 1e-9:
            out.append(f"tour in period {t + 1} exceeds the length limit")
    return out


# ---------------------------------------------------------------------------
# solution


@dataclass
class SolveStats:
    first_level_nodes: int = 0
    columns: int = 0
    pp_time: float = 0.0
    second_level_nodes: int = 0
    routes: int = 0
    route_time: float = 0.0
    replnsh: int = 0
    replnsh_time: float = 0.0
    unproven_nodes: int = 0  # first-level nodes whose pricing hit a time limit

    def to_json(self, record_times: bool) -> dict:
        t = (lambda v: round(v, 6)) if record_times else (lambda v: None)
        return {"firstLevelNodes": self.first_level_nodes, "columns": self.columns, "ppTime": t(self.pp_time),
                "secondLevelNodes": self.second_level_nodes, "routes": self.routes,
                "routeTime": t(self.route_time), "replnsh": self.replnsh, "replnshTime": t(self.replnsh_time)}


@dataclass
class Solution:
    policy: str
    status: str  # optimal | time-limit | infeasible
    patterns: list[Pattern]
    objective: float
    lower_bound: float
    emergency_constant: float = 0.0
    stats: SolveStats = field(default_factory=SolveStats)
    record_times: bool = False

    @property
    def gap(self) -> float:
        if not self.patterns or not math.isfinite(self.objective):
            return math.inf
        return max(0.0, (self.objective - self.lower_bound) / max(abs(self.objective), 1e-12))

    def cost_breakdown(self) -> dict:
        return {"vehicle": sum(p.vehicle for p in self.patterns),
                "transport": sum(p.transport for p in self.patterns),
                "inventory": sum(p.inventory for p in self.patterns),
                "emergency": sum(p.emergency for p in self.patterns) + self.emergency_constant}

    def to_json(self) -> dict:
        gap = self.gap
        return {"policy": self.policy, "status": self.status,
                "objective": self.objective if math.isfinite(self.objective) else None,
                "lowerBound": self.lower_bound if math.isfinite(self.lower_bound) else None,
                "gap": gap if math.isfinite(gap) else None,
                "costs": self.cost_breakdown(),
                "patterns": [p.to_json() for p in self.patterns],
                "statistics": self.stats.to_json(self.record_times)}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    @staticmethod
    def from_json(d: dict, inst: Instance) -> "Solution":
        pats = [pattern_from_json(p, inst) for p in d["patterns"]]
        obj = d["objective"] if d["objective"] is not None else math.inf
        lb = d["lowerBound"] if d["lowerBound"] is not None else -math.inf
        return Solution(d["policy"], d["status"], pats, obj, lb, d["costs"]["emergency"]
                        - sum(p.emergency for p in pats))


# ---------------------------------------------------------------------------
# branching rules


def closest_to_target(values: Sequence[float], target: float = BRANCH_TARGET,
                      tol: float = INTEGRALITY_TOL) -> int | None:
    """Index of the fractional value closest to the target, first index on ties."""
    best, best_d = None, math.inf
    for k, v in enumerate(values):
        if abs(v - round(v)) <= tol:
            continue
        d = abs(v - target)
        if d < best_d - 1e-12:
            best, best_d = k, d
    return best


@dataclass(frozen=True)
class BranchDecision:
    kind: str  # arc | cluster | retailer | interval | level | route-arc | period
    item: tuple


def first_level_branch(patterns: Sequence[Pattern], q: Sequence[float], policy: str,
                       rng: random.Random | None = None, decided: frozenset = frozenset()) -> BranchDecision | None:
    """Branching decision for a fractional first-level solution, or None if it is integral.

    Arc branching for the consistent and fixed-interval policies, cluster
    branching for the flexible policy and whenever all arc flows are integral.
    """
    if all(abs(v - round(v)) <= INTEGRALITY_TOL for v in q):
        return None
    clusters: dict[tuple[int, ...], float] = {}
    for p, v in zip(patterns, q):
        clusters[p.cluster] = clusters.get(p.cluster, 0.0) + v
    if all(abs(v - round(v)) <= INTEGRALITY_TOL for v in clusters.values()):
        return None
    if policy != "flexible":
        flow: dict[tuple[int, int], float] = {}
        for p, v in zip(patterns, q):
            for a in p.arcs():
                flow[a] = flow.get(a, 0.0) + v
        k = closest_to_target(q)
        order = [k] + [j for j in range(len(q)) if j != k] if k is not None else range(len(q))
        for j in order:
            if abs(q[j] - round(q[j])) <= INTEGRALITY_TOL:
                continue
            frac = sorted(a for a in patterns[j].arcs()
                          if a not in decided and abs(flow[a] - round(flow[a])) > INTEGRALITY_TOL)
            if frac:
                arc = rng.choice(frac) if rng is not None else frac[0]
                return BranchDecision("arc", arc)
    keys = sorted(clusters)
    k = closest_to_target([clusters[c] for c in keys])
    return BranchDecision("cluster", keys[k])


def cheapest_per_cluster(patterns: Sequence[Pattern], q: Sequence[float]) -> list[Pattern]:
    """Round a solution whose cluster sums are integral: cheapest positive pattern per cluster."""
    chosen: dict[tuple[int, ...], Pattern] = {}
    for p, v in zip(patterns, q):
        if v > INTEGRALITY_TOL:
            cur = chosen.get(p.cluster)
            if cur is None or p.cost < cur.cost - 1e-12:
                chosen[p.cluster] = p
    return [chosen[c] for c in sorted(chosen)]


# ---------------------------------------------------------------------------
# second level


@dataclass(frozen=True)
class SecondNode:
    forced_retailers: frozenset = frozenset()
    forbidden_retailers: frozenset = frozenset()
    forced_intervals: frozenset = frozenset()  # (i, t1, t2)
    forbidden_intervals: frozenset = frozenset()
    forced_levels: frozenset = frozenset()  # (i, t, v): if t is visited its level is v
    banned_levels: frozenset = frozenset()
    forbidden_arcs: frozenset = frozenset()  # consistent (a, b); flexible (t, a, b)
    forced_arcs: frozenset = frozenset()
    forced_periods: frozenset = frozenset()
    forbidden_periods: frozenset = frozenset()

    def child(self, d: BranchDecision, take: bool) -> "SecondNode":
        add = lambda s, x: s | {x}  # noqa: E731
        if d.kind == "retailer":
            return (replace(self, forced_retailers=add(self.forced_retailers, d.item[0])) if take
                    else replace(self, forbidden_retailers=add(self.forbidden_retailers, d.item[0])))
        if d.kind == "interval":
            return (replace(self, forced_intervals=add(self.forced_intervals, d.item)) if take
                    else replace(self, forbidden_intervals=add(self.forbidden_intervals, d.item)))
        if d.kind == "level":
            return (replace(self, forced_levels=add(self.forced_levels, d.item)) if take
                    else replace(self, banned_levels=add(self.banned_levels, d.item)))
        if d.kind == "route-arc":
            return (replace(self, forced_arcs=add(self.forced_arcs, d.item)) if take
                    else replace(self, forbidden_arcs=add(self.forbidden_arcs, d.item)))
        if d.kind == "period":
            return (replace(self, forced_periods=add(self.forced_periods, d.item[0])) if take
                    else replace(self, forbidden_periods=add(self.forbidden_periods, d.item[0])))
        raise ValueError(d.kind)

    def restrictions(self, i: int) -> PricingRestrictions:
        levels: dict[int, LevelRestriction] = {}
        for (r, t, v) in self.forced_levels:
            if r == i:
                levels[t] = LevelRestriction(forced=v, banned=levels.get(t, LevelRestriction()).banned)
        for (r, t, v) in self.banned_levels:
            if r == i:
                cur = levels.get(t, LevelRestriction())
                levels[t] = LevelRestriction(cur.forced, cur.banned | {v})
        return PricingRestrictions(frozenset((a, b) for r, a, b in self.forced_intervals if r == i),
                                   frozenset((a, b) for r, a, b in self.forbidden_intervals if r == i), levels)

    def allows_plan(self, p: PlanColumn, T: int) -> bool:
        i = p.retailer
        if i in self.forbidden_retailers:
            return False
        ivs = set(p.intervals(T))
        for (r, a, b) in self.forced_intervals:
            if r == i and (a, b) not in ivs:
                return False
        for (r, a, b) in self.forbidden_intervals:
            if r == i and (a, b) in ivs:
                return False
        lv = p.level_map()
        for (r, t, v) in self.forced_levels:
            if r == i and t in lv and lv[t] != v:
                return False
        for (r, t, v) in self.banned_levels:
            if r == i and lv.get(t) == v:
                return False
        return True

    def allows_route(self, c: RouteColumn, policy: str) -> bool:
        arcs = c.arcs()
        if policy == "flexible":
            (t,) = tuple(c.periods)
            return not any((t, a, b) in self.forbidden_arcs for a, b in arcs)
        if any(a in self.forbidden_arcs for a in arcs):
            return False
        return not (c.periods & self.forbidden_periods)


def second_level_branch(plans: Sequence[PlanColumn], gamma: Sequence[float], routes: Sequence[RouteColumn],
                        lam: Sequence[float], policy: str, T: int) -> BranchDecision | None:
    """Retailer, then interval, then level branching; routing branches once plans are integral."""
    tol = INTEGRALITY_TOL
    retailers = sorted({p.retailer for p in plans})
    served = {i: sum(g for p, g in zip(plans, gamma) if p.retailer == i) for i in retailers}
    k = closest_to_target([served[i] for i in retailers])
    if k is not None:
        return BranchDecision("retailer", (retailers[k],))
    pos = [(p, g) for p, g in zip(plans, gamma) if g > tol]
    pos.sort(key=lambda x: x[0].key)
    for p, g in pos:
        if g >= 1.0 - tol:
            continue
        for iv in p.intervals(T):
            tot = sum(g2 for p2, g2 in pos if p2.retailer == p.retailer and iv in p2.intervals(T))
            if abs(tot - round(tot)) > tol:
                return BranchDecision("interval", (p.retailer, iv[0], iv[1]))
    for i in retailers:
        mine = [p for p, _ in pos if p.retailer == i]
        if len(mine) < 2:
            continue
        first = mine[0].level_map()
        for other in mine[1:]:
            lv = other.level_map()
            for t in sorted(first):
                if lv.get(t) != first[t]:
                    return BranchDecision("level", (i, t, first[t]))
    # plans are integral; make the routing integral
    active = [(c, v) for c, v in zip(routes, lam) if v > tol and c.nodes]
    flow: dict[tuple, float] = {}
    for c, v in active:
        for a in c.arcs():
            key = ((next(iter(c.periods)),) + a) if policy == "flexible" else a
            flow[key] = flow.get(key, 0.0) + v
    for key in sorted(flow):
        if abs(flow[key] - round(flow[key])) > tol:
            return BranchDecision("route-arc", key)
    if policy == "consistent":
        for t in range(T):
            v = sum(x for c, x in active if t in c.periods)
            if abs(v - round(v)) > tol:
                return BranchDecision("period", (t,))
    return None


@dataclass
class FirstLevelRules:
    excluded: frozenset[int] = frozenset()
    forbidden_arcs: frozenset = frozenset()
    forbidden_clusters: tuple[frozenset[int], ...] = ()


class SecondLevelSolver:
    """Branch-and-price for one first-level pricing call."""

    def __init__(self, owner: "NestedBranchAndPrice", pi: Sequence[float], phi: float,
                 rules: FirstLevelRules, incumbent: float = 0.0, early_stop: bool = True) -> None:
        self.o = owner
        self.inst = owner.inst
        self.T = owner.inst.cycle_len
        self.policy = owner.cfg.policy
        self.pi = list(pi)
        self.const = self.inst.vehicle_cost - phi
        self.rules = rules
        self.incumbent = incumbent
        self.early_stop = early_stop
        self.plans: dict[tuple, PlanColumn] = {}
        self.routes: dict[tuple, RouteColumn] = {}
        self.found: dict[tuple, tuple[float, Pattern]] = {}
        self.nodes = 0
        self.complete = True
        N = self.inst.n_retailers
        self.domain = [i for i in range(N) if i not in rules.excluded]
        scale = (self.inst.vehicle_cost + self.inst.trans_cost * float(np.sum(self.inst.dist))
                 + (self.inst.hold_cost + self.inst.backorder_cost) * float(np.sum(owner.grid.hi)) * self.T
                 + sum(abs(x) for x in self.pi) + abs(phi) + 1.0)
        self.big_m = 1e3 * scale

    # master ------------------------------------------------------------
    def _lp(self, node: SecondNode):
        inst, T = self.inst, self.T
        dom = [i for i in self.domain if i not in node.forbidden_retailers]
        rows: list[tuple[str, float]] = []
        index: dict[tuple, int] = {}

        def row(key, sense, rhs):
            index[key] = len(rows)
            rows.append((sense, rhs))

        if self.policy == "consistent":
            row(("conv",), "=", 1.0)
        else:
            for t in range(T):
                row(("conv", t), "<=", 1.0)
        for i in dom:
            row(("theta", i), "=" if i in node.forced_retailers else "<=", 1.0)
        for i in dom:
            for t in range(T):
                row(("cov", i, t), ">=", 0.0)
        # routes may only visit retailers the pattern serves
        for i in dom:
            for t in range(T):
                row(("pass", i, t), "<=", 0.0)
        for t in range(T):
            row(("cap", t), "<=", inst.capacity)
        regen = [M for M in self.rules.forbidden_clusters if M <= set(dom)]
        for k, M in enumerate(regen):
            row(("regen", k), ">=", 1.0 - len(M))
        for a in sorted(node.forced_arcs):
            row(("farc", a), ">=", 1.0)
        for t in sorted(node.forced_periods):
            row(("fexec", t), ">=", 1.0)

        cols: list[tuple[str, object, float, dict[int, float]]] = []
        if self.policy == "consistent":
            cols.append(("route", RouteColumn((), frozenset(), 0.0), 0.0, {index[("conv",)]: 1.0}))
        allowed_nodes = {i + 1 for i in dom}
        for key in sorted(self.routes):
            c = self.routes[key]
            if not node.allows_route(c, self.policy) or not set(c.nodes) <= allowed_nodes:
                continue
            if self.rules.forbidden_arcs & set(c.arcs()):
                continue
            coef: dict[int, float] = {}
            if self.policy == "consistent":
                coef[index[("conv",)]] = 1.0
                obj = inst.trans_cost * c.length * len(c.periods) / T
            else:
                (t0,) = tuple(c.periods)
                coef[index[("conv", t0)]] = 1.0
                obj = inst.trans_cost * c.length / T
            for t in c.periods:
                for j in c.nodes:
                    coef[index[("cov", j - 1, t)]] = 1.0
                    coef[index[("pass", j - 1, t)]] = 1.0
            for a in c.arcs():
                key2 = ("farc", ((next(iter(c.periods)),) + a) if self.policy == "flexible" else a)
                if key2 in index:
                    coef[index[key2]] = 1.0
            for t in c.periods:
                if ("fexec", t) in index:
                    coef[index[("fexec", t)]] = 1.0
            cols.append(("route", c, obj, coef))
        for key in sorted(self.plans):
            p = self.plans[key]
            if p.retailer not in dom or not node.allows_plan(p, T):
                continue
            i = p.retailer
            coef = {index[("theta", i)]: 1.0}
            for t in p.visits:
                coef[index[("cov", i, t)]] = -1.0
            for t in range(T):
                coef[index[("pass", i, t)]] = -1.0
                if p.loads[t]:
                    coef[index[("cap", t)]] = p.loads[t]
            for k, M in enumerate(regen):
                coef[index[("regen", k)]] = -1.0 if i in M else 1.0
            cols.append(("plan", p, p.inventory + p.emergency - self.pi[i], coef))
        for key, r in index.items():
            sense = rows[r][0]
            if key[0] in ("farc", "fexec", "regen") or (key[0] == "theta" and sense == "="):
                cols.append(("art", key, self.big_m, {r: 1.0}))
        m, n = len(rows), len(cols)
        A = np.zeros((m, n))
        c = np.zeros(n)
        for j, (_, _, obj, coef) in enumerate(cols):
            c[j] = obj
            for r, a in coef.items():
                A[r, j] = a
        senses = [s for s, _ in rows]
        b = np.array([r for _, r in rows])
        sol = solve_dense(c, A, senses, b, np.zeros(n), np.full(n, np.inf))
        if not sol.optimal:
            raise NumericalError(f"second-level master returned {sol.status}")
        return sol, cols, index, dom, regen

    def _duals(self, sol, index, dom, regen, node: SecondNode):
        y = sol.duals
        N, T = self.inst.n_retailers, self.T
        cover = np.zeros((N, T))
        passing = np.zeros((N, T))
        for i in dom:
            for t in range(T):
                cover[i, t] = y[index[("cov", i, t)]]
                passing[i, t] = y[index[("pass", i, t)]]
        iota = [y[index[("conv",)]]] if self.policy == "consistent" else [y[index[("conv", t)]] for t in range(T)]
        arc_bonus = {a: y[index[("farc", a)]] for a in node.forced_arcs}
        period_bonus = None
        if self.policy == "consistent":
            period_bonus = [y[index[("fexec", t)]] if ("fexec", t) in index else 0.0 for t in range(T)]
        rd = RoutingDuals(cover + passing, iota, arc_bonus, period_bonus, frozenset(node.forbidden_periods))
        psi = [-y[index[("cap", t)]] for t in range(T)]
        rep = {}
        for i in dom:
            const = -sum(y[index[("regen", k)]] * (-1.0 if i in M else 1.0) for k, M in enumerate(regen))
            const += float(passing[i].sum())
            rep[i] = ReplenishmentDuals(psi, [cover[i, t] for t in range(T)], theta=-y[index[("theta", i)]],
                                        pi=self.pi[i], const=const,
                                        emergency=self.inst.emergency_cost / T)
        return rd, rep

    def _price(self, node: SecondNode, rd: RoutingDuals, rep: dict[int, ReplenishmentDuals], dom) -> int:
        o, cfg = self.o, self.o.cfg
        added = 0
        t0 = time.perf_counter()
        rules = ArcRules(frozenset(self.rules.forbidden_arcs) | frozenset(node.forbidden_arcs),
                         frozenset(i + 1 for i in dom))
        if self.policy == "consistent":
            new = generate_consistent_routes(rd, self.inst, rules, cap=cfg.column_cap, dominance=cfg.dominance)
        else:
            new = generate_flexible_routes(rd, self.inst, rules, cap=cfg.column_cap, dominance=cfg.dominance)
        for c in new:
            if c.key not in self.routes:
                self.routes[c.key] = c
                added += 1
                o.stats.routes += 1
        t1 = time.perf_counter()
        o.stats.route_time += t1 - t0
        for i in dom:
            pr = o.pricers[i].price(rep[i], node.restrictions(i), dominance=cfg.dominance)
            if pr is None or pr.reduced_cost >= -cfg.tol:
                continue
            p = make_plan(self.inst, o.grid, o.cache, i, pr.levels)
            if p.key not in self.plans:
                self.plans[p.key] = p
                added += 1
                o.stats.replnsh += 1
        o.stats.replnsh_time += time.perf_counter() - t1
        return added

    def _evaluate(self, node: SecondNode, deadline: float):
        while True:
            sol, cols, index, dom, regen = self._lp(node)
            if time.monotonic() > deadline:
                self.complete = False
                return sol, cols
            rd, rep = self._duals(sol, index, dom, regen, node)
            if self._price(node, rd, rep, dom) == 0:
                return sol, cols

    def _pattern(self, sol, cols) -> Pattern | None:
        plans, routes = [], []
        for (kind, obj, _, _), v in zip(cols, sol.x):
            if v < 0.5:
                continue
            if kind == "plan":
                plans.append(obj)
            elif kind == "route" and obj.nodes:
                for t in sorted(obj.periods):
                    routes.append((t, obj.nodes))
        if not plans:
            return None
        pat = assemble_pattern(self.inst, plans, routes)
        issues = pattern_issues(pat, self.inst, self.o.grid)
        assert not issues, issues
        return pat

    def solve(self, root: SecondNode | None = None) -> tuple[list[Pattern], bool]:
        """Patterns beating the starting incumbent, best first, and whether the search was exhaustive."""
        cfg = self.o.cfg
        deadline = min(time.monotonic() + cfg.pp_time_limit, self.o.deadline)
        heap: list = [(-math.inf, 0, root or SecondNode())]
        counter = itertools.count(1)
        tol = cfg.tol
        while heap:
            bound, _, node = heapq.heappop(heap)
            if bound >= self.incumbent - tol:
                continue
            if time.monotonic() > deadline:
                self.complete = False
                break
            if self.early_stop and self.found and self.nodes >= cfg.early_stop_nodes:
                self.complete = False
                break
            self.nodes += 1
            self.o.stats.second_level_nodes += 1
            sol, cols = self._evaluate(node, deadline)
            value = sol.objective + self.const
            if value >= self.incumbent - tol:
                continue
            if any(kind == "art" and v > INTEGRALITY_TOL for (kind, *_), v in zip(cols, sol.x)):
                continue
            plans = [(obj, v) for (kind, obj, _, _), v in zip(cols, sol.x) if kind == "plan"]
            rts = [(obj, v) for (kind, obj, _, _), v in zip(cols, sol.x) if kind == "route"]
            d = second_level_branch([p for p, _ in plans], [v for _, v in plans], [r for r, _ in rts],
                                    [v for _, v in rts], self.policy, self.T)
            if d is None:
                pat = self._pattern(sol, cols)
                if pat is None:
                    continue
                rc = pat.cost - sum(self.pi[i] for i in pat.cluster) + (self.const - self.inst.vehicle_cost)
                self.incumbent = min(self.incumbent, rc)
                self.found[pat.key] = (rc, pat)
                continue
            for take in (True, False):
                heapq.heappush(heap, (value, next(counter), node.child(d, take)))
        pats = sorted(self.found.values(), key=lambda x: (x[0], repr(x[1].key)))
        return [p for _, p in pats], self.complete


# ---------------------------------------------------------------------------
# initial columns


def savings_routes(inst: Instance, demand: Sequence[float], members: Sequence[int]) -> list[list[int]]:
    """Clarke-Wright savings over the given retailers (0-based), respecting Q and the length limit."""
    D = inst.dist
    routes = {i: [i] for i in members}
    where = {i: i for i in members}
    pairs = []
    for a, b in itertools.combinations(sorted(members), 2):
        s = D[0][a + 1] + D[b + 1][0] - D[a + 1][b + 1]
        pairs.append((-s, a, b))
    pairs.sort()
    for _, a, b in pairs:
        ra, rb = where[a], where[b]
        if ra == rb:
            continue
        A, B = routes[ra], routes[rb]
        cand = None
        for X, Y in ((A, B), (B, A)):
            for x in (X, X[::-1]):
                for y in (Y, Y[::-1]):
                    if {x[-1], y[0]} == {a, b}:
                        cand = x + y
                        break
                if cand:
                    break
            if cand:
                break
        if cand is None:
            continue
        if sum(demand[i] for i in cand) > inst.capacity + 1e-9:
            continue
        if route_length([i + 1 for i in cand], D) > inst.max_tour_len + 1e-9:
            continue
        del routes[rb]
        routes[ra] = cand
        for i in cand:
            where[i] = ra
    return [routes[k] for k in sorted(routes)]


def initial_columns(inst: Instance, policy: str, grid: BoundsGrid, cache: InventoryCostCache,
                    model: StationaryRetailerModel | None = None) -> list[Pattern]:
    """Every-period visits with a uniform level, clustered by a savings heuristic.

    Retailers that cannot be served alone (robust load above Q or the
    out-and-back tour too long) get no initial pattern.
    """
    N, T = inst.n_retailers, inst.cycle_len
    if policy == "fixed-interval":
        model = model or StationaryRetailerModel(inst)
        demand = [model.load(i, 1) for i in range(N)]
    else:
        demand = [float(max(grid.U[i])) for i in range(N)]
    ok = [i for i in range(N) if demand[i] <= inst.capacity + 1e-9
          and route_length([i + 1], inst.dist) <= inst.max_tour_len + 1e-9]
    out = []
    for r in savings_routes(inst, demand, ok):
        nodes = tuple(i + 1 for i in r)
        routes = [(t, nodes) for t in range(T)]
        if policy == "fixed-interval":
            out.append(fixed_pattern(inst, grid, model, FixedIntervalPattern(
                nodes, 1, tuple(model.best(i, 1)[0] for i in r), route_length(nodes, inst.dist),
                fixed_interval_cost(model, nodes, 1))))
            continue
        plans = []
        for i in r:
            s = int(math.floor(min(grid.hi[i]) + 1e-9))
            plans.append(make_plan(inst, grid, cache, i, {t: s for t in range(T)}))
        out.append(assemble_pattern(inst, plans, routes))
    return out


def fixed_pattern(inst: Instance, grid: BoundsGrid, model: StationaryRetailerModel,
                  fp: FixedIntervalPattern) -> Pattern:
    T, k = inst.cycle_len, fp.kappa
    visits = tuple(range(0, T, k))
    plans = []
    for j, s in zip(fp.nodes, fp.levels):
        i = j - 1
        inv = model.best(i, k)[1] / k
        loads = tuple(model.load(i, k) if t in visits else 0.0 for t in range(T))
        plans.append(PlanColumn(i, visits, tuple(s for _ in visits), inv, plan_emergency(inst, grid, i), loads))
    routes = [(t, fp.nodes) for t in visits]
    return assemble_pattern(inst, plans, routes, kappa=k)


def apply_emergency_extension(patterns: Sequence[Pattern], inst: Instance) -> tuple[float, float]:
    """Emergency term of a solution: (per-pattern part, solution constant)."""
    return sum(p.emergency for p in patterns), emergency_constant(inst)


# ---------------------------------------------------------------------------
# first level


@dataclass(frozen=True)
class FirstNode:
    fixed: tuple[Pattern, ...] = ()
    forbidden_clusters: frozenset = frozenset()
    forbidden_arcs: frozenset = frozenset()
    forced_arcs: frozenset = frozenset()

    @property
    def fixed_retailers(self) -> frozenset[int]:
        return frozenset(i for p in self.fixed for i in p.cluster)

    def pricing_arcs(self, n_nodes: int) -> frozenset:
        out = set(self.forbidden_arcs)
        for a, b in self.forced_arcs:
            for k in range(n_nodes):
                if a != 0 and k != b:
                    out.add((a, k))
                if b != 0 and k != a:
                    out.add((k, b))
        return frozenset(out)

    def allows(self, p: Pattern) -> bool:
        if set(p.cluster) & self.fixed_retailers or frozenset(p.cluster) in self.forbidden_clusters:
            return False
        arcs = p.arcs()
        if arcs & self.forbidden_arcs:
            return False
        for a, b in self.forced_arcs:
            for seq in p.route_sequences():
                for x, y in zip(seq[:-1], seq[1:]):
                    if (x == a and a != 0 and y != b) or (y == b and b != 0 and x != a):
                        return False
        return True


class NestedBranchAndPrice:
    def __init__(self, inst: Instance, cfg: SolverConfig | None = None,
                 cache: InventoryCostCache | None = None) -> None:
        inst.validate()
        self.inst = inst
        self.cfg = cfg or SolverConfig()
        self.grid = BoundsGrid(inst)
        self.cache = cache or InventoryCostCache(inst)
        self.pricers = [RetailerPricer(inst, self.grid, self.cache, i) for i in range(inst.n_retailers)]
        self.model = StationaryRetailerModel(inst) if self.cfg.policy == "fixed-interval" else None
        self.stats = SolveStats()
        self.rng = random.Random(self.cfg.seed) if self.cfg.random_arc else None
        self.pool: dict[tuple, Pattern] = {}
        self.deadline = math.inf
        self.timed_out = False

    # pricing -----------------------------------------------------------
    def _price(self, node: FirstNode, pi: Sequence[float], phi: float) -> tuple[list[Pattern], bool]:
        inst = self.inst
        excluded = node.fixed_retailers
        arcs = node.pricing_arcs(inst.n_retailers + 1)
        t0 = time.perf_counter()
        try:
            if self.cfg.policy == "fixed-interval":
                allowed = frozenset(i + 1 for i in range(inst.n_retailers) if i not in excluded)
                banned = node.forbidden_clusters
                found = generate_fixed_interval_pattern(
                    pi, inst, self.model, const=-phi, rules=ArcRules(arcs, allowed),
                    cap=None if banned else self.cfg.column_cap,
                    dominance=self.cfg.dominance and not banned)
                found = [f for f in found if f.cluster not in banned][: self.cfg.column_cap]
                return [fixed_pattern(inst, self.grid, self.model, f) for f in found], True
            rules = FirstLevelRules(excluded, arcs, tuple(sorted(node.forbidden_clusters, key=sorted)))
            sl = SecondLevelSolver(self, pi, phi, rules)
            return sl.solve()
        finally:
            self.stats.pp_time += time.perf_counter() - t0

    def cluster_cost(self, node: FirstNode, cluster: frozenset[int]) -> Pattern | None:
        """Cheapest pattern serving exactly ``cluster`` under the node's arc rules."""
        inst = self.inst
        arcs = node.pricing_arcs(inst.n_retailers + 1)
        if self.cfg.policy == "fixed-interval":
            best = None
            for perm in itertools.permutations(sorted(j + 1 for j in cluster)):
                seq = (0,) + perm + (0,)
                if set(zip(seq[:-1], seq[1:])) & arcs or route_length(perm, inst.dist) > inst.max_tour_len + 1e-9:
                    continue
                for k in divisors(inst.cycle_len):
                    if sum(self.model.load(j - 1, k) for j in perm) > inst.capacity + 1e-9:
                        continue
                    fp = FixedIntervalPattern(perm, k, tuple(self.model.best(j - 1, k)[0] for j in perm),
                                              route_length(perm, inst.dist), fixed_interval_cost(self.model, perm, k))
                    if best is None or fp.cost < best.cost - 1e-12:
                        best = fp
            return None if best is None else fixed_pattern(inst, self.grid, self.model, best)
        excluded = frozenset(i for i in range(inst.n_retailers) if i not in cluster)
        sl = SecondLevelSolver(self, [0.0] * inst.n_retailers, 0.0, FirstLevelRules(excluded, arcs, ()),
                               incumbent=math.inf, early_stop=False)
        found, _ = sl.solve(SecondNode(forced_retailers=frozenset(cluster)))
        found = [p for p in found if frozenset(p.cluster) == cluster]
        return min(found, key=lambda p: p.cost) if found else None

    # master ------------------------------------------------------------
    def _master(self, node: FirstNode):
        inst = self.inst
        remaining = [i for i in range(inst.n_retailers) if i not in node.fixed_retailers]
        fleet = inst.n_vehicles - len(node.fixed)
        pats = [p for p in self.pool.values() if node.allows(p)]
        idx = {i: r for r, i in enumerate(remaining)}
        m = len(remaining) + 1
        n = len(pats) + len(remaining)
        A = np.zeros((m, n))
        c = np.zeros(n)
        for j, p in enumerate(pats):
            c[j] = p.cost
            for i in p.cluster:
                A[idx[i], j] = 1.0
            A[m - 1, j] = 1.0
        big = 1e3 * (1.0 + sum(p.cost for p in pats) + inst.vehicle_cost * inst.n_retailers)
        for r in range(len(remaining)):
            A[r, len(pats) + r] = 1.0
            c[len(pats) + r] = big
        senses = ["="] * len(remaining) + ["<="]
        b = np.array([1.0] * len(remaining) + [float(fleet)])
        sol = solve_dense(c, A, senses, b, np.zeros(n), np.full(n, np.inf))
        if not sol.optimal:
            raise NumericalError(f"first-level master returned {sol.status}")
        pi = [0.0] * inst.n_retailers
        for i, r in idx.items():
            pi[i] = sol.duals[r]
        return sol, pats, pi, sol.duals[m - 1], len(pats)

    def _evaluate(self, node: FirstNode):
        """Column generation at one node: (bound, patterns, q) or None when infeasible."""
        inst = self.inst
        fixed_cost = sum(p.cost for p in node.fixed)
        if len(node.fixed) > inst.n_vehicles:
            return None
        if not [i for i in range(inst.n_retailers) if i not in node.fixed_retailers]:
            return fixed_cost, [], [], True
        complete = True
        while True:
            sol, pats, pi, phi, npat = self._master(node)
            if time.monotonic() > self.deadline:
                self.timed_out = True
                complete = False
                break
            new, exhaustive = self._price(node, pi, phi)
            complete = exhaustive
            added = 0
            for p in new:
                if p.key not in self.pool and node.allows(p):
                    self.pool[p.key] = p
                    added += 1
            self.stats.columns = len(self.pool)
            if added == 0:
                break
        if np.any(sol.x[npat:] > INTEGRALITY_TOL):
            return None
        return sol.objective + fixed_cost, pats, list(sol.x[:npat]), complete

    def _children(self, node: FirstNode, d: BranchDecision) -> list[FirstNode]:
        if d.kind == "arc":
            return [replace(node, forced_arcs=node.forced_arcs | {d.item}),
                    replace(node, forbidden_arcs=node.forbidden_arcs | {d.item})]
        M = frozenset(d.item)
        out = []
        best = self.cluster_cost(node, M)
        if best is not None:
            out.append(replace(node, fixed=node.fixed + (best,)))
        out.append(replace(node, forbidden_clusters=node.forbidden_clusters | {M}))
        return out

    def solve(self) -> Solution:
        inst, cfg = self.inst, self.cfg
        start = time.monotonic()
        self.deadline = start + cfg.time_limit
        for p in initial_columns(inst, cfg.policy, self.grid, self.cache, self.model):
            self.pool[p.key] = p
        self.stats.columns = len(self.pool)
        best: list[Pattern] | None = None
        ub = math.inf
        init = list(self.pool.values())
        covered = sorted(i for p in init for i in p.cluster)
        if covered == list(range(inst.n_retailers)) and len(init) <= inst.n_vehicles:
            best, ub = init, sum(p.cost for p in init)
        heap = [(-math.inf, 0, FirstNode())]
        counter = itertools.count(1)
        lb_open = -math.inf
        proven = True
        while heap:
            bound, _, node = heapq.heappop(heap)
            if bound >= ub - 1e-9 * max(1.0, abs(ub)):
                continue
            if time.monotonic() > self.deadline:
                self.timed_out = True
                heapq.heappush(heap, (bound, next(counter), node))
                break
            self.stats.first_level_nodes += 1
            res = self._evaluate(node)
            if res is None:
                continue
            value, pats, q, complete = res
            proven &= complete
            self.stats.unproven_nodes += not complete
            if value >= ub - 1e-9 * max(1.0, abs(ub)):
                continue
            if not pats:
                best, ub = list(node.fixed), value
                continue
            d = first_level_branch(pats, q, cfg.policy, self.rng, node.forced_arcs | node.forbidden_arcs)
            if d is None:
                sel = list(node.fixed) + cheapest_per_cluster(pats, q)
                cost = sum(p.cost for p in sel)
                if cost < ub - 1e-12:
                    best, ub = sel, cost
                continue
            for ch in self._children(node, d):
                heapq.heappush(heap, (value, next(counter), ch))
            if self.timed_out:
                break
        if heap and self.timed_out:
            lb_open = min(b for b, _, _ in heap)
        const = emergency_constant(inst)
        if best is None:
            status = "time-limit" if self.timed_out else "infeasible"
            return Solution(cfg.policy, status, [], math.inf, -math.inf, const, self.stats, cfg.record_times)
        best = sorted(best, key=lambda p: p.cluster)
        obj = sum(p.cost for p in best) + const
        if self.timed_out:
            lb = min(lb_open + const, obj) if math.isfinite(lb_open) else -math.inf
            status = "time-limit"
        else:
            lb, status = obj, ("optimal" if proven else "time-limit")
            if not proven:
                lb = -math.inf
        return Solution(cfg.policy, status, best, obj, lb, const, self.stats, cfg.record_times)


def solve(inst: Instance, policy: str = "flexible", config: SolverConfig | None = None,
          cache: InventoryCostCache | None = None) -> Solution:
    cfg = replace(config, policy=policy) if config is not None else SolverConfig(policy=policy)
    return NestedBranchAndPrice(inst, cfg, cache).solve()
