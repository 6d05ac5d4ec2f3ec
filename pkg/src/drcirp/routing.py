"""Routing pricing: elementary shortest paths with resource constraints.

Node 0 is the warehouse and retailer ``i`` is node ``i + 1``.  Arc costs are
dual-adjusted and may be negative; the distance resource is bounded by the
maximum tour length, and the fixed-interval policy adds a load resource.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .ambiguity import worst_case_var
from .core_model import Instance
from .inventory import StationaryCostCache, stationary_cell
from .replenishment import golden_section

DEFAULT_COLUMN_CAP = 50
ENUMERATION_CAP = 8
RC_TOL = 1e-7


class EnumerationCapExceeded(ValueError):
    pass


@dataclass
class SpatialLabel:
    route: tuple[int, ...]
    unreachable: int  # bit k set when retailer k is visited or out of reach
    load: float
    dist: float
    cost: float


@dataclass(frozen=True)
class RouteColumn:
    """A tour and the periods it runs in.

    ``nodes`` lists retailers in visiting order (warehouse implicit at both ends).
    For the flexible policy ``periods`` holds the single period of the column.
    """

    nodes: tuple[int, ...]
    periods: frozenset[int]
    length: float
    reduced_cost: float = 0.0

    def cost(self, rho: float) -> float:
        return rho * self.length

    def covers(self, i: int) -> bool:
        return (i + 1) in self.nodes

    @property
    def key(self) -> tuple:
        return tuple(self.nodes), tuple(sorted(self.periods))

    def arcs(self) -> list[tuple[int, int]]:
        if not self.nodes:
            return []
        seq = (0,) + self.nodes + (0,)
        return list(zip(seq[:-1], seq[1:]))


def route_length(nodes: Sequence[int], dist: Sequence[Sequence[float]]) -> float:
    if not nodes:
        return 0.0
    seq = (0,) + tuple(nodes) + (0,)
    return float(sum(dist[a][b] for a, b in zip(seq[:-1], seq[1:])))


@dataclass
class EspprcResult:
    routes: list[tuple[tuple[int, ...], float]]  # (nodes, reduced cost), most negative first
    labels_created: int = 0
    max_dist_seen: float = 0.0
    store: dict[int, list[SpatialLabel]] = field(default_factory=dict)


def espprc(arc_cost: np.ndarray, dist: Sequence[Sequence[float]], max_len: float,
           const: float = 0.0, node_load: Sequence[float] | None = None, load_cap: float = math.inf,
           allowed: Iterable[int] | None = None, dominance: bool = True, tol: float = RC_TOL,
           cap: int | None = DEFAULT_COLUMN_CAP, keep_all: bool = False) -> EspprcResult:
    """Label-setting search for negative reduced-cost elementary tours.

    ``arc_cost[a][b]`` over nodes 0..n (inf marks a forbidden arc).  Returns
    the best tour per visited set with reduced cost ``< -tol`` (all tours when
    ``keep_all``), sorted by reduced cost and truncated to ``cap``.
    """
    n = len(dist) - 1
    ok_nodes = set(range(1, n + 1)) if allowed is None else {j for j in allowed}
    load = [0.0] * (n + 1) if node_load is None else list(node_load)
    D = np.asarray(dist, float)
    C = np.asarray(arc_cost, float)

    def bit(j: int) -> int:
        return 1 << (j - 1)

    def reach_mask(at: int, d: float, q: float, visited: int) -> int:
        mask = visited
        for k in range(1, n + 1):
            if mask & bit(k):
                continue
            if (k not in ok_nodes or not math.isfinite(C[at, k])
                    or d + D[at, k] + D[k, 0] > max_len + 1e-9 or q + load[k] > load_cap + 1e-9):
                mask |= bit(k)
        return mask

    best: dict[int, tuple[tuple[int, ...], float]] = {}
    visited_of: dict[tuple[int, ...], int] = {}
    store: dict[int, list[SpatialLabel]] = {j: [] for j in range(1, n + 1)}
    start = SpatialLabel((0,), reach_mask(0, 0.0, 0.0, 0), 0.0, 0.0, 0.0)
    frontier = [start]
    created = 0
    max_seen = 0.0
    while frontier:
        nxt: list[SpatialLabel] = []
        for lab in frontier:
            i = lab.route[-1]
            for j in range(1, n + 1):
                if lab.unreachable & bit(j):
                    continue
                d = lab.dist + D[i, j]
                q = lab.load + load[j]
                c = lab.cost + C[i, j]
                vis = 0
                for v in lab.route[1:] + (j,):
                    vis |= bit(v)
                nl = SpatialLabel(lab.route + (j,), reach_mask(j, d, q, vis), q, d, c)
                created += 1
                max_seen = max(max_seen, d)
                if math.isfinite(C[j, 0]) and d + D[j, 0] <= max_len + 1e-9:
                    rc = c + C[j, 0] + const
                    prev = best.get(vis)
                    if prev is None or rc < prev[1] - 1e-12:
                        best[vis] = (nl.route[1:], rc)
                    visited_of[nl.route[1:]] = vis
                bucket = store[j]
                if dominance:
                    if any(o.unreachable & nl.unreachable == o.unreachable and o.dist <= nl.dist + 1e-12
                           and o.cost <= nl.cost + 1e-12 and o.load <= nl.load + 1e-12 for o in bucket):
                        continue
                    bucket[:] = [o for o in bucket if not (
                        nl.unreachable & o.unreachable == nl.unreachable and nl.dist <= o.dist + 1e-12
                        and nl.cost <= o.cost + 1e-12 and nl.load <= o.load + 1e-12)]
                bucket.append(nl)
                nxt.append(nl)
        if dominance:
            live = {id(o) for b in store.values() for o in b}
            nxt = [lab for lab in nxt if id(lab) in live]
        frontier = nxt
    routes = sorted(best.values(), key=lambda x: (x[1], x[0]))
    if not keep_all:
        routes = [r for r in routes if r[1] < -tol]
    if cap is not None:
        routes = routes[:cap]
    return EspprcResult(routes, created, max_seen, store)


def brute_force_tours(n: int, dist, max_len: float, allowed: Iterable[int] | None = None):
    """Every elementary tour within the length limit, as node tuples."""
    nodes = sorted(set(range(1, n + 1)) if allowed is None else set(allowed))
    for k in range(1, len(nodes) + 1):
        for combo in itertools.combinations(nodes, k):
            for perm in itertools.permutations(combo):
                if route_length(perm, dist) <= max_len + 1e-9:
                    yield perm


# ---------------------------------------------------------------------------
# reduced costs


def route_reduced_cost(route_cost: float, cover_duals: Sequence[float], iota: float, T: int,
                          period_bonus: Sequence[float] | None = None,
                          forbidden_periods: Iterable[int] = (), route_const: float = 0.0
                          ) -> tuple[float, frozenset[int]]:
    """Reduced cost of a consistent route and the periods it should run in.

    ``cover_duals[t]`` is the sum of coverage duals of the retailers on the
    route in period t.  A period is active when its term is strictly negative.
    """
    bonus = period_bonus or [0.0] * T
    banned = set(forbidden_periods)
    total = -iota + route_const
    active = []
    for t in range(T):
        if t in banned:
            continue
        term = route_cost / T - cover_duals[t] - bonus[t]
        if term < 0.0:
            total += term
            active.append(t)
    return total, frozenset(active)


@dataclass
class RoutingDuals:
    """Duals seen by routing pricing, in LP sign convention (reduced cost = c - y.A)."""

    cover: np.ndarray  # [i, t] >= 0
    iota: Sequence[float]  # one entry (consistent) or one per period (flexible)
    arc_bonus: dict = field(default_factory=dict)  # (a, b) or (t, a, b) -> dual of a forced-arc row
    period_bonus: Sequence[float] | None = None  # forced-execution rows, consistent only
    forbidden_periods: frozenset[int] = frozenset()


@dataclass
class ArcRules:
    forbidden: frozenset = frozenset()  # arcs (a, b); for flexible also (t, a, b)
    allowed_nodes: frozenset[int] | None = None

    def blocked(self, a: int, b: int, t: int | None = None) -> bool:
        if (a, b) in self.forbidden:
            return True
        return t is not None and (t, a, b) in self.forbidden


def _base_arc_matrix(inst: Instance, rules: ArcRules, t: int | None) -> np.ndarray:
    n = inst.n_retailers + 1
    M = np.zeros((n, n))
    for a in range(n):
        for b in range(n):
            if a == b or rules.blocked(a, b, t):
                M[a, b] = math.inf
    return M


def generate_flexible_routes(duals: RoutingDuals, inst: Instance, rules: ArcRules | None = None,
                             cap: int = DEFAULT_COLUMN_CAP, dominance: bool = True) -> list[RouteColumn]:
    """One ESPPRC per period with arc cost rho*c/T - delta[j, t] and constant -iota[t]."""
    rules = rules or ArcRules()
    T = inst.cycle_len
    D = np.asarray(inst.dist, float)
    out = []
    for t in range(T):
        M = _base_arc_matrix(inst, rules, t)
        cov = np.concatenate([[0.0], duals.cover[:, t]])
        M = M + inst.trans_cost * D / T - cov[None, :]
        for (key, val) in duals.arc_bonus.items():
            if len(key) == 3 and key[0] == t:
                M[key[1], key[2]] -= val
        res = espprc(M, inst.dist, inst.max_tour_len, const=-duals.iota[t],
                     allowed=rules.allowed_nodes, dominance=dominance, cap=cap)
        for nodes, rc in res.routes:
            out.append(RouteColumn(nodes, frozenset([t]), route_length(nodes, inst.dist), rc))
    out.sort(key=lambda c: (c.reduced_cost, c.key))
    return out[:cap]


def generate_consistent_routes(duals: RoutingDuals, inst: Instance, rules: ArcRules | None = None,
                               cap: int = DEFAULT_COLUMN_CAP, enum_cap: int = ENUMERATION_CAP,
                               dominance: bool = True) -> list[RouteColumn]:
    """Enumerate execution sets by popcount and solve one ESPPRC per set."""
    rules = rules or ArcRules()
    T = inst.cycle_len
    if T > enum_cap:
        raise EnumerationCapExceeded(f"T={T} exceeds the execution-set enumeration cap {enum_cap}")
    D = np.asarray(inst.dist, float)
    base = _base_arc_matrix(inst, rules, None)
    for (key, val) in duals.arc_bonus.items():
        if len(key) == 2:
            base[key[0], key[1]] -= val
    bonus = duals.period_bonus or [0.0] * T
    periods = [t for t in range(T) if t not in duals.forbidden_periods]
    seen: dict[tuple, RouteColumn] = {}
    for k in range(1, len(periods) + 1):
        for subset in itertools.combinations(periods, k):
            M = base.copy()
            const = -duals.iota[0] - sum(bonus[t] for t in subset)
            for t in subset:
                cov = np.concatenate([[0.0], duals.cover[:, t]])
                M = M + inst.trans_cost * D / T - cov[None, :]
            res = espprc(M, inst.dist, inst.max_tour_len, const=const,
                         allowed=rules.allowed_nodes, dominance=dominance, cap=cap)
            for nodes, _ in res.routes:
                col = consistent_column(nodes, duals, inst)
                if col is not None and col.reduced_cost < -RC_TOL:
                    seen.setdefault(col.key, col)
    out = sorted(seen.values(), key=lambda c: (c.reduced_cost, c.key))
    return out[:cap]


def consistent_column(nodes: Sequence[int], duals: RoutingDuals, inst: Instance) -> RouteColumn | None:
    """Column with the execution set implied by the final duals."""
    T = inst.cycle_len
    length = route_length(nodes, inst.dist)
    cov = [sum(duals.cover[j - 1, t] for j in nodes) for t in range(T)]
    arcs = list(zip((0,) + tuple(nodes), tuple(nodes) + (0,)))
    rconst = sum(duals.arc_bonus.get(a, 0.0) for a in arcs)
    rc, active = route_reduced_cost(inst.trans_cost * length, cov, duals.iota[0], T,
                                       duals.period_bonus, duals.forbidden_periods, -rconst)
    if not active:
        return None
    return RouteColumn(tuple(nodes), active, length, rc)


# ---------------------------------------------------------------------------
# fixed-interval patterns


def divisors(T: int) -> list[int]:
    return [k for k in range(1, T + 1) if T % k == 0]


@dataclass(frozen=True)
class FixedIntervalPattern:
    nodes: tuple[int, ...]
    kappa: int
    levels: tuple[int, ...]  # order-up-to level per node, same order as ``nodes``
    length: float
    cost: float  # per-period cost including the vehicle cost
    reduced_cost: float = 0.0

    @property
    def cluster(self) -> frozenset[int]:
        return frozenset(j - 1 for j in self.nodes)


class StationaryRetailerModel:
    """Stationary cells, robust loads and optimal levels for the fixed-interval policy."""

    def __init__(self, inst: Instance) -> None:
        self.inst = inst
        self.cells = [stationary_cell(row) for row in inst.ambiguity]
        self.U = [worst_case_var(c, inst.eps_capacity) for c in self.cells]
        self.cache = StationaryCostCache(inst.hold_cost, inst.backorder_cost)
        self._best: dict[tuple[int, int], tuple[int, float]] = {}

    def level_bound(self, i: int, kappa: int) -> int:
        return int(math.floor(kappa * self.cells[i].hi + 1e-9))

    def best(self, i: int, kappa: int) -> tuple[int, float]:
        key = (i, kappa)
        if key not in self._best:
            cell = self.cells[i]
            self._best[key] = golden_section(lambda s: self.cache.get(cell, kappa, s), 0,
                                             self.level_bound(i, kappa))
        return self._best[key]

    def load(self, i: int, kappa: int) -> float:
        return kappa * self.U[i]


def fixed_interval_cost(model: StationaryRetailerModel, nodes: Sequence[int], kappa: int) -> float:
    inst = model.inst
    inv = sum(model.best(j - 1, kappa)[1] for j in nodes)
    return inst.vehicle_cost + (inst.trans_cost * route_length(nodes, inst.dist) + inv) / kappa


def generate_fixed_interval_pattern(pi: Sequence[float], inst: Instance, model: StationaryRetailerModel,
                                    const: float = 0.0, rules: ArcRules | None = None,
                                    kappas: Iterable[int] | None = None, cap: int = DEFAULT_COLUMN_CAP,
                                    dominance: bool = True) -> list[FixedIntervalPattern]:
    """Single-layer pricing: for each kappa an ESPPRC with load kappa*U and node costs."""
    rules = rules or ArcRules()
    D = np.asarray(inst.dist, float)
    out: list[FixedIntervalPattern] = []
    for kappa in (kappas or divisors(inst.cycle_len)):
        w = np.zeros(inst.n_retailers + 1)
        for i in range(inst.n_retailers):
            w[i + 1] = model.best(i, kappa)[1] / kappa - pi[i]
        M = _base_arc_matrix(inst, rules, None) + inst.trans_cost * D / kappa + w[None, :]
        load = [0.0] + [model.load(i, kappa) for i in range(inst.n_retailers)]
        res = espprc(M, inst.dist, inst.max_tour_len, const=inst.vehicle_cost + const, node_load=load,
                     load_cap=inst.capacity, allowed=rules.allowed_nodes, dominance=dominance, cap=cap)
        for nodes, rc in res.routes:
            levels = tuple(model.best(j - 1, kappa)[0] for j in nodes)
            out.append(FixedIntervalPattern(nodes, kappa, levels, route_length(nodes, inst.dist),
                                            fixed_interval_cost(model, nodes, kappa), rc))
    out.sort(key=lambda p: (p.reduced_cost, p.nodes, p.kappa))
    return out[:cap]
