"""Instance data, cyclic calendar arithmetic and structural validators.

Period convention: every public object in this package stores periods
0-based (``0 .. T-1``).  JSON files and CLI output use 1-based periods;
the conversion happens only in the ``to_json``/``from_json`` helpers and
in :func:`external_periods`.

Node convention: node 0 is the warehouse, retailer ``i`` (0-based) is
node ``i + 1``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from itertools import product
from pathlib import Path
from typing import Iterable, Sequence

Arc = tuple[int, int]


@dataclass(frozen=True)
class AmbiguityCell:
    """Moment information for one retailer-period demand."""

    lo: float
    hi: float
    mean: float
    mad: float

    def problems(self) -> list[str]:
        out = []
        if not (0.0 <= self.lo < self.mean < self.hi):
            out.append(f"support/mean must satisfy 0 <= lo < mean < hi, got {self}")
        if self.mad < 0.0:
            out.append(f"mad must be non-negative, got {self.mad}")
        return out

    def to_json(self) -> dict:
        return {"lo": self.lo, "hi": self.hi, "mean": self.mean, "mad": self.mad}

    @staticmethod
    def from_json(d: dict) -> "AmbiguityCell":
        return AmbiguityCell(float(d["lo"]), float(d["hi"]), float(d["mean"]), float(d["mad"]))


@dataclass
class Instance:
    n_retailers: int
    cycle_len: int
    n_vehicles: int
    capacity: float
    max_tour_len: float
    dist: list[list[float]]
    hold_cost: float
    backorder_cost: float
    trans_cost: float
    vehicle_cost: float
    ambiguity: list[list[AmbiguityCell]]
    eps_capacity: float
    eps_overshoot: float
    emergency_cost: float = 0.0

    @property
    def N(self) -> int:
        return self.n_retailers

    @property
    def T(self) -> int:
        return self.cycle_len

    def cell(self, i: int, t: int) -> AmbiguityCell:
        return self.ambiguity[i][t % self.cycle_len]

    def problems(self) -> list[str]:
        out: list[str] = []
        n, T = self.n_retailers, self.cycle_len
        if T < 1:
            out.append("cycle length must be >= 1")
        if n < 0:
            out.append("retailer count must be >= 0")
        if len(self.dist) != n + 1 or any(len(row) != n + 1 for row in self.dist):
            out.append("dist must be (N+1)x(N+1)")
        else:
            for a in range(n + 1):
                if self.dist[a][a] != 0:
                    out.append(f"dist[{a}][{a}] must be 0")
                for b in range(n + 1):
                    if not self.dist[a][b] >= 0:
                        out.append(f"dist[{a}][{b}] must be >= 0")
        if not 0.0 < self.eps_capacity < 1.0:
            out.append("eps1 must lie in (0,1)")
        if not 0.0 <= self.eps_overshoot < 1.0:
            out.append("eps2 must lie in [0,1)")
        for name in ("hold_cost", "backorder_cost", "trans_cost", "vehicle_cost", "capacity", "emergency_cost"):
            if getattr(self, name) < 0:
                out.append(f"{name} must be >= 0")
        if self.n_vehicles < 1:
            out.append("fleet size must be >= 1")
        if len(self.ambiguity) != n or any(len(row) != T for row in self.ambiguity):
            out.append("ambiguity must be an N x T grid")
        else:
            for i, row in enumerate(self.ambiguity):
                for t, c in enumerate(row):
                    out.extend(f"cell ({i},{t}): {p}" for p in c.problems())
        return out

    def validate(self) -> None:
        issues = self.problems()
        if issues:
            raise ValueError("invalid instance: " + "; ".join(issues))

    def tour_length(self, nodes: Sequence[int]) -> float:
        """Length of the closed tour 0 -> nodes... -> 0."""
        if not nodes:
            return 0.0
        seq = [0, *nodes, 0]
        return float(sum(self.dist[a][b] for a, b in zip(seq, seq[1:])))

    def to_json(self) -> dict:
        d = {
            "n": self.n_retailers,
            "T": self.cycle_len,
            "V": self.n_vehicles,
            "Q": self.capacity,
            "maxTour": None if math.isinf(self.max_tour_len) else self.max_tour_len,
            "dist": self.dist,
            "h": self.hold_cost,
            "b": self.backorder_cost,
            "rho": self.trans_cost,
            "p": self.vehicle_cost,
            "eps1": self.eps_capacity,
            "eps2": self.eps_overshoot,
            "ambiguity": [[c.to_json() for c in row] for row in self.ambiguity],
        }
        if self.emergency_cost:
            d["e"] = self.emergency_cost
        return d

    @staticmethod
    def from_json(d: dict) -> "Instance":
        max_tour = d.get("maxTour")
        inst = Instance(
            n_retailers=int(d["n"]),
            cycle_len=int(d["T"]),
            n_vehicles=int(d["V"]),
            capacity=float(d["Q"]),
            max_tour_len=math.inf if max_tour is None else float(max_tour),
            dist=[[float(x) for x in row] for row in d["dist"]],
            hold_cost=float(d["h"]),
            backorder_cost=float(d["b"]),
            trans_cost=float(d["rho"]),
            vehicle_cost=float(d["p"]),
            ambiguity=[[AmbiguityCell.from_json(c) for c in row] for row in d["ambiguity"]],
            eps_capacity=float(d["eps1"]),
            eps_overshoot=float(d["eps2"]),
            emergency_cost=float(d.get("e", 0.0) or 0.0),
        )
        inst.validate()
        return inst

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n")

    @staticmethod
    def load(path: str | Path) -> "Instance":
        return Instance.from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class CyclicInterval:
    """The closed cyclic interval [start, end] of a T-period cycle (0-based)."""

    start: int
    end: int
    cycle_len: int

    def __post_init__(self) -> None:
        T = self.cycle_len
        if T < 1 or not (0 <= self.start < T and 0 <= self.end < T):
            raise ValueError(f"period outside cycle: {self}")

    def __len__(self) -> int:
        d = (self.end - self.start) % self.cycle_len
        return d if d else self.cycle_len

    @property
    def is_self(self) -> bool:
        return self.start == self.end

    def periods(self) -> tuple[int, ...]:
        """Ordered periods start..end; a self-interval spans the full cycle back to start."""
        T = self.cycle_len
        return tuple((self.start + k) % T for k in range(len(self) + 1))

    def demand_periods(self) -> tuple[int, ...]:
        """Periods start..end-1 whose demand is served by the delivery at start."""
        return self.periods()[:-1]

    def steps_between(self, t: int, t2: int) -> int:
        seq = self.periods()
        if t not in seq or t2 not in seq:
            raise ValueError(f"period not in interval {self}")
        a = seq.index(t)
        b = seq.index(t2)
        if b < a:
            # only the repeated endpoint of a self-interval can come back around
            b = len(seq) - 1 if t2 == seq[-1] else b
        if b < a:
            raise ValueError(f"{t2} precedes {t} in {self}")
        return b - a

    def succ(self, t: int) -> int:
        return (t + 1) % self.cycle_len

    def pred(self, t: int) -> int:
        return (t - 1) % self.cycle_len


def interval_periods(iv: CyclicInterval) -> tuple[int, ...]:
    return iv.periods()


def steps_between(iv: CyclicInterval, t: int, t2: int) -> int:
    return iv.steps_between(t, t2)


def external_periods(periods: Iterable[int]) -> list[int]:
    return [p + 1 for p in periods]


def plan_intervals(visits: Sequence[int], T: int) -> list[CyclicInterval]:
    """Consecutive cyclic intervals of a sorted visit set."""
    vs = sorted(visits)
    return [CyclicInterval(a, vs[(k + 1) % len(vs)], T) for k, a in enumerate(vs)]


@dataclass(frozen=True)
class ReplenishmentPlan:
    """Canonical plan: sorted visit periods and the order-up-to level at each."""

    visits: tuple[int, ...]
    levels: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.visits) != len(self.levels):
            raise ValueError("one level per visit")

    @staticmethod
    def make(levels: dict[int, int]) -> "ReplenishmentPlan":
        vs = tuple(sorted(levels))
        return ReplenishmentPlan(vs, tuple(int(levels[t]) for t in vs))

    def level(self, t: int) -> int:
        return self.levels[self.visits.index(t)]

    def intervals(self, T: int) -> list[CyclicInterval]:
        return plan_intervals(self.visits, T)

    def level_map(self) -> dict[int, int]:
        return dict(zip(self.visits, self.levels))


def validate_plan(visits: Sequence[int], T: int) -> list[str]:
    """Report on a visit set; every nonempty set of distinct periods is a plan."""
    out = []
    if len(visits) == 0:
        out.append("coverage: plan has no visit")
    if len(set(visits)) != len(visits):
        out.append("per-period limit: a period is visited twice")
    if any(not 0 <= t < T for t in visits):
        out.append("visit period outside the cycle")
    return out


def plan_from_arcs(y: Iterable[Arc], T: int) -> tuple[list[str], tuple[int, ...]]:
    """Check an arc-form plan (set of (t1,t2) with y=1) and return its visit set."""
    arcs = sorted(set(y))
    out: list[str] = []
    if not arcs:
        return ["coverage: no interval selected"], ()
    outdeg = [0] * T
    indeg = [0] * T
    for a, b in arcs:
        outdeg[a] += 1
        indeg[b] += 1
    if any(d > 1 for d in outdeg):
        out.append("per-period limit: more than one interval leaves a period")
    if outdeg != indeg:
        out.append("flow conservation violated")
    wraps = sum(1 for a, b in arcs if b <= a)
    if wraps != 1:
        out.append("cycle restriction: plan must wrap the cycle exactly once")
    return out, tuple(sorted({a for a, _ in arcs}))


def enumerate_arc_plans(T: int) -> list[tuple[int, ...]]:
    """Visit sets of all arc-form plans that pass :func:`plan_from_arcs` (small T only)."""
    all_arcs = [(a, b) for a in range(T) for b in range(T)]
    found = set()
    for bits in product((0, 1), repeat=len(all_arcs)):
        y = [arc for arc, on in zip(all_arcs, bits) if on]
        issues, vs = plan_from_arcs(y, T)
        if not issues:
            found.add(vs)
    return sorted(found)


def validate_routing(routes: Sequence[Sequence[Iterable[Arc]]], inst: Instance) -> list[str]:
    """Check per-period, per-vehicle arc sets against the routing feasible set."""
    out: list[str] = []
    n = inst.n_retailers
    for t, tours in enumerate(routes):
        seen: dict[int, int] = {}
        for v, arcset in enumerate(tours):
            arcs = list(arcset)
            tag = f"period {t} vehicle {v}"
            if any(not (0 <= a <= n and 0 <= b <= n) for a, b in arcs):
                out.append(f"{tag}: arc references unknown node")
                continue
            if not arcs or set(arcs) == {(0, 0)}:
                continue
            if (0, 0) in arcs:
                out.append(f"{tag}: empty-tour self-loop mixed with other arcs")
            succ: dict[int, list[int]] = {}
            pred: dict[int, list[int]] = {}
            for a, b in arcs:
                if a == b:
                    out.append(f"{tag}: self-loop at node {a}")
                succ.setdefault(a, []).append(b)
                pred.setdefault(b, []).append(a)
            if len(succ.get(0, [])) != 1 or len(pred.get(0, [])) != 1:
                out.append(f"{tag}: warehouse must be left and re-entered exactly once")
            nodes = (set(succ) | set(pred)) - {0}
            for k in nodes:
                if len(succ.get(k, [])) != 1 or len(pred.get(k, [])) != 1:
                    out.append(f"{tag}: flow conservation violated at node {k}")
                if k in seen:
                    out.append(f"{tag}: retailer {k - 1} already visited by vehicle {seen[k]}")
                seen[k] = v
            # connectivity from the warehouse
            reach, stack = {0}, [0]
            while stack:
                a = stack.pop()
                for b in succ.get(a, []):
                    if b not in reach:
                        reach.add(b)
                        stack.append(b)
            if nodes - reach:
                out.append(f"{tag}: subtour not connected to the warehouse")
            length = sum(inst.dist[a][b] for a, b in arcs)
            if length > inst.max_tour_len + 1e-9:
                out.append(f"{tag}: tour length {length:.6g} exceeds limit")
    return out


def tour_arcs(nodes: Sequence[int]) -> list[Arc]:
    """Arc set of the closed tour through ``nodes`` (node ids); empty tour -> self-loop."""
    if not nodes:
        return [(0, 0)]
    seq = [0, *nodes, 0]
    return list(zip(seq, seq[1:]))

