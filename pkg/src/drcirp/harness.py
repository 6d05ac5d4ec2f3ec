"""Synthetic instances, in-set demand samplers and out-of-sample simulation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .ambiguity import estimate_ambiguity
from .core_model import AmbiguityCell, Instance

CYCLE_TYPES = ("stationary", "cyclic")
EARTH_RADIUS_KM = 6371.0088
LAT_RANGE = (50.7, 53.4)
LON_RANGE = (3.5, 7.1)
OVERSHOOT_TOL = 1e-9


# ---------------------------------------------------------------------------
# generator


@dataclass(frozen=True)
class GeneratorConfig:
    n_retailers: int = 5
    cycle_len: int = 5
    cycle_type: str = "cyclic"
    mean_range: tuple[float, float] = (6.0, 14.0)
    mad_range: tuple[float, float] = (1.0, 3.0)
    n_samples: int = 100_000
    test_periods: int = 100
    seed: int = 0
    n_vehicles: int | None = None  # defaults to one vehicle per retailer
    capacity: float = 70.0
    max_tour_len: float = math.inf
    hold_cost: float = 1.0
    backorder_cost: float = 4.0
    trans_cost: float = 0.25
    vehicle_cost: float = 10.0
    eps_capacity: float = 0.3
    eps_overshoot: float = 0.1
    emergency_cost: float = 0.0

    def problems(self) -> list[str]:
        out = []
        if self.n_retailers < 1 or self.cycle_len < 1:
            out.append("need at least one retailer and one period")
        if self.cycle_type not in CYCLE_TYPES:
            out.append(f"cycle type must be one of {CYCLE_TYPES}")
        lo, hi = self.mean_range
        if not 0 < lo <= hi:
            out.append("mean range must be positive and ordered")
        lo, hi = self.mad_range
        if not 0 <= lo <= hi:
            out.append("mad range must be non-negative and ordered")
        if self.n_samples < 1 or self.test_periods < 1:
            out.append("sample count and test horizon must be positive")
        if not 0.0 < self.eps_capacity < 1.0:
            out.append("eps1 must lie in (0,1)")
        if not 0.0 <= self.eps_overshoot < 1.0:
            out.append("eps2 must lie in [0,1)")
        if self.emergency_cost < 0:
            out.append("emergency cost must be non-negative")
        return out


@dataclass
class GeneratedInstance:
    instance: Instance
    traces: np.ndarray  # (N, test_periods) integer demands
    coords: list[tuple[float, float]]  # (lat, lon), warehouse first
    truth_mean: np.ndarray  # (N, demand cycle length)
    truth_sigma: np.ndarray


def haversine_matrix(coords: Sequence[tuple[float, float]]) -> list[list[float]]:
    lat = np.radians([c[0] for c in coords])
    lon = np.radians([c[1] for c in coords])
    dlat = lat[:, None] - lat[None, :]
    dlon = lon[:, None] - lon[None, :]
    a = np.sin(dlat / 2) ** 2 + np.cos(lat)[:, None] * np.cos(lat)[None, :] * np.sin(dlon / 2) ** 2
    d = 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))
    np.fill_diagonal(d, 0.0)
    return d.tolist()


def round_half_up(x: np.ndarray) -> np.ndarray:
    return np.maximum(np.floor(np.asarray(x, float) + 0.5), 0.0).astype(np.int64)


def sample_mixture(rng: np.random.Generator, mu: float, sigma: float, size: int) -> np.ndarray:
    """Integer demands, each from a truncated normal or a uniform with equal odds."""
    use_normal = rng.random(size) < 0.5
    lo, hi = max(0.0, mu - 3 * sigma), mu + 3 * sigma
    k = int(use_normal.sum())
    normal = np.empty(k)
    filled = 0
    while filled < k:
        draw = rng.normal(mu, sigma, k - filled)
        draw = draw[(draw >= lo) & (draw <= hi)]
        normal[filled:filled + draw.size] = draw
        filled += draw.size
    uniform = rng.uniform(mu - 2 * sigma, mu + 2 * sigma, size - k)
    x = np.empty(size)
    x[use_normal] = normal
    x[~use_normal] = uniform
    return round_half_up(x)


def generate_instance(cfg: GeneratorConfig) -> GeneratedInstance:
    issues = cfg.problems()
    if issues:
        raise ValueError("invalid generator config: " + "; ".join(issues))
    rng = np.random.default_rng(cfg.seed)
    N, T = cfg.n_retailers, cfg.cycle_len
    lat = rng.uniform(*LAT_RANGE, N + 1)
    lon = rng.uniform(*LON_RANGE, N + 1)
    coords = [(float(a), float(b)) for a, b in zip(lat, lon)]
    demand_cycle = 1 if cfg.cycle_type == "stationary" else T
    mu = rng.uniform(*cfg.mean_range, (N, demand_cycle))
    sigma = rng.uniform(*cfg.mad_range, (N, demand_cycle))
    samples = [[sample_mixture(rng, mu[i, t], sigma[i, t], cfg.n_samples) for t in range(demand_cycle)]
               for i in range(N)]
    cells = estimate_ambiguity(samples)
    ambiguity = [[row[t % demand_cycle] for t in range(T)] for row in cells]
    H = cfg.test_periods
    traces = np.zeros((N, H), dtype=np.int64)
    for i in range(N):
        for t in range(demand_cycle):
            ks = np.arange(t, H, demand_cycle)
            traces[i, ks] = sample_mixture(rng, mu[i, t], sigma[i, t], ks.size)
    inst = Instance(
        n_retailers=N, cycle_len=T, n_vehicles=cfg.n_vehicles or N, capacity=cfg.capacity,
        max_tour_len=cfg.max_tour_len, dist=haversine_matrix(coords), hold_cost=cfg.hold_cost,
        backorder_cost=cfg.backorder_cost, trans_cost=cfg.trans_cost, vehicle_cost=cfg.vehicle_cost,
        ambiguity=ambiguity, eps_capacity=cfg.eps_capacity, eps_overshoot=cfg.eps_overshoot,
        emergency_cost=cfg.emergency_cost)
    inst.validate()
    return GeneratedInstance(inst, traces, coords, mu, sigma)


# ---------------------------------------------------------------------------
# in-set distributions


@dataclass(frozen=True)
class DiscreteDistribution:
    values: tuple[float, ...]
    probs: tuple[float, ...]

    @property
    def mean(self) -> float:
        return float(np.dot(self.values, self.probs))

    @property
    def mad(self) -> float:
        m = self.mean
        return float(np.dot(np.abs(np.subtract(self.values, m)), self.probs))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.choice(np.asarray(self.values), size=size, p=np.asarray(self.probs))


def in_set_distribution(cell: AmbiguityCell, rng: np.random.Generator, extreme: bool | None = None) -> DiscreteDistribution:
    """A random member of the cell's ambiguity set: a two-point law mixed with a Dirac at the mean.

    The two atoms straddle the mean, and the mixing weight keeps the mean
    absolute deviation within the cell's bound.  ``extreme`` puts the atoms
    on the support ends and uses the largest admissible weight.
    """
    lo, hi, mu = cell.lo, cell.hi, cell.mean
    if extreme is None:
        extreme = bool(rng.random() < 0.5)
    if extreme:
        a, b = lo, hi
    else:
        a = lo + (mu - lo) * rng.random()
        b = hi - (hi - mu) * rng.random()
    p_a = (b - mu) / (b - a)
    mad2 = 2 * (mu - a) * (b - mu) / (b - a)
    w = min(1.0, cell.mad / mad2) if mad2 > 0 else 0.0
    if not extreme:
        w *= rng.uniform(0.5, 1.0)
    atoms = [(a, w * p_a), (b, w * (1 - p_a)), (mu, 1 - w)]
    atoms = [(v, p) for v, p in atoms if p > 0]
    return DiscreteDistribution(tuple(v for v, _ in atoms), tuple(p for _, p in atoms))


def in_set_grid(inst: Instance, rng: np.random.Generator, extreme: bool | None = None) -> list[list[DiscreteDistribution]]:
    return [[in_set_distribution(c, rng, extreme) for c in row] for row in inst.ambiguity]


def sample_traces(dists: Sequence[Sequence[DiscreteDistribution]], periods: int,
                  rng: np.random.Generator) -> np.ndarray:
    """Demand traces whose period ``k`` follows the cell of cycle period ``k mod T``."""
    N, T = len(dists), len(dists[0])
    out = np.zeros((N, periods))
    for i in range(N):
        for t in range(T):
            ks = np.arange(t, periods, T)
            out[i, ks] = dists[i][t].sample(rng, ks.size)
    return out


# ---------------------------------------------------------------------------
# simulation


class TraceLengthMismatch(ValueError):
    pass


@dataclass
class SimulationReport:
    periods: int
    service_level: float
    vehicle_utilization: float
    overshoot_rate: float
    avg_overshoot: float
    emergency_rate: float
    avg_emergency: float
    costs: dict[str, float]
    visits: int = 0
    overshoot_events: int = 0
    tours: int = 0
    emergency_events: int = 0
    demand: float = 0.0
    met: float = 0.0
    # (cycle period, vehicle) -> [tours run, tours over capacity]
    tour_events: dict[tuple[int, int], list[int]] = field(default_factory=dict)

    def violation_frequency(self) -> dict[tuple[int, int], float]:
        return {k: v[1] / v[0] for k, v in self.tour_events.items() if v[0]}

    def to_json(self) -> dict:
        return {"periods": self.periods, "serviceLevel": self.service_level,
                "vehicleUtil": self.vehicle_utilization, "overshootRate": self.overshoot_rate,
                "avgOvershoot": self.avg_overshoot, "emergencyRate": self.emergency_rate,
                "avgEmergency": self.avg_emergency, "costs": self.costs, "visits": self.visits,
                "overshootEvents": self.overshoot_events, "tours": self.tours,
                "emergencyEvents": self.emergency_events, "demand": self.demand, "met": self.met,
                "tourEvents": [{"period": t + 1, "vehicle": v + 1, "tours": n, "overCapacity": k}
                               for (t, v), (n, k) in sorted(self.tour_events.items())]}


def simulate(solution, traces, inst: Instance) -> SimulationReport:
    """Replay the cyclic plan of ``solution`` against demand ``traces[i][k]``.

    Each retailer starts at its first visit holding exactly its order-up-to
    level; periods before that are warm-up and are not counted.  At later
    visits the delivery tops on-hand stock up to the level and nothing is
    delivered when stock already exceeds it (an overshoot).  Load above the
    vehicle capacity is shipped by emergency transport.
    """
    N, T = inst.n_retailers, inst.cycle_len
    try:
        D = np.asarray(traces, float)
    except ValueError as exc:
        raise TraceLengthMismatch("demand traces must all have the same length") from exc
    if D.ndim != 2 or D.shape[0] != N:
        raise TraceLengthMismatch(f"expected {N} equal-length demand traces, got shape {D.shape}")
    H = D.shape[1]
    if H < 1:
        raise TraceLengthMismatch("empty demand traces")
    levels: dict[int, dict[int, int]] = {}
    tours_at: dict[int, list[tuple[int, tuple[int, ...], float]]] = {t: [] for t in range(T)}
    for v, pat in enumerate(solution.patterns):
        for p in pat.plans:
            levels[p.retailer] = p.level_map()
        for t, nodes in pat.routes:
            tours_at[t].append((v, nodes, inst.trans_cost * inst.tour_length(nodes)))
    missing = [i + 1 for i in range(N) if i not in levels]
    if missing:
        raise ValueError(f"solution does not serve retailers {missing}")

    on_hand = np.zeros(N)
    started = np.zeros(N, bool)
    visits = overshoots = tours = em_events = 0
    over_sum = em_sum = load_frac = 0.0
    demand = met = hold = back = transport = 0.0
    tour_events: dict[tuple[int, int], list[int]] = {}
    for k in range(H):
        t = k % T
        delivered = np.zeros(N)
        warmup = set()
        for i in range(N):
            s = levels[i].get(t)
            if s is None:
                continue
            if not started[i]:
                on_hand[i], started[i] = s, True
                warmup.add(i)
                continue
            visits += 1
            if on_hand[i] > s + OVERSHOOT_TOL:
                overshoots += 1
                over_sum += on_hand[i] - s
            delivered[i] = max(0.0, s - on_hand[i])
            on_hand[i] += delivered[i]
        for v, nodes, cost in tours_at[t]:
            members = [j - 1 for j in nodes]
            if any(i in warmup for i in members):
                continue
            tours += 1
            transport += cost
            load = float(sum(delivered[i] for i in members))
            excess = max(0.0, load - inst.capacity)
            load_frac += min(load, inst.capacity) / inst.capacity if inst.capacity > 0 else 0.0
            ev = tour_events.setdefault((t, v), [0, 0])
            ev[0] += 1
            if excess > 1e-9:
                ev[1] += 1
                em_events += 1
                em_sum += excess
        for i in range(N):
            if not started[i]:
                continue
            d = float(D[i, k])
            demand += d
            met += min(d, max(on_hand[i], 0.0))
            on_hand[i] -= d
            hold += inst.hold_cost * max(on_hand[i], 0.0)
            back += inst.backorder_cost * max(-on_hand[i], 0.0)
    costs = {"vehicle": inst.vehicle_cost * len(solution.patterns), "transport": transport / H,
             "inventory": (hold + back) / H, "holding": hold / H, "backorder": back / H,
             "emergency": inst.emergency_cost * em_sum / H}
    costs["total"] = costs["vehicle"] + costs["transport"] + costs["inventory"] + costs["emergency"]
    return SimulationReport(
        periods=H,
        service_level=met / demand if demand > 0 else 1.0,
        vehicle_utilization=load_frac / tours if tours else 0.0,
        overshoot_rate=overshoots / visits if visits else 0.0,
        avg_overshoot=over_sum / overshoots if overshoots else 0.0,
        emergency_rate=em_events / tours if tours else 0.0,
        avg_emergency=em_sum / em_events if em_events else 0.0,
        costs=costs, visits=visits, overshoot_events=overshoots, tours=tours,
        emergency_events=em_events, demand=demand, met=met, tour_events=tour_events)


# ---------------------------------------------------------------------------
# bench rows

KPI_HEADERS = ("#Retailer", "Policy", "Time (s)", "T.O.%", "Cost", "#Cluster", "Avg I.", "S.L.",
               "Vehicle Util", "O.%", "Avg O.", "E.T.%", "Avg E.T.")


def average_interval(solution, T: int) -> float:
    plans = [p for pat in solution.patterns for p in pat.plans]
    return float(np.mean([T / len(p.visits) for p in plans])) if plans else 0.0


def kpi_row(n: int, T: int, policy: str, seconds: float, solution, report: SimulationReport) -> dict:
    st = solution.stats
    nodes = st.first_level_nodes
    return {"#Retailer": n, "Policy": policy, "Time (s)": seconds,
            "T.O.%": 100.0 * st.unproven_nodes / nodes if nodes else 0.0,
            "Cost": solution.objective, "#Cluster": len(solution.patterns),
            "Avg I.": average_interval(solution, T),
            "S.L.": 100.0 * report.service_level, "Vehicle Util": 100.0 * report.vehicle_utilization,
            "O.%": 100.0 * report.overshoot_rate, "Avg O.": report.avg_overshoot,
            "E.T.%": 100.0 * report.emergency_rate, "Avg E.T.": report.avg_emergency}
