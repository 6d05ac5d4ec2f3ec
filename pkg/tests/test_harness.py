import math

import numpy as np
import pytest

from drcirp.bnp import PlanColumn, Solution, assemble_pattern, solve
from drcirp.core_model import AmbiguityCell, Instance
from drcirp.harness import (
    KPI_HEADERS,
    GeneratorConfig,
    TraceLengthMismatch,
    average_interval,
    generate_instance,
    haversine_matrix,
    in_set_grid,
    kpi_row,
    round_half_up,
    sample_mixture,
    sample_traces,
    simulate,
)


def one_retailer(T, cell, capacity=100.0, emergency=0.0):
    return Instance(1, T, 1, capacity, math.inf, [[0.0, 1.0], [1.0, 0.0]], 1.0, 4.0, 1.0, 10.0,
                    [[cell] * T], 0.3, 0.1, emergency)


def plan_solution(inst, levels):
    visits = tuple(sorted(levels))
    p = PlanColumn(0, visits, tuple(levels[t] for t in visits), 0.0, 0.0, (0.0,) * inst.cycle_len)
    pat = assemble_pattern(inst, [p], [(t, (1,)) for t in visits])
    return Solution("flexible", "optimal", [pat], pat.cost, pat.cost)


def small_config(**kw):
    args = dict(n_retailers=3, cycle_len=3, n_samples=2000, test_periods=30, seed=11)
    args.update(kw)
    return GeneratorConfig(**args)


def test_generator_deterministic():
    a, b = generate_instance(small_config()), generate_instance(small_config())
    assert a.instance.to_json() == b.instance.to_json()
    assert np.array_equal(a.traces, b.traces)
    c = generate_instance(small_config(seed=12))
    assert c.instance.to_json() != a.instance.to_json()


def test_generator_degenerate_sigma():
    g = generate_instance(small_config(mad_range=(0.0, 0.0)))
    for i, row in enumerate(g.instance.ambiguity):
        for t, cell in enumerate(row):
            assert cell.mad == 0.0
            assert cell.mean == round_half_up(g.truth_mean[i, t])
    expected = round_half_up(g.truth_mean)[:, np.arange(30) % 3]
    assert np.array_equal(g.traces, expected)


def test_generator_cells_and_layout():
    g = generate_instance(small_config(cycle_type="stationary"))
    inst = g.instance
    assert inst.n_vehicles == 3 and g.traces.shape == (3, 30)
    for row in inst.ambiguity:
        assert row[0] == row[1] == row[2]
        for cell in row:
            assert cell.problems() == []
    for lat, lon in g.coords:
        assert 50.7 <= lat <= 53.4 and 3.5 <= lon <= 7.1
    assert g.truth_mean.shape == (3, 1)


def test_generator_rejects_bad_config():
    assert small_config(mean_range=(5.0, 1.0)).problems()
    with pytest.raises(ValueError):
        generate_instance(small_config(cycle_type="weekly"))


def test_mixture_samples_are_nonnegative_integers():
    x = sample_mixture(np.random.default_rng(0), 2.0, 3.0, 10_000)
    assert x.dtype.kind == "i" and x.min() >= 0
    assert abs(x.mean() - 2.0) < 1.0


def test_haversine():
    d = haversine_matrix([(51.0, 4.0), (52.0, 4.0), (51.0, 5.0)])
    assert d[0][1] == pytest.approx(111.195, abs=1e-2)
    assert d[0][2] == pytest.approx(d[2][0]) and d[1][1] == 0.0
    assert d[0][2] == pytest.approx(111.195 * math.cos(math.radians(51.0)), rel=1e-3)


def test_round_half_up():
    assert round_half_up(np.array([0.5, 1.5, 2.5, 2.49, -0.4, -3.0])).tolist() == [1, 2, 3, 2, 0, 0]


def test_simulate_deterministic_demand():
    inst = one_retailer(2, AmbiguityCell(9, 11, 10, 0))
    rep = simulate(plan_solution(inst, {0: 20}), np.full((1, 40), 10.0), inst)
    assert rep.service_level == 1.0 and rep.overshoot_events == 0 and rep.emergency_events == 0
    assert rep.costs["backorder"] == 0.0


def test_simulate_zero_demand_is_not_an_overshoot():
    inst = one_retailer(1, AmbiguityCell(0, 4, 2, 1))
    rep = simulate(plan_solution(inst, {0: 5}), np.zeros((1, 10)), inst)
    # stock equal to the level is not above it, so nothing overshoots
    assert rep.visits == 9 and rep.overshoot_events == 0


def test_simulate_overshoot_when_stock_above_level():
    inst = one_retailer(2, AmbiguityCell(0, 4, 2, 1))
    rep = simulate(plan_solution(inst, {0: 10, 1: 5}), np.zeros((1, 10)), inst)
    assert rep.visits == 9 and rep.overshoot_events == 5
    assert rep.overshoot_rate == pytest.approx(5 / 9) and rep.avg_overshoot == pytest.approx(5.0)


def test_simulate_hand_example():
    inst = one_retailer(2, AmbiguityCell(0, 10, 4, 1), capacity=4.0, emergency=2.0)
    rep = simulate(plan_solution(inst, {0: 8, 1: 6}), [[5, 3, 9, 2]], inst)
    assert (rep.tours, rep.visits, rep.emergency_events) == (3, 3, 2)
    assert rep.demand == 19 and rep.met == 18
    assert rep.service_level == pytest.approx(18 / 19)
    assert rep.vehicle_utilization == pytest.approx((0.75 + 1 + 1) / 3)
    assert rep.emergency_rate == pytest.approx(2 / 3) and rep.avg_emergency == pytest.approx(2.0)
    assert rep.costs["holding"] == pytest.approx(10 / 4) and rep.costs["backorder"] == pytest.approx(4 / 4)
    assert rep.costs["transport"] == pytest.approx(3 * 2 / 4)
    assert rep.costs["emergency"] == pytest.approx(2.0 * 4 / 4)
    assert rep.violation_frequency() == {(0, 0): 1.0, (1, 0): 0.5}  # period 1 warm-up tour not counted
    assert rep.to_json()["tourEvents"][0] == {"period": 1, "vehicle": 1, "tours": 1, "overCapacity": 1}


def test_simulate_errors():
    inst = one_retailer(1, AmbiguityCell(0, 4, 2, 1))
    sol = plan_solution(inst, {0: 5})
    with pytest.raises(TraceLengthMismatch):
        simulate(sol, [[1, 2], [3]], inst)
    with pytest.raises(TraceLengthMismatch):
        simulate(sol, np.zeros((2, 5)), inst)
    empty = Solution("flexible", "optimal", [], 0.0, 0.0)
    with pytest.raises(ValueError):
        simulate(empty, np.zeros((1, 5)), inst)


def test_sample_traces_follow_cycle():
    inst = Instance(1, 2, 1, 100, math.inf, [[0, 1], [1, 0]], 1, 4, 1, 10,
                    [[AmbiguityCell(0, 2, 1, 0), AmbiguityCell(5, 9, 7, 0)]], 0.3, 0.1)
    rng = np.random.default_rng(0)
    x = sample_traces(in_set_grid(inst, rng), 9, rng)
    assert x[0, ::2].tolist() == [1.0] * 5 and x[0, 1::2].tolist() == [7.0] * 4


def test_kpi_row():
    g = generate_instance(small_config(n_retailers=2, cycle_len=2))
    sol = solve(g.instance, "flexible")
    rep = simulate(sol, g.traces, g.instance)
    row = kpi_row(2, 2, "flexible", 1.5, sol, rep)
    assert tuple(row) == KPI_HEADERS
    assert row["T.O.%"] == 0.0 and row["Cost"] == sol.objective
    assert 0.0 <= row["S.L."] <= 100.0 and 0.0 <= row["Vehicle Util"] <= 100.0
    assert row["Avg I."] == average_interval(sol, 2)
    assert 1.0 <= row["Avg I."] <= 2.0
