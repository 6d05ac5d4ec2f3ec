import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from drcirp.lp import LpProblem, is_integral, solve_dense, solve_lp


def test_single_bound_row():
    p = LpProblem()
    x = p.add_var(obj=1.0)
    p.add_row({x: 1.0}, ">=", 3.0)
    sol = solve_lp(p)
    assert sol.optimal
    assert sol.x[0] == pytest.approx(3.0)
    assert sol.duals[0] == pytest.approx(1.0)


def test_max_two_vars():
    p = LpProblem("max")
    x = p.add_var(obj=1.0)
    y = p.add_var(obj=1.0)
    p.add_row({x: 1.0, y: 1.0}, "<=", 1.0)
    sol = solve_lp(p)
    assert sol.objective == pytest.approx(1.0)
    assert sol.duals[0] == pytest.approx(1.0)


def test_set_partition_picks_pair():
    p = LpProblem()
    cols = [({0}, 3.0), ({1}, 3.0), ({0, 1}, 5.0)]
    for _, c in cols:
        p.add_var(obj=c)
    for i in range(2):
        p.add_row({j: 1.0 for j, (s, _) in enumerate(cols) if i in s}, "=", 1.0)
    sol = solve_lp(p)
    assert sol.objective == pytest.approx(5.0)
    assert sol.x == pytest.approx([0.0, 0.0, 1.0])
    assert sum(sol.duals) == pytest.approx(5.0)


def test_infeasible_and_unbounded():
    p = LpProblem()
    x = p.add_var(obj=1.0, ub=1.0)
    p.add_row({x: 1.0}, ">=", 2.0)
    assert solve_lp(p).status == "infeasible"
    q = LpProblem()
    y = q.add_var(obj=-1.0)
    q.add_row({y: 1.0}, ">=", 0.0)
    assert solve_lp(q).status == "unbounded"


def test_empty_row_presolve():
    sol = solve_dense(np.array([1.0]), np.array([[0.0], [1.0]]), [">=", ">="], np.array([0.0, 2.0]),
                      np.zeros(1), np.full(1, np.inf))
    assert sol.objective == pytest.approx(2.0)
    assert sol.duals[0] == 0.0 and sol.duals[1] == pytest.approx(1.0)
    bad = solve_dense(np.array([1.0]), np.array([[0.0]]), [">="], np.array([1.0]), np.zeros(1), np.full(1, np.inf))
    assert bad.status == "infeasible"


def test_free_variable_and_upper_bounds():
    p = LpProblem()
    x = p.add_var(lb=-np.inf, obj=1.0)
    y = p.add_var(ub=2.0, obj=-2.0)
    p.add_row({x: 1.0, y: -1.0}, ">=", -5.0)
    sol = solve_lp(p)
    assert sol.x == pytest.approx([-3.0, 2.0])
    assert sol.objective == pytest.approx(-7.0)


def test_problem_validation_and_dump():
    p = LpProblem()
    with pytest.raises(ValueError):
        p.add_row({0: 1.0}, "<=", 1.0)
    x = p.add_var(obj=2.0, name="x")
    with pytest.raises(ValueError):
        p.add_row({x: 1.0}, "<", 1.0)
    with pytest.raises(ValueError):
        p.add_row({x: 1.0}, "<=", float("inf"))
    p.add_row({x: 1.0}, ">=", 1.0, name="cover")
    text = p.dump()
    assert "SENSE min" in text and "cover" in text and "+1*x >= 1" in text


def test_is_integral():
    assert is_integral(2.0000005)
    assert not is_integral(2.00001)


@st.composite
def random_lp(draw):
    m = draw(st.integers(1, 6))
    n = draw(st.integers(1, 7))
    ints = st.integers(-4, 4)
    A = np.array([[draw(ints) for _ in range(n)] for _ in range(m)], float)
    c = np.array([draw(ints) for _ in range(n)], float)
    b = np.array([draw(st.integers(-6, 10)) for _ in range(m)], float)
    senses = [draw(st.sampled_from(["<=", ">=", "="])) for _ in range(m)]
    ub = np.array([draw(st.sampled_from([np.inf, 3.0, 5.0])) for _ in range(n)])
    return c, A, senses, b, np.zeros(n), ub


def highs(c, A, senses, b, lb, ub):
    U = [k for k, s in enumerate(senses) if s == "<="]
    G = [k for k, s in enumerate(senses) if s == ">="]
    E = [k for k, s in enumerate(senses) if s == "="]
    A_ub = np.vstack([A[U], -A[G]]) if U or G else None
    b_ub = np.concatenate([b[U], -b[G]]) if U or G else None
    return linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A[E] if E else None, b_eq=b[E] if E else None,
                   bounds=list(zip(lb, [None if np.isinf(u) else u for u in ub])), method="highs")


@settings(max_examples=300, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(random_lp())
def test_matches_highs(lp):
    c, A, senses, b, lb, ub = lp
    ref = highs(*lp)
    sol = solve_dense(*lp)
    expected = {0: "optimal", 2: "infeasible", 3: "unbounded"}[ref.status]
    assert sol.status == expected
    if not sol.optimal:
        return
    assert sol.objective == pytest.approx(ref.fun, abs=1e-7)
    # primal feasibility
    r = A @ sol.x
    for k, s in enumerate(senses):
        if s == "<=":
            assert r[k] <= b[k] + 1e-7
        elif s == ">=":
            assert r[k] >= b[k] - 1e-7
        else:
            assert r[k] == pytest.approx(b[k], abs=1e-7)
    assert np.all(sol.x >= lb) and np.all(sol.x <= ub)
    # dual value of the bounded problem: y.b plus the bound terms of the reduced costs
    d = c - sol.duals @ A
    assert d == pytest.approx(sol.reduced_costs, abs=1e-7)
    dual_obj = sol.duals @ b + sum(dj * (u if dj < 0 else 0.0) for dj, u in zip(d, ub) if np.isfinite(u))
    assert dual_obj == pytest.approx(sol.objective, abs=1e-6)
    # dual sign conventions for a minimisation
    for k, s in enumerate(senses):
        if s == "<=":
            assert sol.duals[k] <= 1e-7
        elif s == ">=":
            assert sol.duals[k] >= -1e-7


@settings(max_examples=30, deadline=None)
@given(random_lp())
def test_deterministic(lp):
    a, b = solve_dense(*lp), solve_dense(*lp)
    assert a.status == b.status
    if a.optimal:
        assert np.array_equal(a.x, b.x) and np.array_equal(a.duals, b.duals)
