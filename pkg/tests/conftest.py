import math
import random

import pytest

from drcirp import AmbiguityCell, Instance


def random_cell(rng: random.Random, width=(2, 6)) -> AmbiguityCell:
    lo = rng.randint(0, 3)
    hi = lo + rng.randint(*width)
    mu = round(rng.uniform(lo + 0.5, hi - 0.5), 2)
    mad = round(rng.uniform(0.0, 2 * (mu - lo) * (hi - mu) / (hi - lo)), 2)
    return AmbiguityCell(lo, hi, mu, mad)


def random_instance(rng: random.Random, n: int, T: int, **kw) -> Instance:
    """Small Euclidean instance whose level bounds stay below the oracle caps."""
    pts = [(rng.uniform(0, 10), rng.uniform(0, 10)) for _ in range(n + 1)]
    args = dict(
        n_retailers=n, cycle_len=T, n_vehicles=n,
        capacity=rng.choice([15.0, 25.0, 60.0]), max_tour_len=math.inf,
        dist=[[math.dist(a, b) for b in pts] for a in pts],
        hold_cost=1.0, backorder_cost=rng.choice([3.0, 6.0]), trans_cost=1.0,
        vehicle_cost=rng.choice([5.0, 20.0]),
        ambiguity=[[random_cell(rng) for _ in range(T)] for _ in range(n)],
        eps_capacity=0.1, eps_overshoot=rng.choice([0.0, 0.1]),
    )
    args.update(kw)
    return Instance(**args)


def stationary_instance(rng: random.Random, n: int, T: int, **kw) -> Instance:
    inst = random_instance(rng, n, T, **kw)
    inst.ambiguity = [[row[0]] * T for row in inst.ambiguity]
    return inst


@pytest.fixture
def tiny_instance() -> Instance:
    return random_instance(random.Random(3), 2, 2)


# acceptance criteria report: (number, passed, detail)
ACCEPTANCE: list[tuple[int, bool, str]] = []


def record(number: int, ok: bool, detail: str) -> None:
    line = (number, bool(ok), detail)
    ACCEPTANCE.append(line)
    print(f"criterion {number:2d} {'PASS' if ok else 'FAIL'}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {number:2d} {'PASS' if ok else 'FAIL'}: {detail}")
