"""Command-line entry point: ``drcirp <subcommand> ...``.

Exit codes: 0 success (including a time-limited run with an incumbent),
1 no solution found within the limits, 2 usage or input error,
3 infeasible instance.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .bnp import POLICIES, Solution, SolverConfig, solve
from .core_model import CyclicInterval, Instance
from .harness import (CYCLE_TYPES, KPI_HEADERS, GeneratorConfig, TraceLengthMismatch, generate_instance,
                      in_set_grid, kpi_row, sample_traces, simulate)
from .inventory import worst_distribution, interval_cells
from .oracle import CapsExceeded, brute_force_solve

EXIT_OK, EXIT_NO_SOLUTION, EXIT_USAGE, EXIT_INFEASIBLE = 0, 1, 2, 3


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# io helpers


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _read_json(path: str):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise UsageError(f"no such file: {path}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from exc


def _load_instance(path: str, args) -> Instance:
    try:
        inst = Instance.from_json(_read_json(path))
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"{path}: {exc}") from exc
    return _override(inst, args)


def _override(inst: Instance, args) -> Instance:
    changes = {}
    if getattr(args, "eps1", None) is not None:
        changes["eps_capacity"] = args.eps1
    if getattr(args, "eps2", None) is not None:
        changes["eps_overshoot"] = args.eps2
    if getattr(args, "emergency_cost", None) is not None:
        changes["emergency_cost"] = args.emergency_cost
    if changes:
        inst = dataclasses.replace(inst, **changes)
        try:
            inst.validate()
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    return inst


def traces_to_json(traces) -> dict:
    arr = np.asarray(traces)
    rows = arr.astype(int).tolist() if np.all(arr == np.round(arr)) else arr.tolist()
    return {"periods": int(arr.shape[1]), "demand": rows}


def traces_from_json(d: dict) -> list[list[float]]:
    return [[float(x) for x in row] for row in d["demand"]]


def _generator_config(args, seed: int | None = None) -> GeneratorConfig:
    kw = dict(n_retailers=args.n, cycle_len=args.T, cycle_type=args.cycle_type, n_samples=args.samples,
              test_periods=args.test_periods, seed=args.seed if seed is None else seed,
              capacity=args.capacity, n_vehicles=args.vehicles)
    for name, field in (("eps1", "eps_capacity"), ("eps2", "eps_overshoot"), ("emergency_cost", "emergency_cost")):
        if getattr(args, name, None) is not None:
            kw[field] = getattr(args, name)
    cfg = GeneratorConfig(**kw)
    issues = cfg.problems()
    if issues:
        raise UsageError("; ".join(issues))
    return cfg


def _solver_config(args) -> SolverConfig:
    return SolverConfig(policy=args.policy, time_limit=args.time_limit, pp_time_limit=args.pp_time_limit,
                        seed=args.seed, record_times=getattr(args, "record_times", False))


def _solution_exit(sol: Solution) -> int:
    if sol.patterns:
        return EXIT_OK
    return EXIT_INFEASIBLE if sol.status == "infeasible" else EXIT_NO_SOLUTION


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(args) -> int:
    g = generate_instance(_generator_config(args))
    _emit(json.dumps(g.instance.to_json(), indent=1, sort_keys=True) + "\n", args.out)
    if args.traces_out:
        Path(args.traces_out).write_text(_dumps(traces_to_json(g.traces)))
    return EXIT_OK


def cmd_solve(args) -> int:
    if args.instance:
        inst = _load_instance(args.instance, args)
    else:
        inst = generate_instance(_generator_config(args)).instance
    sol = solve(inst, args.policy, _solver_config(args))
    _emit(sol.dumps(), args.out)
    if sol.status == "infeasible":
        print("instance is infeasible", file=sys.stderr)
    elif sol.status == "time-limit":
        gap = sol.gap
        print(f"time limit reached, gap {gap:.6g}" if sol.patterns else "time limit reached without a solution",
              file=sys.stderr)
    return _solution_exit(sol)


def cmd_oracle(args) -> int:
    inst = _load_instance(args.instance, args)
    try:
        res = brute_force_solve(inst, args.policy)
    except CapsExceeded as exc:
        raise UsageError(str(exc)) from exc
    sol = res.solution(inst, args.policy)
    _emit(sol.dumps(), args.out)
    return _solution_exit(sol)


def cmd_simulate(args) -> int:
    inst = _load_instance(args.instance, args)
    try:
        sol = Solution.from_json(_read_json(args.solution), inst)
    except (KeyError, TypeError) as exc:
        raise UsageError(f"{args.solution}: {exc}") from exc
    if not sol.patterns:
        raise UsageError("solution has no patterns to simulate")
    rng = np.random.default_rng(args.seed)
    if args.traces:
        try:
            traces = traces_from_json(_read_json(args.traces))
        except (KeyError, TypeError, ValueError) as exc:
            raise UsageError(f"{args.traces}: {exc}") from exc
    else:
        traces = sample_traces(in_set_grid(inst, rng), args.periods, rng)
    try:
        rep = simulate(sol, traces, inst)
    except (TraceLengthMismatch, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    _emit(_dumps(rep.to_json()), args.out)
    return EXIT_OK


def cmd_worst_dist(args) -> int:
    inst = _load_instance(args.instance, args)
    N, T = inst.n_retailers, inst.cycle_len
    if not (1 <= args.retailer <= N and 1 <= args.start <= T and 1 <= args.end <= T) or args.level < 0:
        raise UsageError("retailer, periods (1-based) or level out of range")
    iv = CyclicInterval(args.start - 1, args.end - 1, T)
    cells = interval_cells(inst, args.retailer - 1, iv)
    wd = worst_distribution(cells, args.level, inst.hold_cost, inst.backorder_cost)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["prob", "turning"] + [f"d_{t + 1}" for t in iv.demand_periods()])
    for a in wd.atoms:
        w.writerow([repr(a.prob), 0 if a.turning is None else a.turning] + [repr(float(x)) for x in a.demand])
    _emit(buf.getvalue(), args.out)
    print(f"worst-case cost {wd.value!r}", file=sys.stderr)
    return EXIT_OK


def _bench_job(job):
    n, k, seed, gen_kw, solver_kw, policies = job
    g = generate_instance(GeneratorConfig(n_retailers=n, seed=seed, **gen_kw))
    rows = []
    for policy in policies:
        t0 = time.perf_counter()
        sol = solve(g.instance, policy, SolverConfig(policy=policy, **solver_kw))
        secs = time.perf_counter() - t0
        if not sol.patterns:
            continue
        rep = simulate(sol, g.traces, g.instance)
        rows.append(kpi_row(n, g.instance.cycle_len, policy, secs, sol, rep))
    return n, k, rows


def cmd_bench(args) -> int:
    if not args.out:
        raise UsageError("bench needs --out for the KPI CSV")
    gen_kw = dict(cycle_len=args.T, cycle_type=args.cycle_type, n_samples=args.samples,
                  test_periods=args.test_periods, capacity=args.capacity)
    for name, field in (("eps1", "eps_capacity"), ("eps2", "eps_overshoot"), ("emergency_cost", "emergency_cost")):
        if getattr(args, name) is not None:
            gen_kw[field] = getattr(args, name)
    solver_kw = dict(time_limit=args.time_limit, pp_time_limit=args.pp_time_limit, seed=args.seed)
    policies = args.policies or list(POLICIES)
    jobs = []
    for n in args.n:
        for k in range(args.instances):
            seed = int(np.random.SeedSequence([args.seed, n, k]).generate_state(1, np.uint64)[0])
            jobs.append((n, k, seed, gen_kw, solver_kw, policies))
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            results = list(pool.map(_bench_job, jobs))
    else:
        results = [_bench_job(j) for j in jobs]
    grouped: dict[tuple[int, str], list[dict]] = {}
    for n, _, rows in sorted(results, key=lambda r: (r[0], r[1])):
        for row in rows:
            grouped.setdefault((n, row["Policy"]), []).append(row)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(KPI_HEADERS)
        for n in args.n:
            for policy in policies:
                rows = grouped.get((n, policy))
                if not rows:
                    continue
                avg = {h: float(np.mean([r[h] for r in rows])) for h in KPI_HEADERS[2:]}
                w.writerow([n, policy] + [f"{avg[h]:.4f}" for h in KPI_HEADERS[2:]])
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--eps1", type=float, help="capacity chance-constraint tolerance")
    common.add_argument("--eps2", type=float, help="overshoot chance-constraint tolerance")
    common.add_argument("--emergency-cost", type=float, help="unit emergency transport cost e")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", help="output file (default: stdout)")

    solver = argparse.ArgumentParser(add_help=False)
    solver.add_argument("--policy", choices=POLICIES, default="flexible")
    solver.add_argument("--time-limit", type=float, default=3600.0)
    solver.add_argument("--pp-time-limit", type=float, default=300.0)
    solver.add_argument("--record-times", action="store_true", help="report timing statistics")

    gen = argparse.ArgumentParser(add_help=False)
    gen.add_argument("--n", type=int, default=3, help="number of retailers")
    gen.add_argument("--T", type=int, default=3, help="cycle length")
    gen.add_argument("--cycle-type", choices=CYCLE_TYPES, default="cyclic")
    gen.add_argument("--samples", type=int, default=100_000)
    gen.add_argument("--test-periods", type=int, default=100)
    gen.add_argument("--capacity", type=float, default=70.0)
    gen.add_argument("--vehicles", type=int, help="fleet size (default: one per retailer)")

    p = argparse.ArgumentParser(prog="drcirp", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("generate", parents=[common, gen], help="generate a synthetic instance")
    s.add_argument("--traces-out", help="write held-out demand traces here")
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("solve", parents=[common, solver, gen], help="solve an instance by nested branch-and-price")
    s.add_argument("instance", nargs="?", help="instance JSON (default: generate one from the generator flags)")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("oracle", parents=[common, solver], help="brute-force optimum of a tiny instance")
    s.add_argument("instance")
    s.set_defaults(func=cmd_oracle)

    s = sub.add_parser("simulate", parents=[common], help="replay a solution against demand traces")
    s.add_argument("instance")
    s.add_argument("solution")
    s.add_argument("--traces", help="demand traces JSON (default: sample an in-set distribution)")
    s.add_argument("--periods", type=int, default=2000, help="periods to sample without --traces")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("worst-dist", parents=[common], help="worst-case demand distribution of one interval")
    s.add_argument("instance")
    s.add_argument("--retailer", type=int, required=True, help="1-based retailer")
    s.add_argument("--start", type=int, required=True, help="1-based visit period")
    s.add_argument("--end", type=int, required=True, help="1-based next visit period")
    s.add_argument("--level", type=int, required=True, help="order-up-to level")
    s.set_defaults(func=cmd_worst_dist)

    s = sub.add_parser("bench", parents=[common, solver], help="solve and simulate generated instances, write KPI CSV")
    s.add_argument("--n", type=int, nargs="+", default=[3])
    s.add_argument("--T", type=int, default=3)
    s.add_argument("--cycle-type", choices=CYCLE_TYPES, default="cyclic")
    s.add_argument("--samples", type=int, default=100_000)
    s.add_argument("--test-periods", type=int, default=100)
    s.add_argument("--capacity", type=float, default=70.0)
    s.add_argument("--instances", type=int, default=3)
    s.add_argument("--policies", nargs="+", choices=POLICIES)
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_bench)
    return p


def cli(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"drcirp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(cli())


if __name__ == "__main__":
    main()
