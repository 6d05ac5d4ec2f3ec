"""Dense bounded-variable primal simplex with row duals.

Dual convention: ``duals[k]`` is the sensitivity of the optimal objective
(in the problem's own sense) to the right-hand side of row ``k``.  For a
minimisation this gives ``<=`` rows a non-positive dual and ``>=`` rows a
non-negative one; for a maximisation the signs flip.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

INF = math.inf
DEFAULT_TOL = 1e-7
ROUNDOFF = 1e-11  # relative error allowed when pricing cancels large terms
INTEGRALITY_TOL = 1e-6

_LOWER, _UPPER, _FREE, _BASIC = 0, 1, 2, 3


class NumericalError(RuntimeError):
    """Raised when the simplex cannot make safe progress; caller should rescale."""


def is_integral(x: float, tol: float = INTEGRALITY_TOL) -> bool:
    return abs(x - round(x)) <= tol


@dataclass
class LpSolution:
    status: str
    objective: float = math.nan
    x: np.ndarray = field(default_factory=lambda: np.zeros(0))
    duals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    reduced_costs: np.ndarray = field(default_factory=lambda: np.zeros(0))
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


class LpProblem:
    """A linear program assembled row by row."""

    def __init__(self, sense: str = "min") -> None:
        if sense not in ("min", "max"):
            raise ValueError("sense must be 'min' or 'max'")
        self.sense = sense
        self.names: list[str] = []
        self.lb: list[float] = []
        self.ub: list[float] = []
        self.obj: list[float] = []
        self.row_coefs: list[dict[int, float]] = []
        self.row_sense: list[str] = []
        self.rhs: list[float] = []
        self.row_names: list[str] = []

    @property
    def n_vars(self) -> int:
        return len(self.obj)

    @property
    def n_rows(self) -> int:
        return len(self.rhs)

    def add_var(self, lb: float = 0.0, ub: float = INF, obj: float = 0.0, name: str | None = None) -> int:
        if lb > ub:
            raise ValueError("lower bound above upper bound")
        self.lb.append(float(lb))
        self.ub.append(float(ub))
        self.obj.append(float(obj))
        self.names.append(name or f"x{len(self.obj) - 1}")
        return len(self.obj) - 1

    def add_row(
        self,
        coefs: Mapping[int, float] | Iterable[tuple[int, float]],
        sense: str,
        rhs: float,
        name: str | None = None,
    ) -> int:
        if sense not in ("<=", ">=", "="):
            raise ValueError(f"bad row sense {sense!r}")
        if not math.isfinite(rhs):
            raise ValueError("right-hand side must be finite")
        items = coefs.items() if isinstance(coefs, Mapping) else coefs
        row: dict[int, float] = {}
        for j, a in items:
            if not 0 <= j < self.n_vars:
                raise ValueError(f"row references undeclared variable {j}")
            row[j] = row.get(j, 0.0) + float(a)
        self.row_coefs.append(row)
        self.row_sense.append(sense)
        self.rhs.append(float(rhs))
        self.row_names.append(name or f"r{len(self.rhs) - 1}")
        return len(self.rhs) - 1

    def dense(self) -> np.ndarray:
        A = np.zeros((self.n_rows, self.n_vars))
        for k, row in enumerate(self.row_coefs):
            for j, a in row.items():
                A[k, j] = a
        return A

    def dump(self) -> str:
        """Plain-text listing for offline inspection."""
        lines = [f"SENSE {self.sense}", "VARIABLES"]
        for j in range(self.n_vars):
            lines.append(f"  {self.names[j]:<16} lb={self.lb[j]:<12.6g} ub={self.ub[j]:<12.6g} c={self.obj[j]:.10g}")
        lines.append("ROWS")
        for k in range(self.n_rows):
            terms = " ".join(f"{a:+.10g}*{self.names[j]}" for j, a in sorted(self.row_coefs[k].items()))
            lines.append(f"  {self.row_names[k]:<16} {terms} {self.row_sense[k]} {self.rhs[k]:.10g}")
        return "\n".join(lines) + "\n"


def solve_lp(p: LpProblem, tol: float = DEFAULT_TOL) -> LpSolution:
    return solve_dense(
        np.asarray(p.obj, float),
        p.dense(),
        p.row_sense,
        np.asarray(p.rhs, float),
        np.asarray(p.lb, float),
        np.asarray(p.ub, float),
        sense=p.sense,
        tol=tol,
    )


def solve_dense(
    c: np.ndarray,
    A: np.ndarray,
    senses: list[str],
    b: np.ndarray,
    lb: np.ndarray,
    ub: np.ndarray,
    sense: str = "min",
    tol: float = DEFAULT_TOL,
) -> LpSolution:
    """Solve ``opt c.x`` subject to ``A x (senses) b`` and ``lb <= x <= ub``."""
    c = np.asarray(c, float)
    A = np.asarray(A, float).reshape(len(b), len(c))
    b = np.asarray(b, float)
    m, n = A.shape
    sign = 1.0 if sense == "min" else -1.0

    # presolve: drop empty rows after checking them
    keep = []
    for k in range(m):
        if np.any(A[k] != 0.0):
            keep.append(k)
            continue
        s, r = senses[k], b[k]
        if (s == "<=" and r < -tol) or (s == ">=" and r > tol) or (s == "=" and abs(r) > tol):
            return LpSolution("infeasible")
    keep_idx = np.array(keep, dtype=int)
    Ak = A[keep_idx] if keep else np.zeros((0, n))
    sol = _Simplex(sign * c, Ak, [senses[k] for k in keep], b[keep_idx] if keep else np.zeros(0), lb, ub, tol).run()
    if sol.status != "optimal":
        return sol
    duals = np.zeros(m)
    duals[keep_idx] = sign * sol.duals
    sol.duals = duals
    sol.objective = sign * sol.objective
    sol.reduced_costs = sign * sol.reduced_costs
    return sol


class _Simplex:
    """Two-phase bounded primal simplex on ``A x + S s + R a = b``."""

    def __init__(self, c, A, senses, b, lb, ub, tol) -> None:
        m, n = A.shape
        self.m, self.n_struct = m, n
        self.tol = tol
        self.feas_tol = 1e-9 * max(1.0, float(np.max(np.abs(b), initial=0.0)))
        lb = np.asarray(lb, float).copy()
        ub = np.asarray(ub, float).copy()
        # nonbasic starting values for structural variables
        x0 = np.where(np.isfinite(lb), lb, np.where(np.isfinite(ub), ub, 0.0))
        resid = b - A @ x0
        cols = [A]
        basis = [-1] * m
        extra_cols = []
        extra_lb, extra_ub, extra_x = [], [], []
        self.art_start = None
        nxt = n
        art_rows = []
        for k in range(m):
            s = senses[k]
            if s == "=":
                art_rows.append(k)
                continue
            e = np.zeros(m)
            e[k] = 1.0 if s == "<=" else -1.0
            val = resid[k] * e[k]
            extra_cols.append(e)
            extra_lb.append(0.0)
            extra_ub.append(INF)
            if val >= -self.feas_tol:
                extra_x.append(max(val, 0.0))
                basis[k] = nxt
            else:
                extra_x.append(0.0)
                art_rows.append(k)
            nxt += 1
        self.art_start = nxt
        for k in art_rows:
            e = np.zeros(m)
            e[k] = 1.0 if resid[k] >= 0 else -1.0
            extra_cols.append(e)
            extra_lb.append(0.0)
            extra_ub.append(INF)
            extra_x.append(abs(resid[k]))
            basis[k] = nxt
            nxt += 1
        if extra_cols:
            cols.append(np.array(extra_cols).T)
        self.A = np.hstack(cols) if len(cols) > 1 else A.copy()
        N = self.A.shape[1]
        self.lb = np.concatenate([lb, np.array(extra_lb)]) if extra_lb else lb
        self.ub = np.concatenate([ub, np.array(extra_ub)]) if extra_ub else ub
        self.c = np.concatenate([c, np.zeros(N - n)])
        self.x = np.concatenate([x0, np.array(extra_x)]) if extra_x else x0
        self.b = b
        self.basis = np.array(basis, dtype=int)
        self.status = np.empty(N, dtype=np.int8)
        for j in range(N):
            if np.isfinite(self.lb[j]):
                self.status[j] = _LOWER
            elif np.isfinite(self.ub[j]):
                self.status[j] = _UPPER
            else:
                self.status[j] = _FREE
        self.status[self.basis] = _BASIC
        self.Binv = np.eye(m)
        for k in range(m):
            # basis columns are signed unit vectors
            self.Binv[k, k] = 1.0 / self.A[k, self.basis[k]]
        self.iterations = 0

    # --------------------------------------------------------------
    def _refactor(self) -> None:
        B = self.A[:, self.basis]
        try:
            self.Binv = np.linalg.inv(B)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("singular basis") from exc
        nb = self.status != _BASIC
        rhs = self.b - self.A[:, nb] @ self.x[nb]
        self.x[self.basis] = self.Binv @ rhs

    def _iterate(self, cost: np.ndarray) -> str:
        m = self.m
        N = self.A.shape[1]
        A = self.A
        degenerate = 0
        bland = False
        limit = 50 * (m + N) + 1000
        since_refactor = 0
        movable = self.ub > self.lb
        piv_tol = 1e-9
        absA = np.abs(A)
        while True:
            if self.iterations > limit:
                raise NumericalError("iteration limit reached")
            st = self.status
            y = cost[self.basis] @ self.Binv
            d = cost - y @ A
            # round-off in d grows with the magnitude of the terms it cancels
            tol = self.tol + ROUNDOFF * (np.abs(cost) + np.abs(y) @ absA)
            lowish = (st == _LOWER) | (st == _FREE)
            highish = (st == _UPPER) | (st == _FREE)
            elig = movable & ((lowish & (d < -tol)) | (highish & (d > tol)))
            if bland:
                j = int(np.argmax(elig))
                if not elig[j]:
                    return "optimal"
            else:
                score = np.where(elig, np.abs(d), 0.0)
                j = int(np.argmax(score))
                if score[j] == 0.0:
                    return "optimal"
            direction = 1.0 if d[j] < 0 else -1.0
            alpha = self.Binv @ A[:, j]
            delta = -direction * alpha
            basis = self.basis
            xb = self.x[basis]
            ratios = np.full(m, INF)
            dec = delta < -piv_tol
            inc = delta > piv_tol
            if dec.any():
                ratios[dec] = (xb[dec] - self.lb[basis[dec]]) / (-delta[dec])
            if inc.any():
                ratios[inc] = (self.ub[basis[inc]] - xb[inc]) / delta[inc]
            np.maximum(ratios, 0.0, out=ratios)
            r = int(np.argmin(ratios)) if m else -1
            theta_b = float(ratios[r]) if m else INF
            flip = self.ub[j] - self.lb[j]
            if theta_b == INF and flip == INF:
                return "unbounded"
            self.iterations += 1
            if flip <= theta_b:
                # bound flip of the entering variable, basis unchanged
                self.x[basis] = xb + flip * delta
                if direction > 0:
                    self.x[j] = self.ub[j]
                    st[j] = _UPPER
                else:
                    self.x[j] = self.lb[j]
                    st[j] = _LOWER
                degenerate = 0
                bland = False
                continue
            theta = theta_b
            ties = np.flatnonzero(ratios <= theta + 1e-12)
            if ties.size > 1:
                if bland:
                    r = int(ties[np.argmin(basis[ties])])
                else:
                    r = int(ties[np.argmax(np.abs(alpha[ties]))])
            if abs(alpha[r]) < piv_tol:
                raise NumericalError("pivot element below tolerance")
            leave = int(basis[r])
            self.x[basis] = xb + theta * delta
            self.x[j] = self.x[j] + direction * theta
            if delta[r] < 0:
                self.x[leave] = self.lb[leave]
                st[leave] = _LOWER
            else:
                self.x[leave] = self.ub[leave]
                st[leave] = _UPPER
            st[j] = _BASIC
            basis[r] = j
            # update inverse with an elementary row operation
            prow = self.Binv[r] / alpha[r]
            self.Binv -= np.outer(alpha, prow)
            self.Binv[r] = prow
            since_refactor += 1
            if since_refactor >= 60:
                self._refactor()
                since_refactor = 0
            if theta <= 1e-12:
                degenerate += 1
                if degenerate > 2 * (m + N):
                    bland = True
            else:
                degenerate = 0
                bland = False

    def run(self) -> LpSolution:
        m = self.m
        N = self.A.shape[1]
        n = self.n_struct
        if m == 0:
            # only bounds: each variable sits at its cheaper finite bound
            x = np.zeros(n)
            for j in range(n):
                cj = self.c[j]
                if cj > 0:
                    if not np.isfinite(self.lb[j]):
                        return LpSolution("unbounded")
                    x[j] = self.lb[j]
                elif cj < 0:
                    if not np.isfinite(self.ub[j]):
                        return LpSolution("unbounded")
                    x[j] = self.ub[j]
                else:
                    x[j] = self.lb[j] if np.isfinite(self.lb[j]) else (self.ub[j] if np.isfinite(self.ub[j]) else 0.0)
            return LpSolution("optimal", float(self.c[:n] @ x), x, np.zeros(0), self.c[:n].copy(), 0)
        n_art = N - self.art_start
        if n_art:
            cost1 = np.zeros(N)
            cost1[self.art_start:] = 1.0
            status = self._iterate(cost1)
            if status != "optimal":
                raise NumericalError("phase one did not converge")
            self._refactor()
            infeas = float(self.x[self.art_start:].sum())
            if infeas > 1e-7 * max(1.0, float(np.abs(self.b).max(initial=0.0))):
                return LpSolution("infeasible", iterations=self.iterations)
            # freeze artificials at zero for phase two
            self.ub[self.art_start:] = 0.0
            for j in range(self.art_start, N):
                if self.status[j] != _BASIC:
                    self.x[j] = 0.0
                    self.status[j] = _LOWER
        status = self._iterate(self.c)
        if status != "optimal":
            return LpSolution(status, iterations=self.iterations)
        self._refactor()
        y = self.c[self.basis] @ self.Binv
        d = self.c - y @ self.A
        x = self.x[:n].copy()
        # snap tiny bound violations produced by round-off
        x = np.minimum(np.maximum(x, self.lb[:n]), self.ub[:n])
        obj = float(self.c[:n] @ x)
        return LpSolution("optimal", obj, x, y, d[:n], self.iterations)
