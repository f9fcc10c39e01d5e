"""Dense bounded-variable revised simplex.

Small LPs only (tens of rows, a few hundred columns): the basis inverse is
kept explicitly, updated by rank-one pivots and refactored periodically.

Every row gets a slack column (fixed at zero for equalities), so the column
layout does not depend on variable bounds. That lets a branch-and-bound
child reuse its parent's optimal basis: the basis stays dual feasible after
a bound change and the dual simplex restores primal feasibility in a few
pivots. Cold starts use a two-phase primal simplex with Dantzig pricing,
switching to Bland's rule after a run of degenerate pivots.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

LE, GE, EQ = "<=", ">=", "="
_SENSES = (LE, GE, EQ)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration_limit"

STALL_LIMIT = 50
REFACTOR_EVERY = 50
_DJ_TOL = 1e-9
_PIV_TOL = 1e-9
_FEAS_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class LinearProgram:
    """``min c.x`` subject to ``A[i].x (sense[i]) rhs[i]`` and ``lower <= x <= upper``."""

    objective: np.ndarray
    A: np.ndarray
    senses: tuple
    rhs: np.ndarray
    lower: np.ndarray = None
    upper: np.ndarray = None

    def __post_init__(self):
        c = np.asarray(self.objective, dtype=float).reshape(-1)
        n = c.size
        A = np.asarray(self.A, dtype=float)
        if A.size == 0:
            A = A.reshape(0, n)
        rhs = np.asarray(self.rhs, dtype=float).reshape(-1)
        if A.ndim != 2 or A.shape[1] != n:
            raise ValueError(f"constraint matrix shape {A.shape} incompatible with {n} variables")
        if A.shape[0] != rhs.size or len(self.senses) != rhs.size:
            raise ValueError("rows, senses and rhs must have equal length")
        for s in self.senses:
            if s not in _SENSES:
                raise ValueError(f"unknown relation {s!r}")
        lower = np.zeros(n) if self.lower is None else np.asarray(self.lower, dtype=float)
        upper = np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, dtype=float)
        if lower.shape != (n,) or upper.shape != (n,):
            raise ValueError("bounds must have one entry per variable")
        if not (np.isfinite(c).all() and np.isfinite(A).all() and np.isfinite(rhs).all()):
            raise ValueError("coefficients must be finite")
        if not np.isfinite(lower).all():
            raise ValueError("lower bounds must be finite")
        for name, val in (("objective", c), ("A", A), ("rhs", rhs), ("lower", lower),
                          ("upper", upper)):
            object.__setattr__(self, name, val)
        object.__setattr__(self, "senses", tuple(self.senses))

    @property
    def constraints(self) -> Iterator[tuple[np.ndarray, str, float]]:
        for row, s, r in zip(self.A, self.senses, self.rhs):
            yield row, s, float(r)

    @classmethod
    def from_rows(cls, objective, rows: Sequence[tuple], lower=None, upper=None) -> "LinearProgram":
        n = len(objective)
        A = np.array([r[0] for r in rows], dtype=float).reshape(len(rows), n)
        return cls(objective, A, tuple(r[1] for r in rows), [r[2] for r in rows], lower, upper)

    def with_bounds(self, lower, upper) -> "LinearProgram":
        return LinearProgram(self.objective, self.A, self.senses, self.rhs, lower, upper)


@dataclass
class Basis:
    """Reusable simplex state: basic column per row and nonbasic-at-upper flags."""

    columns: np.ndarray
    at_upper: np.ndarray


@dataclass
class LpSolution:
    status: str
    primal: np.ndarray = None
    dual: np.ndarray = None  # d(objective)/d(rhs), one entry per constraint row
    objective_value: float = float("nan")
    dual_objective: float = float("nan")
    iterations: int = 0
    message: str = ""
    basis: Basis | None = None
    reduced_costs: np.ndarray = None

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


class _Unbounded(Exception):
    pass


class _Infeasible(Exception):
    pass


class _IterLimit(Exception):
    pass


class _Tableau:
    """Revised simplex over ``A x = b, lo <= x <= hi``; nonbasic columns sit
    at a bound, ``x`` holds the full current point."""

    def __init__(self, A, b, lo, hi, max_iter):
        self.A, self.b, self.lo, self.hi = A, b, lo, hi
        self.m, self.n = A.shape
        self.max_iter = max_iter
        self.iterations = 0

    def load(self, basis, at_upper):
        self.basis = np.array(basis, dtype=np.int64)
        self.at_upper = np.array(at_upper, dtype=bool)
        self.is_basic = np.zeros(self.n, dtype=bool)
        self.is_basic[self.basis] = True
        self.factor()

    def factor(self):
        self.Binv = np.linalg.inv(self.A[:, self.basis])
        x = np.where(self.at_upper, self.hi, self.lo)
        x[self.basis] = 0.0
        x[self.basis] = self.Binv @ (self.b - self.A @ x)
        self.x = x
        self.since_refactor = 0

    def duals(self, c):
        y = c[self.basis] @ self.Binv
        d = c - y @ self.A
        d[self.basis] = 0.0
        return y, d

    def _pivot(self, r, q, col):
        piv = col[r]
        row_r = self.Binv[r] / piv
        self.Binv -= np.outer(col, row_r)
        self.Binv[r] = row_r
        leaving = self.basis[r]
        self.is_basic[leaving] = False
        self.is_basic[q] = True
        self.basis[r] = q
        self.at_upper[q] = False
        self.since_refactor += 1
        return leaving

    def _tick(self):
        if self.iterations >= self.max_iter:
            raise _IterLimit
        self.iterations += 1
        if self.since_refactor >= REFACTOR_EVERY:
            self.factor()

    def primal(self, c, allowed):
        """Primal simplex from a primal-feasible basis."""
        stall = 0
        bland = False
        movable = self.hi > self.lo
        while True:
            _, d = self.duals(c)
            up = ~self.is_basic & allowed & movable & ~self.at_upper & (d < -_DJ_TOL)
            down = ~self.is_basic & allowed & movable & self.at_upper & (d > _DJ_TOL)
            cand = np.nonzero(up | down)[0]
            if cand.size == 0:
                return
            q = int(cand[0]) if bland else int(cand[np.argmax(np.abs(d[cand]))])
            self._tick()
            direction = 1.0 if up[q] else -1.0
            col = self.Binv @ self.A[:, q]
            rate = -direction * col  # d(x_B)/dt
            xB = self.x[self.basis]
            loB, hiB = self.lo[self.basis], self.hi[self.basis]
            t_flip = self.hi[q] - self.lo[q]
            ratios = np.full(self.m, np.inf)
            dec = rate < -_PIV_TOL
            inc = rate > _PIV_TOL
            ratios[dec] = (xB[dec] - loB[dec]) / -rate[dec]
            inc_f = inc & np.isfinite(hiB)
            ratios[inc_f] = (hiB[inc_f] - xB[inc_f]) / rate[inc_f]
            ratios = np.maximum(ratios, 0.0)
            t_row = ratios.min() if self.m else np.inf
            if not np.isfinite(t_flip) and not np.isfinite(t_row):
                raise _Unbounded
            if t_flip <= t_row:
                t = t_flip
                self.x[self.basis] = xB + t * rate
                self.x[q] += direction * t
                self.at_upper[q] = not self.at_upper[q]
            else:
                t = t_row
                ties = np.nonzero(ratios <= t + 1e-12 * max(1.0, t))[0]
                if bland:
                    r = int(ties[np.argmin(self.basis[ties])])
                else:
                    r = int(ties[np.argmax(np.abs(col[ties]))])
                to_upper = rate[r] > 0
                self.x[self.basis] = xB + t * rate
                self.x[q] += direction * t
                leaving = self._pivot(r, q, col)
                self.x[leaving] = self.hi[leaving] if to_upper else self.lo[leaving]
                self.at_upper[leaving] = to_upper
            if t <= 1e-12:
                stall += 1
                if stall >= STALL_LIMIT:
                    bland = True
            else:
                stall = 0

    def dual(self, c, allowed):
        """Dual simplex from a dual-feasible basis."""
        movable = (self.hi > self.lo) & allowed
        while True:
            xB = self.x[self.basis]
            loB, hiB = self.lo[self.basis], self.hi[self.basis]
            below = loB - xB
            above = xB - hiB
            infeas = np.maximum(below, above)
            r = int(np.argmax(infeas))
            if infeas[r] <= _FEAS_TOL:
                return
            self._tick()
            _, d = self.duals(c)
            alpha = self.Binv[r] @ self.A
            nb = ~self.is_basic & movable
            if below[r] > above[r]:
                target = loB[r]
                cand = nb & ((~self.at_upper & (alpha < -_PIV_TOL)) | (self.at_upper & (alpha > _PIV_TOL)))
            else:
                target = hiB[r]
                cand = nb & ((~self.at_upper & (alpha > _PIV_TOL)) | (self.at_upper & (alpha < -_PIV_TOL)))
            idx = np.nonzero(cand)[0]
            if idx.size == 0:
                raise _Infeasible
            ratio = np.abs(d[idx]) / np.abs(alpha[idx])
            best = ratio.min()
            ties = idx[ratio <= best + 1e-12]
            q = int(ties[np.argmax(np.abs(alpha[ties]))])
            col = self.Binv @ self.A[:, q]
            delta = (xB[r] - target) / col[r]
            self.x[self.basis] = xB - delta * col
            self.x[q] += delta
            leaving = self._pivot(r, q, col)
            self.x[leaving] = target
            self.at_upper[leaving] = target == self.hi[leaving] and np.isfinite(target) and \
                self.hi[leaving] != self.lo[leaving]


def _standard_form(lp: LinearProgram):
    m, n = lp.A.shape
    slack = np.zeros((m, m))
    s_lo = np.zeros(m)
    s_hi = np.full(m, np.inf)
    for i, s in enumerate(lp.senses):
        slack[i, i] = -1.0 if s == GE else 1.0
        if s == EQ:
            s_hi[i] = 0.0
    A = np.hstack([lp.A, slack])
    lo = np.concatenate([lp.lower, s_lo])
    hi = np.concatenate([lp.upper, s_hi])
    c = np.concatenate([lp.objective, np.zeros(m)])
    return A, lp.rhs.copy(), lo, hi, c


def _result(tab: _Tableau, lp: LinearProgram, c) -> LpSolution:
    tab.factor()
    n0 = lp.A.shape[1]
    y, d = tab.duals(c)
    x = tab.x[:n0].copy()
    x = np.minimum(np.maximum(x, lp.lower), lp.upper)
    nb = ~tab.is_basic
    dual_obj = float(y @ tab.b + d[nb] @ tab.x[nb])
    return LpSolution(OPTIMAL, x, y.copy(), float(lp.objective @ x), dual_obj, tab.iterations,
                      basis=Basis(tab.basis.copy(), tab.at_upper.copy()), reduced_costs=d[:n0].copy())


def solve_lp(lp: LinearProgram, max_iter: int | None = None, warm: Basis | None = None) -> LpSolution:
    """Solve ``lp`` to an optimal basic solution, or report why not.

    ``warm`` is the basis of an optimal solution to an LP with the same rows
    and costs (bounds may differ); the dual simplex reoptimizes from it.
    """
    if (lp.upper < lp.lower - _FEAS_TOL).any():
        return LpSolution(INFEASIBLE, message="upper bound below lower bound")
    A, b, lo, hi, c = _standard_form(lp)
    m, n = A.shape
    if max_iter is None:
        max_iter = 50 * (m + n) + 1000
    if warm is not None:
        sol = _solve_warm(lp, A, b, lo, hi, c, warm, max_iter)
        if sol is not None:
            return sol
    if m == 0:
        if ((lp.objective < -_DJ_TOL) & ~np.isfinite(lp.upper)).any():
            return LpSolution(UNBOUNDED, message="unbounded below with no constraints")
        x = np.where(lp.objective < 0, lp.upper, lp.lower)
        return LpSolution(OPTIMAL, x, np.zeros(0), float(lp.objective @ x),
                          float(lp.objective @ x))

    # phase one: structurals at lower bound; slack or artificial absorbs each residual
    x0 = lo.copy()
    x0[n - m:] = 0.0
    resid = b - A @ x0
    basis = []
    art_cols = []
    for i, s in enumerate(lp.senses):
        if (s == LE and resid[i] >= 0) or (s == GE and resid[i] <= 0):
            basis.append(n - m + i)
        else:
            art_cols.append((i, 1.0 if resid[i] >= 0 else -1.0))
            basis.append(n + len(art_cols) - 1)
    n_art = len(art_cols)
    art = np.zeros((m, n_art))
    for a, (i, sgn) in enumerate(art_cols):
        art[i, a] = sgn
    A1 = np.hstack([A, art])
    lo1 = np.concatenate([lo, np.zeros(n_art)])
    hi1 = np.concatenate([hi, np.full(n_art, np.inf)])
    tab = _Tableau(A1, b, lo1, hi1, max_iter)
    tab.load(basis, np.zeros(n + n_art, dtype=bool))
    try:
        if n_art:
            c1 = np.zeros(n + n_art)
            c1[n:] = 1.0
            tab.primal(c1, np.ones(n + n_art, dtype=bool))
            infeas = float(tab.x[n:].sum())
            if infeas > _FEAS_TOL * max(1.0, float(np.abs(b).max())):
                return LpSolution(INFEASIBLE, iterations=tab.iterations,
                                  message=f"phase one residual {infeas:.3g}")
            _drive_out_artificials(tab, n)
        final = _Tableau(A, b, lo, hi, max_iter)
        final.iterations = tab.iterations
        final.load(tab.basis, tab.at_upper[:n])
        final.primal(c, np.ones(n, dtype=bool))
    except _Unbounded:
        return LpSolution(UNBOUNDED, iterations=tab.iterations, message="unbounded direction")
    except _IterLimit:
        return LpSolution(ITERATION_LIMIT, iterations=tab.iterations,
                          message=f"iteration limit {max_iter} reached")
    return _result(final, lp, c)


def _solve_warm(lp, A, b, lo, hi, c, warm: Basis, max_iter) -> LpSolution | None:
    n = A.shape[1]
    if warm.columns.shape != (A.shape[0],) or warm.at_upper.shape != (n,):
        return None
    at_upper = warm.at_upper & np.isfinite(hi)
    tab = _Tableau(A, b, lo, hi, max_iter)
    try:
        tab.load(warm.columns, at_upper)
    except np.linalg.LinAlgError:
        return None
    _, d = tab.duals(c)
    nb = ~tab.is_basic & (hi > lo)
    if ((~tab.at_upper & nb & (d < -_DJ_TOL)) | (tab.at_upper & nb & (d > _DJ_TOL))).any():
        return None
    try:
        tab.dual(c, np.ones(n, dtype=bool))
        tab.primal(c, np.ones(n, dtype=bool))
    except _Infeasible:
        return LpSolution(INFEASIBLE, iterations=tab.iterations, message="dual unbounded")
    except (_IterLimit, _Unbounded, np.linalg.LinAlgError):
        return None
    return _result(tab, lp, c)


def _drive_out_artificials(tab: _Tableau, n_struct: int):
    """Pivot zero-level artificials out of the basis. Slack columns span every
    row, so a replacement structural column always exists."""
    for r in range(tab.m):
        if tab.basis[r] < n_struct:
            continue
        row = tab.Binv[r] @ tab.A[:, :n_struct]
        row[tab.is_basic[:n_struct]] = 0.0
        cand = np.nonzero(np.abs(row) > 1e-9)[0]
        q = int(cand[np.argmax(np.abs(row[cand]))])
        col = tab.Binv @ tab.A[:, q]
        leaving = tab._pivot(r, q, col)
        tab.x[leaving] = 0.0
        tab.at_upper[q] = False
    tab.factor()
