"""Generalized cutting-stock model: pick one covering pattern per machine.

Every nonempty machine must take a pattern that dominates its current
counts; empty machines take at most one pattern. Pattern totals must cover
the requested containers plus those already hosted. The objective is the
summed pattern UCaC (``"ucac"``) or the number of patterns used
(``"machines"``).

Machines with identical current rows are interchangeable, so the integer
program is posed over machine classes: ``y[c, j]`` counts machines of class
``c`` assigned pattern ``j``. This is equivalent to the per-machine binary
model and is disaggregated back to machines in index order.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .colgen import Pattern, PatternSet, candidate_patterns, cover_patterns
from .gauss import Confidence
from .heuristics import HeuristicConfig, biheu
from .lp import EQ, GE, LE, LinearProgram, solve_lp
from .model import CapacityExhausted, Instance, Placement

log = logging.getLogger(__name__)

UCAC = "ucac"
MACHINES = "machines"

OPTIMAL = "optimal"
FEASIBLE_WITH_GAP = "feasible_with_gap"
INFEASIBLE = "infeasible"
TIME_LIMIT = "time_limit"

GAP_TOL = 1e-6
_INT_TOL = 1e-6
RESTART_EVERY = 1000


class UncoveredMachine(ValueError):
    pass


@dataclass(frozen=True)
class Budget:
    time_limit: float = 60.0
    node_limit: int = 1_000_000


@dataclass
class CspSolution:
    status: str
    assignment: np.ndarray | None  # pattern index per machine, -1 when unused
    objective_value: float
    gap: float
    patterns: PatternSet
    nodes: int = 0
    bound: float = float("nan")

    @property
    def w(self) -> np.ndarray:
        """Dense machine x pattern 0/1 matrix."""
        n = 0 if self.assignment is None else len(self.assignment)
        out = np.zeros((n, len(self.patterns)), dtype=np.int64)
        if self.assignment is not None:
            for i, j in enumerate(self.assignment):
                if j >= 0:
                    out[i, j] = 1
        return out

    @property
    def uses(self) -> np.ndarray:
        return self.w.sum(axis=0)

    def to_dict(self, placement: Placement | None = None) -> dict:
        pairs = [] if self.assignment is None else [
            [int(i), int(j)] for i, j in enumerate(self.assignment) if j >= 0]
        doc = {"status": self.status, "objective": self.objective_value, "gap": self.gap,
               "w": pairs, "patterns": [list(p.counts) for p in self.patterns]}
        if placement is not None:
            doc["placement"] = placement.to_dict()
        return doc


@dataclass
class _Model:
    costs: np.ndarray
    lp_A: np.ndarray
    senses: tuple
    rhs: np.ndarray
    var_class: np.ndarray
    var_pattern: np.ndarray
    classes: list  # (row tuple, machine indices)
    integral_costs: bool


def _build_model(instance: Instance, pset: PatternSet, objective: str) -> _Model:
    z = instance.cluster.initial
    k = z.shape[1]
    groups: dict[tuple, list[int]] = {}
    for i, row in enumerate(z):
        groups.setdefault(tuple(int(v) for v in row), []).append(i)
    zero = (0,) * k
    # nonempty classes first (equalities), empty class last
    classes = [(row, idx) for row, idx in groups.items() if row != zero]
    if zero in groups:
        classes.append((zero, groups[zero]))
    var_class, var_pattern = [], []
    for c, (row, _) in enumerate(classes):
        eligible = [j for j, p in enumerate(pset) if any(p.counts) and p.covers(row)]
        if row != zero and not eligible:
            raise UncoveredMachine(f"machines {classes[c][1]} (row {list(row)}) have no covering pattern")
        var_class.extend([c] * len(eligible))
        var_pattern.extend(eligible)
    var_class = np.array(var_class, dtype=np.int64)
    var_pattern = np.array(var_pattern, dtype=np.int64)
    P = pset.matrix()
    nvar = len(var_pattern)
    if objective == UCAC:
        costs = np.array([pset[j].ucac for j in var_pattern], dtype=float)
    elif objective == MACHINES:
        costs = np.ones(nvar)
    else:
        raise ValueError(f"unknown objective {objective!r}")
    rows, senses, rhs = [], [], []
    need = instance.request.demands + z.sum(axis=0)
    for kk in range(k):
        rows.append(P[kk, var_pattern].astype(float) if nvar else np.zeros(0))
        senses.append(GE)
        rhs.append(float(need[kk]))
    for c, (row, idx) in enumerate(classes):
        rows.append((var_class == c).astype(float))
        senses.append(LE if row == zero else EQ)
        rhs.append(float(len(idx)))
    A = np.array(rows, dtype=float).reshape(len(rows), nvar)
    return _Model(costs, A, tuple(senses), np.array(rhs), var_class, var_pattern, classes,
                  objective == MACHINES)


def _warm_start(instance: Instance, pset: PatternSet, conf: Confidence):
    """BiHeu's placement expressed as one pattern per used machine.

    Returns the (possibly enlarged) pattern set and the per-machine pattern
    indices, or ``(pset, None)`` when BiHeu finds no placement.
    """
    try:
        x = biheu(instance, HeuristicConfig(conf)).alloc
    except CapacityExhausted:
        return pset, None
    rows = instance.cluster.initial + x
    extra = [Pattern.build(r, instance.services, conf) for r in rows if r.any()]
    pset = pset.with_patterns(extra)
    lookup = {p.counts: j for j, p in enumerate(pset)}
    assign = np.array([lookup[tuple(int(v) for v in r)] if r.any() else -1 for r in rows],
                      dtype=np.int64)
    return pset, assign


def _assignment_to_y(model: _Model, assign) -> np.ndarray:
    y = np.zeros(len(model.var_pattern))
    pos = {(int(c), int(j)): v for v, (c, j) in enumerate(zip(model.var_class, model.var_pattern))}
    for c, (_, idx) in enumerate(model.classes):
        for i in idx:
            if assign[i] >= 0:
                y[pos[(c, int(assign[i]))]] += 1
    return y


def _y_to_assignment(model: _Model, y, n_machines: int) -> np.ndarray:
    assign = np.full(n_machines, -1, dtype=np.int64)
    yi = np.rint(y).astype(np.int64)
    for c, (_, idx) in enumerate(model.classes):
        slots = iter(sorted(idx))
        for v in np.nonzero((model.var_class == c) & (yi > 0))[0]:
            for _ in range(yi[v]):
                assign[next(slots)] = model.var_pattern[v]
    return assign


@dataclass(order=True)
class _Node:
    bound: float
    seq: int
    lower: np.ndarray = field(compare=False)
    upper: np.ndarray = field(compare=False)
    basis: object = field(default=None, compare=False)


def _branch_and_bound(model: _Model, budget: Budget, incumbent_y, incumbent_val):
    """Depth-first LP-based branch-and-bound with periodic best-bound restarts.

    Returns ``(y, value, global_bound, nodes, exhausted, root_infeasible)``.
    """
    nvar = len(model.costs)
    t0 = time.monotonic()
    best_y, best_val = incumbent_y, incumbent_val

    def prunable(bound):
        if best_y is None or not math.isfinite(bound):
            return False
        if model.integral_costs:
            return math.ceil(bound - 1e-6) >= best_val - 1e-9
        return bound >= best_val - 1e-9

    base = LinearProgram(model.costs, model.lp_A, model.senses, model.rhs)
    root = _Node(-math.inf, 0, np.zeros(nvar), np.full(nvar, np.inf))
    open_nodes = [root]
    nodes = 0
    seq = 1
    exhausted = False
    root_infeasible = False
    while open_nodes:
        if nodes >= budget.node_limit or time.monotonic() - t0 > budget.time_limit:
            exhausted = True
            break
        if nodes and nodes % RESTART_EVERY == 0:
            k = min(range(len(open_nodes)), key=lambda t: (open_nodes[t].bound, open_nodes[t].seq))
            open_nodes.append(open_nodes.pop(k))
        node = open_nodes.pop()
        if prunable(node.bound):
            continue
        nodes += 1
        sol = solve_lp(base.with_bounds(node.lower, node.upper), warm=node.basis)
        if not sol.ok:
            if node is root and sol.status == "infeasible":
                root_infeasible = True
            continue
        val = sol.objective_value
        if prunable(val):
            continue
        y = sol.primal
        frac = np.abs(y - np.rint(y))
        if frac.max() <= _INT_TOL:
            y_int = np.rint(y)
            v_int = float(model.costs @ y_int)
            if best_y is None or v_int < best_val - 1e-9:
                best_y, best_val = y_int, v_int
            continue
        # most fractional first; lowest variable index (class-major) on ties
        score = np.abs((y - np.floor(y)) - 0.5)
        score[frac <= _INT_TOL] = np.inf
        v = int(np.argmin(score))
        lo_ub = node.upper.copy()
        lo_ub[v] = math.floor(y[v])
        hi_lb = node.lower.copy()
        hi_lb[v] = math.ceil(y[v])
        down = _Node(val, seq, node.lower, lo_ub, sol.basis)
        up = _Node(val, seq + 1, hi_lb, node.upper, sol.basis)
        seq += 2
        if y[v] - math.floor(y[v]) >= 0.5:
            open_nodes.extend([down, up])
        else:
            open_nodes.extend([up, down])
    if exhausted:
        bound = min((nd.bound for nd in open_nodes), default=-math.inf)
        if best_y is not None:
            bound = min(bound, best_val)
    else:
        bound = best_val if best_y is not None else math.inf
    return best_y, best_val, bound, nodes, exhausted, root_infeasible


def solve_csp(instance: Instance, pset: PatternSet, objective: str, conf: Confidence,
              budget: Budget = Budget(), warm_start: bool = True) -> CspSolution:
    """Solve the generalized cutting-stock program over ``pset``.

    With ``warm_start`` the BiHeu placement is added to the pattern set and
    seeds the incumbent. Raises UncoveredMachine when a nonempty machine has
    no dominating pattern and CapacityExhausted when no assignment fits in
    the cluster.
    """
    n = instance.cluster.machine_count
    if instance.request.total == 0 and not instance.cluster.initial.any():
        return CspSolution(OPTIMAL, np.full(n, -1, dtype=np.int64), 0.0, 0.0, pset)
    inc_assign = None
    if warm_start:
        pset, inc_assign = _warm_start(instance, pset, conf)
    model = _build_model(instance, pset, objective)
    inc_y = inc_val = None
    if inc_assign is not None:
        inc_y = _assignment_to_y(model, inc_assign)
        inc_val = float(model.costs @ inc_y)
    y, val, bound, nodes, exhausted, root_infeasible = _branch_and_bound(model, budget, inc_y, inc_val)
    if y is None:
        if exhausted:
            return CspSolution(TIME_LIMIT, None, math.nan, math.inf, pset, nodes)
        raise CapacityExhausted(
            "cutting-stock model has no feasible assignment within the cluster"
            + (" (LP relaxation infeasible)" if root_infeasible else ""))
    gap = max(0.0, (val - bound) / max(1.0, abs(val))) if math.isfinite(bound) else math.inf
    if not exhausted or gap <= GAP_TOL:
        status = OPTIMAL
    else:
        status = TIME_LIMIT
    assign = _y_to_assignment(model, y, n)
    return CspSolution(status, assign, val, gap, pset, nodes, bound)


def placement_from_patterns(assignment, pset: PatternSet, cluster, services, conf: Confidence,
                            demands) -> Placement:
    """Turn a pattern-per-machine choice into container allocations.

    Machine ``i`` covered by pattern ``p`` receives ``p - z_i``. Pattern
    totals may exceed demand; surplus containers are removed one at a time
    from whichever machine's removal lowers cluster UCaC the most (lowest
    machine, then service, index on ties). Removing containers never breaks
    the chance constraint.
    """
    z = cluster.initial
    n, k = z.shape
    x = np.zeros((n, k), dtype=np.int64)
    for i, j in enumerate(assignment):
        if j < 0:
            continue
        diff = np.array(pset[int(j)].counts, dtype=np.int64) - z[i]
        if (diff < 0).any():
            raise ValueError(f"pattern {j} does not cover machine {i}")
        x[i] = diff
    demands = np.asarray(demands, dtype=np.int64)
    surplus = x.sum(axis=0) - demands
    if (surplus < 0).any():
        raise ValueError(f"patterns fall short of demand by {(-surplus[surplus < 0]).tolist()}")
    if not surplus.any():
        return Placement(x)
    means = np.array([s.mean for s in services])
    variances = np.array([s.uncertainty for s in services])
    d = conf.d_alpha
    total = z + x
    sm = total @ means
    su = total @ variances
    while surplus.any():
        best = None
        for kk in np.nonzero(surplus > 0)[0]:
            hosts = np.nonzero(x[:, kk] > 0)[0]
            before = sm[hosts] + d * np.sqrt(np.maximum(su[hosts], 0.0))
            after_su = np.maximum(su[hosts] - variances[kk], 0.0)
            after = sm[hosts] - means[kk] + d * np.sqrt(after_su)
            gain = before - after
            t = int(np.argmax(gain))
            cand = (-gain[t], int(hosts[t]), int(kk))
            if best is None or cand < best:
                best = cand
        _, i, kk = best
        x[i, kk] -= 1
        sm[i] -= means[kk]
        su[i] -= variances[kk]
        surplus[kk] -= 1
    return Placement(x)


def csp_place(instance: Instance, conf: Confidence, objective: str = UCAC,
              pset: PatternSet | None = None, budget: Budget = Budget(),
              warm_start: bool = True) -> tuple[Placement, CspSolution]:
    """Full cutting-stock pipeline: patterns, cover, solve, map back.

    Without ``pset`` the patterns come from candidate_patterns.
    """
    services = instance.services
    cluster = instance.cluster
    if pset is None:
        need = instance.request.demands + cluster.initial.sum(axis=0)
        pset = candidate_patterns(services, conf, cluster.capacity, need)
    pset = cover_patterns(pset, cluster, services, conf)
    sol = solve_csp(instance, pset, objective, conf, budget, warm_start)
    if sol.assignment is None:
        raise RuntimeError(f"cutting-stock solve ended with {sol.status} and no incumbent")
    placement = placement_from_patterns(sol.assignment, sol.patterns, cluster, services, conf,
                                        instance.request.demands)
    return placement, sol
