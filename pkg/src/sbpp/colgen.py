"""Pattern generation for the cutting-stock formulation.

A pattern is a per-machine vector of container counts, one entry per
service, that satisfies the chance constraint on its own. Patterns are
grown by column generation: solve the restricted master LP
``min sum(v) s.t. P v >= demand``, price a new column against its duals,
repeat until no column has negative reduced cost.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import gauss
from .gauss import Confidence
from .lp import GE, LinearProgram, solve_lp
from .model import MachineLoad, ServiceSpec

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-6
DEFAULT_MAX_COLUMNS = 500
ENUMERATE_LIMIT = 200


class PatternError(ValueError):
    pass


def pattern_ucac(counts, services: Sequence[ServiceSpec], conf: Confidence) -> float:
    load = MachineLoad.of(services, counts)
    return gauss.machine_ucac(load, conf)


@dataclass(frozen=True)
class Pattern:
    counts: tuple
    ucac: float

    @classmethod
    def build(cls, counts, services, conf) -> "Pattern":
        counts = tuple(int(c) for c in counts)
        return cls(counts, pattern_ucac(counts, services, conf))

    def covers(self, row) -> bool:
        return all(p >= z for p, z in zip(self.counts, row))

    def to_dict(self) -> dict:
        return {"counts": list(self.counts), "ucac": self.ucac}


@dataclass(frozen=True)
class PatternSet:
    patterns: tuple = ()
    converged: bool = True
    rmp_objectives: tuple = field(default=(), compare=False)

    def __post_init__(self):
        seen = set()
        uniq = []
        for p in self.patterns:
            if p.counts not in seen:
                seen.add(p.counts)
                uniq.append(p)
        object.__setattr__(self, "patterns", tuple(uniq))

    def __len__(self):
        return len(self.patterns)

    def __iter__(self):
        return iter(self.patterns)

    def __getitem__(self, i):
        return self.patterns[i]

    def matrix(self) -> np.ndarray:
        """K x L matrix, one column per pattern."""
        if not self.patterns:
            return np.zeros((0, 0), dtype=np.int64)
        return np.array([p.counts for p in self.patterns], dtype=np.int64).T

    def with_patterns(self, extra) -> "PatternSet":
        return PatternSet(self.patterns + tuple(extra), self.converged, self.rmp_objectives)

    def index_of(self, counts) -> int | None:
        counts = tuple(int(c) for c in counts)
        for i, p in enumerate(self.patterns):
            if p.counts == counts:
                return i
        return None


def is_feasible_pattern(counts, services, conf, capacity) -> bool:
    return pattern_ucac(counts, services, conf) <= capacity + gauss.FEAS_TOL


def initial_patterns(services: Sequence[ServiceSpec], conf: Confidence, capacity: float) -> PatternSet:
    """Diagonal start: pattern k holds as many containers of service k as fit."""
    k = len(services)
    pats = []
    for j, s in enumerate(services):
        w = gauss.max_fit_count(s, MachineLoad(), conf, capacity)
        if w == 0:
            raise PatternError(f"service {s.id!r} cannot fit a single container on an empty machine")
        counts = [0] * k
        counts[j] = w
        pats.append(Pattern.build(counts, services, conf))
    return PatternSet(tuple(pats))


def price_pattern(duals, services: Sequence[ServiceSpec], conf: Confidence,
                  capacity: float) -> tuple[tuple, float]:
    """Exact pricing: the feasible pattern maximizing ``duals . p``.

    Depth-first branch-and-bound over per-service counts. Services with
    positive dual are visited by decreasing dual/mean ratio, larger counts
    first. A node's bound is the smaller of (a) each remaining service at its
    own max fit and (b) a fractional knapsack on the mean budget
    ``V - C - D*sqrt(B)``, which every completion respects since the
    uncertainty term only grows.

    Returns ``(counts, 1 - duals . counts)``.
    """
    duals = np.asarray(duals, dtype=float)
    k = len(services)
    if duals.shape != (k,):
        raise ValueError(f"expected {k} duals, got shape {duals.shape}")
    if (duals < -1e-9).any():
        raise ValueError("duals must be non-negative")
    order = [j for j in range(k) if duals[j] > 0]
    order.sort(key=lambda j: (-duals[j] / services[j].mean, j))
    d = conf.d_alpha
    best_val = 0.0
    best = [0] * k
    counts = [0] * k

    def max_fit(j, c, b):
        return gauss.max_fit_count(services[j], MachineLoad(c, b), conf, capacity)

    def bound(pos, c, b):
        budget = capacity - c - (d * math.sqrt(b) if b > 0 else 0.0)
        ub_caps = 0.0
        ub_frac = 0.0
        room = budget
        for j in order[pos:]:
            w = max_fit(j, c, b)
            ub_caps += duals[j] * w
            if room > 0 and w > 0:
                take = min(float(w), room / services[j].mean)
                ub_frac += duals[j] * take
                room -= take * services[j].mean
        return min(ub_caps, ub_frac)

    def dfs(pos, c, b, val):
        nonlocal best_val, best
        if val > best_val + 1e-12:
            best_val = val
            best = counts.copy()
        if pos == len(order):
            return
        if val + bound(pos, c, b) <= best_val + 1e-12:
            return
        j = order[pos]
        s = services[j]
        for w in range(max_fit(j, c, b), -1, -1):
            counts[j] = w
            dfs(pos + 1, c + w * s.mean, b + w * s.uncertainty, val + duals[j] * w)
        counts[j] = 0

    dfs(0, 0.0, 0.0, 0.0)
    return tuple(best), 1.0 - best_val


def solve_rmp(pset: PatternSet, demands):
    """Restricted master LP over the current patterns."""
    P = pset.matrix().astype(float)
    demands = np.asarray(demands, dtype=float)
    lp = LinearProgram(np.ones(P.shape[1]), P, (GE,) * P.shape[0], demands)
    return solve_lp(lp)


def generate_patterns(services: Sequence[ServiceSpec], conf: Confidence, capacity: float,
                      demands, tol: float = DEFAULT_TOL,
                      max_columns: int = DEFAULT_MAX_COLUMNS) -> PatternSet:
    """Column generation from the diagonal pattern set.

    Stops when pricing finds no reduced cost below ``-tol``. If
    ``max_columns`` new columns have been added first, the partial set is
    returned with ``converged=False`` and a warning is emitted.
    """
    pset = initial_patterns(services, conf, capacity)
    demands = np.asarray(demands, dtype=float)
    objectives = []
    added = 0
    while True:
        sol = solve_rmp(pset, demands)
        if not sol.ok:
            raise RuntimeError(f"restricted master LP failed: {sol.status} {sol.message}")
        objectives.append(sol.objective_value)
        duals = np.maximum(sol.dual, 0.0)
        counts, rc = price_pattern(duals, services, conf, capacity)
        if rc >= -tol:
            return PatternSet(pset.patterns, True, tuple(objectives))
        if pset.index_of(counts) is not None:
            log.warning("pricing returned an existing column (rc=%.3g); stopping", rc)
            return PatternSet(pset.patterns, True, tuple(objectives))
        if added >= max_columns:
            warnings.warn(f"column generation stopped at the {max_columns}-column cap "
                          f"(last reduced cost {rc:.3g})", RuntimeWarning, stacklevel=2)
            return PatternSet(pset.patterns, False, tuple(objectives))
        pset = pset.with_patterns([Pattern.build(counts, services, conf)])
        added += 1
        log.debug("column %d: %s rc=%.6f rmp=%.6f", added, counts, rc, sol.objective_value)


def extend_greedily(row, services, conf, capacity) -> tuple:
    """Fill a machine holding ``row`` as far as it goes, services by
    decreasing variance/mean ratio, each taking its max fit."""
    counts = [int(c) for c in row]
    load = MachineLoad.of(services, counts)
    order = sorted(range(len(services)),
                   key=lambda j: (-services[j].uncertainty / services[j].mean, j))
    for j in order:
        w = gauss.max_fit_count(services[j], load, conf, capacity)
        if w:
            counts[j] += w
            load = load.add(services[j], w)
    return tuple(counts)


def cover_patterns(pset: PatternSet, cluster, services, conf) -> PatternSet:
    """Ensure every nonempty machine's current row is dominated by some pattern.

    For an uncovered row ``z`` both ``z`` itself and its greedy maximal
    extension are added.
    """
    extra = []
    current = list(pset.patterns)
    for row in cluster.initial:
        if not row.any():
            continue
        if any(p.covers(row) for p in current):
            continue
        for counts in (tuple(int(c) for c in row), extend_greedily(row, services, conf,
                                                                   cluster.capacity)):
            pat = Pattern.build(counts, services, conf)
            extra.append(pat)
            current.append(pat)
    if not extra:
        return pset
    return pset.with_patterns(extra)


def enumerate_patterns(services, conf, capacity, include_zero: bool = False,
                       limit: int | None = None) -> list[tuple] | None:
    """Every feasible count vector (exponential; small instances only).

    Returns None as soon as more than ``limit`` vectors are found.
    """
    k = len(services)
    out = []
    counts = [0] * k

    class _TooMany(Exception):
        pass

    def rec(j, c, b):
        if j == k:
            if include_zero or any(counts):
                out.append(tuple(counts))
                if limit is not None and len(out) > limit:
                    raise _TooMany
            return
        w_max = gauss.max_fit_count(services[j], MachineLoad(c, b), conf, capacity)
        for w in range(w_max + 1):
            counts[j] = w
            rec(j + 1, c + w * services[j].mean, b + w * services[j].uncertainty)
        counts[j] = 0

    try:
        rec(0, 0.0, 0.0)
    except _TooMany:
        return None
    return out


def candidate_patterns(services, conf, capacity, demands,
                       enumerate_limit: int = ENUMERATE_LIMIT) -> PatternSet:
    """Pattern set for the integer program.

    Column generation only guarantees patterns for the LP optimum; when the
    whole feasible space has at most ``enumerate_limit`` vectors it is used
    instead, which makes the integer program exact.
    """
    full = enumerate_patterns(services, conf, capacity, limit=enumerate_limit)
    if full is not None:
        initial_patterns(services, conf, capacity)  # same error contract as generation
        return PatternSet(tuple(Pattern.build(c, services, conf) for c in full))
    return generate_patterns(services, conf, capacity, demands)


# -- pattern cache -----------------------------------------------------------

def fingerprint(services, capacity: float, alpha: float) -> str:
    payload = json.dumps({"capacity": capacity, "alpha": alpha,
                          "services": [s.to_dict() for s in services]}, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def save_patterns(path, pset: PatternSet, services, capacity: float, alpha: float) -> None:
    doc = {
        "header": {
            "capacity": capacity,
            "alpha": alpha,
            "services": [s.to_dict() for s in services],
            "fingerprint": fingerprint(services, capacity, alpha),
            "converged": pset.converged,
        },
        "patterns": [p.to_dict() for p in pset],
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_patterns(path, services, capacity: float, alpha: float) -> PatternSet | None:
    """Read a cached set; None when missing or generated for other parameters."""
    path = Path(path)
    if not path.exists():
        return None
    try:
        doc = json.loads(path.read_text())
        header = doc["header"]
    except (OSError, ValueError, KeyError):
        return None
    if header.get("fingerprint") != fingerprint(services, capacity, alpha):
        return None
    pats = tuple(Pattern(tuple(p["counts"]), float(p["ucac"])) for p in doc["patterns"])
    return PatternSet(pats, bool(header.get("converged", True)))


def cached_generate(cache_dir, services, conf, capacity, demands, **kw) -> tuple[PatternSet, bool]:
    """Generate patterns through a per-fingerprint cache file.

    Returns ``(pattern_set, cache_hit)``.
    """
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    path = cache_dir / f"patterns-{fingerprint(services, capacity, conf.alpha)}.json"
    hit = load_patterns(path, services, capacity, conf.alpha)
    if hit is not None:
        return hit, True
    pset = generate_patterns(services, conf, capacity, demands, **kw)
    save_patterns(path, pset, services, capacity, conf.alpha)
    return pset, False
