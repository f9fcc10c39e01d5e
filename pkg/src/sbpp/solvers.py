"""Algorithm registry shared by the simulator and the CLI."""

from __future__ import annotations

from .colgen import PatternSet
from .cspsolve import MACHINES, UCAC, Budget, csp_place
from .gauss import Confidence
from .heuristics import HeuristicConfig, bf_nsigma, bf_ucac, biheu
from .model import Instance, Placement

ALGORITHMS = ("bf-nsigma", "bf-ucac", "biheu", "csp-ucac", "csp-mac")


def solve(algo: str, instance: Instance, conf: Confidence, budget: Budget = Budget(),
          pset: PatternSet | None = None, break_threshold: float | None = None) -> tuple[Placement, dict]:
    """Run one algorithm; returns the placement and solver details."""
    if algo == "bf-nsigma":
        return bf_nsigma(instance, conf), {}
    if algo == "bf-ucac":
        return bf_ucac(instance, conf), {}
    if algo == "biheu":
        return biheu(instance, HeuristicConfig(conf, break_threshold=break_threshold)), {}
    if algo in ("csp-ucac", "csp-mac"):
        objective = UCAC if algo == "csp-ucac" else MACHINES
        placement, sol = csp_place(instance, conf, objective, pset, budget)
        return placement, {"status": sol.status, "gap": sol.gap, "objective": sol.objective_value,
                           "nodes": sol.nodes, "patterns": len(sol.patterns), "solution": sol}
    raise ValueError(f"unknown algorithm {algo!r}; choose from {', '.join(ALGORITHMS)}")
