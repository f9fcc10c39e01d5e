"""Greedy allocation heuristics: online Best-Fit under UCaC, the n-sigma
Best-Fit baseline, and the offline bi-level heuristic."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import gauss
from .gauss import Confidence
from .model import CapacityExhausted, Instance, MachineLoad, Placement


@dataclass(frozen=True)
class HeuristicConfig:
    conf: Confidence
    tie_break: str = "lowest-index"
    # None means min_j mean_j: below that no container fits by mean alone.
    break_threshold: float | None = None

    def __post_init__(self):
        if self.tie_break != "lowest-index":
            raise ValueError(f"unsupported tie-break rule {self.tie_break!r}")
        if self.break_threshold is not None and self.break_threshold < 0:
            raise ValueError("break_threshold must be non-negative")


def service_order(instance: Instance) -> list[int]:
    """Services by non-increasing variance/mean ratio, index order on ties."""
    ratio = instance.variances / instance.means
    return sorted(range(len(ratio)), key=lambda j: (-ratio[j], j))


def container_sequence(instance: Instance) -> list[int]:
    """Flatten the batch into an arrival sequence of service indices."""
    seq = []
    for j in service_order(instance):
        seq.extend([j] * int(instance.request.demands[j]))
    return seq


def bf_ucac(instance: Instance, conf: Confidence, audit: list | None = None) -> Placement:
    """Best-Fit on UCaC: each container goes to the feasible machine whose
    UCaC after placement is largest.

    Empty machines always have the smallest post-placement UCaC, so a new
    machine is opened only when no used machine fits. When ``audit`` is a
    list, one record per placement step is appended to it.
    """
    cluster = instance.cluster
    n, k = cluster.initial.shape
    means, variances = instance.means, instance.variances
    sm = cluster.initial @ means
    su = cluster.initial @ variances
    alloc = np.zeros((n, k), dtype=np.int64)
    cap = cluster.capacity + gauss.FEAS_TOL
    d = conf.d_alpha
    for step, j in enumerate(container_sequence(instance)):
        post = sm + means[j] + d * np.sqrt(su + variances[j])
        ok = post <= cap
        if not ok.any():
            remaining = instance.request.demands - alloc.sum(axis=0)
            raise CapacityExhausted(
                f"bf-ucac: no machine can host a container of service {j} "
                f"(step {step}, {int(remaining.sum())} containers unplaced)", remaining)
        score = np.where(ok, post, -np.inf)
        i = int(np.argmax(score))
        if audit is not None:
            audit.append({"step": step, "service": j, "machine": i, "post_ucac": float(post[i]),
                          "feasible": np.nonzero(ok)[0].tolist(),
                          "feasible_post": post[ok].tolist()})
        alloc[i, j] += 1
        sm[i] += means[j]
        su[i] += variances[j]
    return Placement(alloc)


def nsigma_sizes(instance: Instance, conf: Confidence) -> np.ndarray:
    return instance.means + conf.d_alpha * np.sqrt(instance.variances)


def bf_nsigma(instance: Instance, conf: Confidence) -> Placement:
    """Deterministic Best-Fit with container size ``mean + n * std``,
    ``n = D(alpha)``: pick the feasible machine with the least remaining
    capacity after placement."""
    cluster = instance.cluster
    n, k = cluster.initial.shape
    sizes = nsigma_sizes(instance, conf)
    load = cluster.initial @ sizes
    alloc = np.zeros((n, k), dtype=np.int64)
    for step, j in enumerate(container_sequence(instance)):
        rest = cluster.capacity - (load + sizes[j])
        ok = rest >= -gauss.FEAS_TOL
        if not ok.any():
            remaining = instance.request.demands - alloc.sum(axis=0)
            raise CapacityExhausted(
                f"bf-nsigma: no machine can host a container of service {j} "
                f"(step {step}, {int(remaining.sum())} containers unplaced)", remaining)
        i = int(np.argmin(np.where(ok, rest, np.inf)))
        alloc[i, j] += 1
        load[i] += sizes[j]
    return Placement(alloc)


def machine_order(instance: Instance) -> list[int]:
    """Machines by non-increasing cumulative variance, index order on ties."""
    b = instance.cluster.initial @ instance.variances
    return sorted(range(len(b)), key=lambda i: (-b[i], i))


def biheu(instance: Instance, config: HeuristicConfig) -> Placement:
    """Bi-level heuristic: machines sorted by cumulative uncertainty, services
    by normalized uncertainty; each (machine, service) pair takes as many
    containers as still fit, capped by the remaining demand."""
    conf = config.conf
    cluster = instance.cluster
    n, k = cluster.initial.shape
    services = instance.services
    threshold = config.break_threshold
    if threshold is None:
        threshold = float(instance.means.min()) if k else 0.0
    remaining = np.array(instance.request.demands, dtype=np.int64)
    alloc = np.zeros((n, k), dtype=np.int64)
    order = service_order(instance)
    for i in machine_order(instance):
        if remaining.sum() == 0:
            break
        load = MachineLoad.of(services, cluster.initial[i])
        for j in order:
            if remaining[j] > 0:
                w = gauss.max_fit_count(services[j], load, conf, cluster.capacity,
                                        cap=int(remaining[j]))
                if w:
                    alloc[i, j] = w
                    load = load.add(services[j], w)
                    remaining[j] -= w
            if cluster.capacity - load.sum_mean <= threshold:
                break
    if remaining.sum() > 0:
        raise CapacityExhausted(
            f"biheu: {int(remaining.sum())} containers left after visiting all machines", remaining)
    return Placement(alloc)
