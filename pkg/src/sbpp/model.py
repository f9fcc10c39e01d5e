"""Domain types, instance validation, and layout algebra.

Services are indexed ``0..K-1`` in declaration order and every layout is a
dense ``N x K`` integer matrix (rows = machines). All value types are frozen;
their numpy payloads are marked read-only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import gauss
from .gauss import Confidence


class InstanceError(ValueError):
    """Raised when an instance violates one or more invariants.

    ``problems`` lists every violation found, not just the first.
    """

    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class CapacityExhausted(RuntimeError):
    """Demand cannot be placed even using every machine in the cluster."""

    def __init__(self, message: str, remaining=None):
        super().__init__(message)
        self.remaining = None if remaining is None else np.asarray(remaining)


def _frozen_int_matrix(data, ncols: int | None = None) -> np.ndarray:
    arr = np.array(data, dtype=np.int64)
    if arr.ndim == 1 and arr.size == 0:
        arr = arr.reshape(0, ncols or 0)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


def _frozen_int_vector(data) -> np.ndarray:
    arr = np.array(data, dtype=np.int64).reshape(-1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ServiceSpec:
    id: str
    mean: float
    uncertainty: float  # variance under the Gaussian model
    limit: float

    def problems(self) -> list[str]:
        out = []
        for name in ("mean", "uncertainty", "limit"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not math.isfinite(v):
                out.append(f"service {self.id!r}: {name} must be a finite number")
        if out:
            return out
        if self.mean <= 0:
            out.append(f"service {self.id!r}: mean must be positive")
        if self.uncertainty < 0:
            out.append(f"service {self.id!r}: uncertainty must be non-negative")
        if self.limit <= self.mean:
            out.append(f"service {self.id!r}: limit must exceed mean")
        return out

    @property
    def std(self) -> float:
        return math.sqrt(self.uncertainty)

    def to_dict(self) -> dict:
        return {"id": self.id, "mean": self.mean, "variance": self.uncertainty, "limit": self.limit}

    @classmethod
    def from_dict(cls, d: dict) -> "ServiceSpec":
        return cls(id=str(d["id"]), mean=float(d["mean"]), uncertainty=float(d["variance"]),
                   limit=float(d["limit"]))


@dataclass(frozen=True)
class MachineLoad:
    sum_mean: float = 0.0
    sum_uncertainty: float = 0.0

    @classmethod
    def of(cls, services: Sequence[ServiceSpec], counts) -> "MachineLoad":
        counts = np.asarray(counts, dtype=float)
        return cls(float(counts @ np.array([s.mean for s in services])),
                   float(counts @ np.array([s.uncertainty for s in services])))

    def add(self, service: ServiceSpec, count: int = 1) -> "MachineLoad":
        return MachineLoad(self.sum_mean + count * service.mean,
                           self.sum_uncertainty + count * service.uncertainty)


@dataclass(frozen=True, eq=False)
class ClusterState:
    capacity: float
    initial: np.ndarray  # N x K, containers already on each machine

    def __post_init__(self):
        object.__setattr__(self, "initial", _frozen_int_matrix(self.initial))

    @classmethod
    def empty(cls, capacity: float, machine_count: int, service_count: int) -> "ClusterState":
        return cls(capacity, np.zeros((machine_count, service_count), dtype=np.int64))

    @property
    def machine_count(self) -> int:
        return self.initial.shape[0]

    @property
    def service_count(self) -> int:
        return self.initial.shape[1]

    def __eq__(self, other):
        if not isinstance(other, ClusterState):
            return NotImplemented
        return self.capacity == other.capacity and np.array_equal(self.initial, other.initial)

    def to_dict(self) -> dict:
        return {"capacity": self.capacity, "initial": self.initial.tolist()}


@dataclass(frozen=True, eq=False)
class BatchRequest:
    demands: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "demands", _frozen_int_vector(self.demands))

    @property
    def total(self) -> int:
        return int(self.demands.sum())

    def __eq__(self, other):
        if not isinstance(other, BatchRequest):
            return NotImplemented
        return np.array_equal(self.demands, other.demands)

    def to_list(self) -> list[int]:
        return self.demands.tolist()


@dataclass(frozen=True, eq=False)
class Placement:
    alloc: np.ndarray  # N x K, containers newly placed on each machine

    def __post_init__(self):
        object.__setattr__(self, "alloc", _frozen_int_matrix(self.alloc))

    @classmethod
    def zeros(cls, machine_count: int, service_count: int) -> "Placement":
        return cls(np.zeros((machine_count, service_count), dtype=np.int64))

    def __eq__(self, other):
        if not isinstance(other, Placement):
            return NotImplemented
        return np.array_equal(self.alloc, other.alloc)

    def column_sums(self) -> np.ndarray:
        return self.alloc.sum(axis=0)

    def to_dict(self) -> dict:
        return {"alloc": self.alloc.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Placement":
        return cls(d["alloc"])


@dataclass(frozen=True)
class Instance:
    services: tuple
    cluster: ClusterState
    request: BatchRequest

    @property
    def means(self) -> np.ndarray:
        return np.array([s.mean for s in self.services], dtype=float)

    @property
    def variances(self) -> np.ndarray:
        return np.array([s.uncertainty for s in self.services], dtype=float)

    def to_dict(self) -> dict:
        return {
            "capacity": self.cluster.capacity,
            "services": [s.to_dict() for s in self.services],
            "initial": self.cluster.initial.tolist(),
            "request": self.request.to_list(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Instance":
        """Decode the canonical JSON form; raises InstanceError with field paths."""
        problems = []
        for key in ("capacity", "services", "initial", "request"):
            if key not in d:
                problems.append(f"$.{key}: missing field")
        if problems:
            raise InstanceError(problems)
        services = []
        if not isinstance(d["services"], list):
            raise InstanceError(["$.services: expected an array"])
        for i, s in enumerate(d["services"]):
            try:
                services.append(ServiceSpec.from_dict(s))
            except KeyError as exc:
                problems.append(f"$.services[{i}]: missing field {exc.args[0]!r}")
            except (TypeError, ValueError) as exc:
                problems.append(f"$.services[{i}]: {exc}")
        try:
            capacity = float(d["capacity"])
        except (TypeError, ValueError):
            problems.append("$.capacity: expected a number")
            capacity = float("nan")
        k = len(d["services"])
        try:
            initial = _frozen_int_matrix(d["initial"], ncols=k)
        except (TypeError, ValueError) as exc:
            problems.append(f"$.initial: {exc}")
            initial = None
        try:
            request = BatchRequest(d["request"])
        except (TypeError, ValueError) as exc:
            problems.append(f"$.request: {exc}")
            request = None
        if problems:
            raise InstanceError(problems)
        return cls(tuple(services), ClusterState(capacity, initial), request)


def validate_instance(services: Sequence[ServiceSpec], cluster: ClusterState,
                      request: BatchRequest, conf: Confidence | None = None) -> Instance:
    """Check every invariant and return the instance, or raise InstanceError
    listing all violations.

    The initial-layout feasibility check needs a confidence level; it is
    skipped when ``conf`` is None.
    """
    problems: list[str] = []
    ids = [s.id for s in services]
    if len(set(ids)) != len(ids):
        problems.append("service ids must be unique")
    for s in services:
        problems.extend(s.problems())
    k = len(services)
    if not math.isfinite(cluster.capacity) or cluster.capacity <= 0:
        problems.append("capacity must be a positive finite number")
    if cluster.machine_count < 1:
        problems.append("cluster must have at least one machine")
    if cluster.initial.shape[1] != k:
        problems.append(f"initial layout has {cluster.initial.shape[1]} columns, expected {k}")
    if (cluster.initial < 0).any():
        for i, j in zip(*np.nonzero(cluster.initial < 0)):
            problems.append(f"initial[{i}][{j}] is negative")
    if request.demands.shape[0] != k:
        problems.append(f"request has {request.demands.shape[0]} entries, expected {k}")
    if (request.demands < 0).any():
        for j in np.nonzero(request.demands < 0)[0]:
            problems.append(f"request[{j}] is negative")
    if conf is not None and not problems:
        for i in range(cluster.machine_count):
            load = MachineLoad.of(services, cluster.initial[i])
            if not gauss.feasible(load, conf, cluster.capacity):
                problems.append(
                    f"machine {i} initially infeasible: UCaC {gauss.machine_ucac(load, conf):.6g}"
                    f" > capacity {cluster.capacity:.6g}")
    if problems:
        raise InstanceError(problems)
    return Instance(tuple(services), cluster, request)


def check_placement(instance: Instance, placement: Placement, conf: Confidence) -> list[str]:
    """Return the violated Placement invariants (empty list when valid)."""
    problems = []
    alloc = placement.alloc
    if alloc.shape != instance.cluster.initial.shape:
        return [f"placement shape {alloc.shape} != cluster shape {instance.cluster.initial.shape}"]
    if (alloc < 0).any():
        problems.append("placement has negative entries")
    if not np.array_equal(alloc.sum(axis=0), instance.request.demands):
        problems.append(f"column sums {alloc.sum(axis=0).tolist()} != demands "
                        f"{instance.request.to_list()}")
    total = instance.cluster.initial + alloc
    u = gauss.ucac_rows(instance.means, instance.variances, total, conf.d_alpha)
    for i in np.nonzero(u > instance.cluster.capacity + gauss.FEAS_TOL)[0]:
        problems.append(f"machine {i} infeasible: UCaC {u[i]:.6g}")
    return problems


def apply_placement(cluster: ClusterState, placement: Placement) -> ClusterState:
    if placement.alloc.shape != cluster.initial.shape:
        raise ValueError(f"placement shape {placement.alloc.shape} != cluster shape "
                         f"{cluster.initial.shape}")
    return ClusterState(cluster.capacity, cluster.initial + placement.alloc)


def diff_totals(target_totals, current_totals) -> tuple[BatchRequest, np.ndarray]:
    delta = np.asarray(target_totals, dtype=np.int64) - np.asarray(current_totals, dtype=np.int64)
    deletions = np.maximum(0, -delta)
    deletions.setflags(write=False)
    return BatchRequest(np.maximum(0, delta)), deletions


def diff_layouts(target, current) -> tuple[BatchRequest, np.ndarray]:
    """Per-service allocations and deletions turning ``current`` into ``target``."""
    target = np.asarray(target, dtype=np.int64)
    current = np.asarray(current, dtype=np.int64)
    if target.shape != current.shape:
        raise ValueError(f"layout shapes differ: {target.shape} vs {current.shape}")
    return diff_totals(target.sum(axis=0), current.sum(axis=0))


def remove_containers(cluster: ClusterState, deletions, rng: np.random.Generator) -> ClusterState:
    """Delete ``deletions[j]`` containers of each service, choosing victims
    uniformly at random among all hosted containers of that service."""
    z = np.array(cluster.initial, dtype=np.int64)
    deletions = np.asarray(deletions, dtype=np.int64)
    for j, d in enumerate(deletions):
        if d <= 0:
            continue
        col = z[:, j]
        total = int(col.sum())
        if d > total:
            raise ValueError(f"cannot delete {d} containers of service {j}; only {total} hosted")
        owners = np.repeat(np.arange(z.shape[0]), col)
        victims = rng.choice(total, size=int(d), replace=False)
        z[:, j] -= np.bincount(owners[victims], minlength=z.shape[0])
    return ClusterState(cluster.capacity, z)
