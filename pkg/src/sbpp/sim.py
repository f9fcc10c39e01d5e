"""Synthetic scenarios, Monte Carlo violation estimates, and multi-day runs.

Every random draw comes from a ``numpy`` generator derived from the scenario
seed, so reruns with the same configuration are bit-identical.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import gauss
from .colgen import PatternSet, generate_patterns
from .cspsolve import UCAC, Budget, csp_place
from .gauss import Confidence
from .model import (BatchRequest, ClusterState, Instance, Placement, ServiceSpec, apply_placement,
                    diff_totals, remove_containers)
from .solvers import ALGORITHMS, solve

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ServiceRecord:
    mean: float
    std: float
    count: int
    remove_rate: float
    limit: float


def _record(mean, std, count, rate):
    # per-container cap: four standard deviations above the mean
    return ServiceRecord(mean, std, count, rate, round(mean + 4 * std, 2))


# Per-service statistics of the synthetic dataset (17 services).
SERVICE_POOL = (
    _record(6.18, 1.73, 270, 0.5),
    _record(2.47, 0.47, 55, 0.3),
    _record(1.07, 0.43, 1618, 0.8),
    _record(4.12, 2.69, 904, 0.5),
    _record(1.06, 0.85, 576, 0.8),
    _record(0.73, 0.19, 1085, 0.8),
    _record(1.94, 0.90, 1035, 0.5),
    _record(2.48, 0.82, 118, 0.5),
    _record(2.42, 0.97, 1450, 0.5),
    _record(2.49, 0.62, 313, 0.5),
    _record(0.97, 0.31, 44, 0.8),
    _record(2.46, 0.62, 544, 0.3),
    _record(2.52, 0.84, 697, 0.5),
    _record(1.06, 0.57, 427, 0.8),
    _record(2.59, 0.70, 363, 0.3),
    _record(1.96, 0.55, 360, 0.3),
    _record(3.33, 0.90, 701, 0.5),
)

SCENARIOS = ("scale-down", "scale-up", "empty")
DEFAULT_SCALE = {"scale-down": 0.7, "scale-up": 1.2, "empty": 1.0}
DEFAULT_DAY_SCALES = (1.0, 0.75, 1.1, 0.8, 1.2, 0.7, 1.05)


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 0
    service_count: int = 5
    machine_count: int = 400
    capacity: float = 31.58
    alpha: float = 0.999
    scenario: str = "scale-down"
    removal_rates: tuple | None = None  # None: per-service pool rates
    scale_factor: float | None = None  # None: scenario default
    std_jitter: tuple = (0.9, 1.1)
    count_scale: float = 0.1  # desk scale: 400 machines, a tenth of the containers
    algorithms: tuple = ALGORITHMS
    violation_samples: int = 10_000
    clamp: bool = True
    violation_denominator: str = "used"  # or "all"
    csp_budget: Budget = Budget(time_limit=30.0, node_limit=20_000)

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}; choose from {SCENARIOS}")
        if not 1 <= self.service_count <= len(SERVICE_POOL):
            raise ValueError(f"service_count must be in [1, {len(SERVICE_POOL)}]")
        if self.removal_rates is not None and not all(0 < r < 1 for r in self.removal_rates):
            raise ValueError("removal rates must lie strictly between 0 and 1")
        if self.scale_factor is not None and self.scale_factor <= 0:
            raise ValueError("scale_factor must be positive")
        if self.violation_denominator not in ("used", "all"):
            raise ValueError("violation_denominator must be 'used' or 'all'")

    @property
    def scale(self) -> float:
        return DEFAULT_SCALE[self.scenario] if self.scale_factor is None else self.scale_factor


@dataclass(frozen=True)
class ViolationReport:
    samples: int
    rate: float  # violating machine-samples / (machines counted x samples)
    per_machine_rates: np.ndarray

    @property
    def pct(self) -> float:
        return 100.0 * self.rate


@dataclass
class MetricsRow:
    scenario: str
    algo: str
    alpha: float
    K: int
    seed: int | str
    ucac: float
    ucac_norm: float
    machines: float
    machines_norm: float
    violation_pct: float
    solve_ms: float
    error: str = ""
    machine_ucac: list = field(default_factory=list, repr=False)


CSV_COLUMNS = ("scenario", "algo", "alpha", "K", "seed", "ucac", "ucac_norm", "machines",
               "machines_norm", "violation_pct", "solve_ms")


def _streams(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


# -- generation ----------------------------------------------------------------

def pick_services(pool: Sequence[ServiceRecord], k: int, rng: np.random.Generator) -> list[int]:
    if not 1 <= k <= len(pool):
        raise ValueError(f"K must be in [1, {len(pool)}], got {k}")
    return sorted(int(i) for i in rng.choice(len(pool), size=k, replace=False))


def gen_services(pool: Sequence[ServiceRecord], k: int, seed, std_jitter=(0.9, 1.1),
                 indices: Sequence[int] | None = None) -> list[ServiceSpec]:
    """Draw ``k`` distinct pool rows and jitter their standard deviations.

    ``seed`` may be an int or a Generator. ``indices`` skips the draw.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if indices is None:
        indices = pick_services(pool, k, rng)
    lo, hi = std_jitter
    factors = rng.uniform(lo, hi, size=len(indices)) if hi > lo else np.full(len(indices), lo)
    out = []
    for i, f in zip(indices, factors):
        rec = pool[i]
        sd = rec.std * float(f)
        out.append(ServiceSpec(f"svc{i:02d}", rec.mean, sd * sd, rec.limit))
    return out


def pack_empty(services, capacity: float, machine_count: int, conf: Confidence, counts,
               pset: PatternSet | None = None, budget: Budget = Budget()) -> ClusterState:
    """Pack ``counts`` containers onto an empty cluster with CSP-UCaC."""
    k = len(services)
    inst = Instance(tuple(services), ClusterState.empty(capacity, machine_count, k),
                    BatchRequest(counts))
    placement, _ = csp_place(inst, conf, UCAC, pset, budget)
    return apply_placement(inst.cluster, placement)


def remove_at_rates(cluster: ClusterState, rates, rng: np.random.Generator) -> ClusterState:
    """Delete every hosted container independently with its service's rate."""
    z = np.array(cluster.initial, dtype=np.int64)
    removed = rng.binomial(z, np.broadcast_to(np.asarray(rates, dtype=float), z.shape))
    return ClusterState(cluster.capacity, z - removed)


def gen_nonempty_layout(services, cluster: ClusterState, conf: Confidence, removal_rates, seed,
                        counts=None, packed: ClusterState | None = None,
                        budget: Budget = Budget()) -> ClusterState:
    """Pack ``counts`` onto the (empty) ``cluster`` by CSP-UCaC, then delete
    containers at the per-service removal rates."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if packed is None:
        if counts is None:
            raise ValueError("either counts or a packed layout is required")
        packed = pack_empty(services, cluster.capacity, cluster.machine_count, conf, counts,
                            budget=budget)
    return remove_at_rates(packed, removal_rates, rng)


def gen_requests(initial_layout, current_layout, scale_factor: float) -> tuple[BatchRequest, np.ndarray]:
    """Allocations and deletions that bring ``current`` to ``scale x initial``
    per-service totals."""
    init = np.asarray(getattr(initial_layout, "initial", initial_layout))
    cur = np.asarray(getattr(current_layout, "initial", current_layout))
    target = np.rint(scale_factor * init.sum(axis=0)).astype(np.int64)
    return diff_totals(target, cur.sum(axis=0))


def sample_usage(service: ServiceSpec, count, seed, clamp: bool = True) -> np.ndarray:
    """Gaussian usage draws, clamped to ``[0, limit]`` unless ``clamp`` is off.

    ``count`` may be an int or a shape tuple.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    draws = rng.normal(service.mean, service.std, size=count)
    if clamp:
        np.clip(draws, 0.0, service.limit, out=draws)
    return draws


def gen_workload_usage(dist, n: int, seed, reps: int | None = None):
    """Container usage as the sum of ``n`` i.i.d. workload draws.

    ``dist`` is a frozen scipy distribution or a callable ``(rng, size)``.
    Returns a float, or an array of ``reps`` independent sums.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    shape = (n,) if reps is None else (reps, n)
    if hasattr(dist, "rvs"):
        x = dist.rvs(size=shape, random_state=rng)
    else:
        x = np.asarray(dist(rng, shape), dtype=float)
    total = x.sum(axis=-1)
    return float(total) if reps is None else total


def evaluate_violations(cluster: ClusterState, placement: Placement | None, services, samples: int,
                        seed, clamp: bool = True, denominator: str = "used",
                        chunk: int = 2000) -> ViolationReport:
    """Monte Carlo rate of machine-samples whose total usage exceeds capacity.

    Without clamping a machine's total is exactly Gaussian with the summed
    mean and variance, so totals are drawn directly.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    counts = np.asarray(cluster.initial, dtype=np.int64)
    if placement is not None:
        counts = counts + placement.alloc
    used = np.nonzero(counts.sum(axis=1) > 0)[0]
    n_all = counts.shape[0]
    per_machine = np.zeros(n_all)
    if used.size == 0 or samples <= 0:
        return ViolationReport(samples, 0.0, per_machine)
    means = np.array([s.mean for s in services])
    variances = np.array([s.uncertainty for s in services])
    viol = np.zeros(used.size, dtype=np.int64)
    cu = counts[used]
    if not clamp:
        mu = cu @ means
        sd = np.sqrt(cu @ variances)
        for start in range(0, samples, chunk):
            m = min(chunk, samples - start)
            tot = mu + sd * rng.standard_normal((m, used.size))
            viol += (tot > cluster.capacity).sum(axis=0)
    else:
        # containers laid out machine-major, summed back per machine with reduceat
        svc = np.concatenate([np.repeat(np.arange(len(services)), row) for row in cu])
        starts = np.concatenate([[0], np.cumsum(cu.sum(axis=1))[:-1]])
        mu_c = means[svc]
        sd_c = np.sqrt(variances[svc])
        lim_c = np.array([services[j].limit for j in svc])
        step = max(1, min(chunk, 4_000_000 // max(1, svc.size)))
        for start in range(0, samples, step):
            m = min(step, samples - start)
            draws = mu_c + sd_c * rng.standard_normal((m, svc.size))
            np.clip(draws, 0.0, lim_c, out=draws)
            tot = np.add.reduceat(draws, starts, axis=1)
            viol += (tot > cluster.capacity).sum(axis=0)
    per_machine[used] = viol / samples
    n_count = used.size if denominator == "used" else n_all
    return ViolationReport(samples, float(viol.sum()) / (n_count * samples), per_machine)


# -- experiment drivers ----------------------------------------------------------

@dataclass
class ScenarioInstance:
    services: list
    records: list
    conf: Confidence
    instance: Instance
    packed: ClusterState | None


def build_scenario(config: ScenarioConfig) -> ScenarioInstance:
    """Generate the services, cluster state and request for one seed."""
    rng_svc, rng_remove, rng_delete, _ = _streams(config.seed, 4)
    idx = pick_services(SERVICE_POOL, config.service_count, rng_svc)
    services = gen_services(SERVICE_POOL, config.service_count, rng_svc, config.std_jitter, idx)
    records = [SERVICE_POOL[i] for i in idx]
    conf = Confidence(config.alpha)
    base = np.array([max(1, round(r.count * config.count_scale)) for r in records], dtype=np.int64)
    k = len(services)
    empty = ClusterState.empty(config.capacity, config.machine_count, k)
    if config.scenario == "empty":
        request = BatchRequest(np.rint(config.scale * base).astype(np.int64))
        return ScenarioInstance(services, records, conf, Instance(tuple(services), empty, request),
                                None)
    rates = config.removal_rates or tuple(r.remove_rate for r in records)
    packed = pack_empty(services, config.capacity, config.machine_count, conf, base,
                        budget=config.csp_budget)
    current = gen_nonempty_layout(services, empty, conf, rates, rng_remove, packed=packed)
    request, deletions = gen_requests(packed, current, config.scale)
    current = remove_containers(current, deletions, rng_delete)
    return ScenarioInstance(services, records, conf,
                            Instance(tuple(services), current, request), packed)


def _metrics(name, algo, config, seed, inst: Instance, conf, placement, ms, viol_seed):
    counts = inst.cluster.initial + placement.alloc
    rows = gauss.ucac_rows(inst.means, inst.variances, counts, conf.d_alpha)
    used = counts.sum(axis=1) > 0
    rep = evaluate_violations(inst.cluster, placement, inst.services, config.violation_samples,
                              viol_seed, config.clamp, config.violation_denominator)
    return MetricsRow(name, algo, config.alpha, len(inst.services), seed, float(rows.sum()),
                      math.nan, int(used.sum()), math.nan, rep.pct, ms,
                      machine_ucac=rows[used].tolist())


def normalize(rows: list[MetricsRow], baseline: str = "bf-nsigma") -> list[MetricsRow]:
    """Fill ``ucac_norm`` / ``machines_norm`` relative to ``baseline``."""
    base = next((r for r in rows if r.algo == baseline and not r.error), None)
    for r in rows:
        if base is None or r.error:
            continue
        r.ucac_norm = r.ucac / base.ucac if base.ucac else math.nan
        r.machines_norm = r.machines / base.machines if base.machines else math.nan
    return rows


def run_scenario(config: ScenarioConfig) -> list[MetricsRow]:
    """Run every configured algorithm on one generated instance."""
    sc = build_scenario(config)
    inst, conf = sc.instance, sc.conf
    viol_rng = _streams(config.seed, 4)[3]
    need = inst.request.demands + inst.cluster.initial.sum(axis=0)
    pset = None
    rows = []
    for algo in config.algorithms:
        if algo.startswith("csp") and pset is None:
            pset = generate_patterns(inst.services, conf, inst.cluster.capacity, need)
        t0 = time.perf_counter()
        try:
            placement, info = solve(algo, inst, conf, config.csp_budget, pset)
        except Exception as exc:  # recorded per algorithm, run continues
            log.warning("%s failed on %s seed %s: %s", algo, config.scenario, config.seed, exc)
            rows.append(MetricsRow(config.scenario, algo, config.alpha, len(inst.services),
                                   config.seed, math.nan, math.nan, math.nan, math.nan, math.nan,
                                   math.nan, error=str(exc)))
            continue
        ms = 1000 * (time.perf_counter() - t0)
        if info.get("status") not in (None, "optimal"):
            log.info("%s ended %s (gap %.2e)", algo, info["status"], info["gap"])
        viol_seed = np.random.default_rng(viol_rng.integers(2**63))
        rows.append(_metrics(config.scenario, algo, config, config.seed, inst, conf, placement,
                             ms, viol_seed))
    return normalize(rows)


def average_rows(rows: list[MetricsRow]) -> list[MetricsRow]:
    """Average per algorithm across seeds (errors excluded)."""
    out = []
    by_algo: dict[str, list[MetricsRow]] = {}
    for r in rows:
        by_algo.setdefault(r.algo, []).append(r)
    for algo, rs in by_algo.items():
        ok = [r for r in rs if not r.error]
        if not ok:
            continue

        def avg(name):
            return float(np.mean([getattr(r, name) for r in ok]))

        out.append(MetricsRow(ok[0].scenario, algo, ok[0].alpha, ok[0].K, "mean", avg("ucac"),
                              avg("ucac_norm"), avg("machines"), avg("machines_norm"),
                              avg("violation_pct"), avg("solve_ms")))
    return out


def run_seeds(config: ScenarioConfig, seeds: Sequence[int]) -> list[MetricsRow]:
    rows = []
    for s in seeds:
        rows.extend(run_scenario(replace(config, seed=s)))
    return rows


def run_multiday(config: ScenarioConfig, days: int = 7,
                 day_scales: Sequence[float] | None = None) -> list[MetricsRow]:
    """Continuous allocation over ``days``; day one packs an empty cluster.

    Each algorithm evolves its own layout: every later day deletes and
    allocates toward ``scale[d] x base`` per-service totals. Rows carry
    ``scenario="multiday-day<d>"``.
    """
    if days < 1:
        raise ValueError("days must be at least 1")
    scales = list(day_scales or DEFAULT_DAY_SCALES)
    if len(scales) < days:
        scales = (scales * (days // len(scales) + 1))[:days]
    rng_svc, *_ = _streams(config.seed, 4)
    idx = pick_services(SERVICE_POOL, config.service_count, rng_svc)
    services = gen_services(SERVICE_POOL, config.service_count, rng_svc, config.std_jitter, idx)
    records = [SERVICE_POOL[i] for i in idx]
    conf = Confidence(config.alpha)
    k = len(services)
    base = np.array([max(1, round(r.count * config.count_scale)) for r in records], dtype=np.int64)
    peak = np.rint(max(scales[:days]) * base).astype(np.int64)
    pset = generate_patterns(services, conf, config.capacity, peak)
    rows = []
    for a, algo in enumerate(config.algorithms):
        day_rngs = _streams(config.seed * 1000 + a + 1, 2 * days)
        cluster = ClusterState.empty(config.capacity, config.machine_count, k)
        for d in range(days):
            target = np.rint(scales[d] * base).astype(np.int64)
            request, deletions = diff_totals(target, cluster.initial.sum(axis=0))
            cluster = remove_containers(cluster, deletions, day_rngs[2 * d])
            inst = Instance(tuple(services), cluster, request)
            t0 = time.perf_counter()
            try:
                placement, _ = solve(algo, inst, conf, config.csp_budget, pset)
            except Exception as exc:
                log.warning("%s failed on day %d: %s", algo, d + 1, exc)
                rows.append(MetricsRow(f"multiday-day{d + 1}", algo, config.alpha, k, config.seed,
                                       math.nan, math.nan, math.nan, math.nan, math.nan, math.nan,
                                       error=str(exc)))
                break
            ms = 1000 * (time.perf_counter() - t0)
            rows.append(_metrics(f"multiday-day{d + 1}", algo, config, config.seed, inst, conf,
                                 placement, ms, day_rngs[2 * d + 1]))
            cluster = apply_placement(cluster, placement)
    for d in range(days):
        normalize([r for r in rows if r.scenario == f"multiday-day{d + 1}"])
    return rows


def multiday_totals(rows: list[MetricsRow]) -> dict[str, dict]:
    """Cumulative UCaC, mean machines and summed violation % per algorithm."""
    out: dict[str, dict] = {}
    for r in rows:
        t = out.setdefault(r.algo, {"ucac": 0.0, "machines": [], "violation_pct": 0.0, "days": 0})
        t["ucac"] += r.ucac
        t["machines"].append(r.machines)
        t["violation_pct"] += r.violation_pct
        t["days"] += 1
    for t in out.values():
        t["machines"] = float(np.mean(t["machines"]))
    return out


# -- output ------------------------------------------------------------------------

def write_metrics_csv(rows: Sequence[MetricsRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow([getattr(r, c) for c in CSV_COLUMNS])


def read_metrics_csv(path) -> list[MetricsRow]:
    out = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            seed = rec["seed"]
            out.append(MetricsRow(
                rec["scenario"], rec["algo"], float(rec["alpha"]), int(rec["K"]),
                int(seed) if seed.lstrip("-").isdigit() else seed,
                *(float(rec[c]) for c in CSV_COLUMNS[5:])))
    return out


def write_machine_dump(rows: Sequence[MetricsRow], path) -> None:
    """Per-machine UCaC values of each run, for plotting elsewhere."""
    doc = [{"scenario": r.scenario, "algo": r.algo, "seed": r.seed, "alpha": r.alpha,
            "machine_ucac": r.machine_ucac} for r in rows if not r.error]
    with open(path, "w") as fh:
        json.dump(doc, fh)
