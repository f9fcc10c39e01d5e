"""Command-line entry point: ``sbpp solve | simulate | patterns``.

Exit codes: 0 success, 1 I/O or validation error, 2 demand does not fit.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import gauss
from .colgen import DEFAULT_MAX_COLUMNS, PatternError, cached_generate
from .cspsolve import Budget
from .gauss import Confidence
from .model import CapacityExhausted, Instance, InstanceError, check_placement, validate_instance
from .sim import SCENARIOS, ScenarioConfig, run_multiday, run_seeds, write_machine_dump, write_metrics_csv
from .solvers import ALGORITHMS, solve

CACHE_ENV = "SBPP_PATTERN_CACHE"
EXIT_OK, EXIT_INPUT, EXIT_CAPACITY = 0, 1, 2


def default_cache_dir() -> Path:
    env = os.environ.get(CACHE_ENV)
    if env:
        return Path(env)
    return Path.home() / ".cache" / "sbpp" / "patterns"


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def _confidence(alpha: float) -> Confidence | None:
    try:
        return Confidence(alpha)
    except ValueError as exc:
        _err(str(exc))
        return None


def load_instance(path, conf: Confidence | None) -> Instance:
    """Read and validate an instance file; InstanceError carries field paths."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InstanceError([f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}"])
    if not isinstance(doc, dict):
        raise InstanceError(["$: expected an object"])
    inst = Instance.from_dict(doc)
    return validate_instance(inst.services, inst.cluster, inst.request, conf)


def cmd_solve(args) -> int:
    conf = _confidence(args.alpha)
    if conf is None:
        return EXIT_INPUT
    try:
        inst = load_instance(args.instance, conf)
    except OSError as exc:
        _err(f"cannot read {args.instance}: {exc}")
        return EXIT_INPUT
    except InstanceError as exc:
        for p in exc.problems:
            _err(p)
        return EXIT_INPUT
    budget = Budget(args.time_limit, args.node_limit)
    t0 = time.perf_counter()
    try:
        placement, info = solve(args.algo, inst, conf, budget, break_threshold=args.break_threshold)
    except (CapacityExhausted, PatternError) as exc:
        _err(f"capacity exhausted: {exc}")
        return EXIT_CAPACITY
    ms = 1000 * (time.perf_counter() - t0)
    problems = check_placement(inst, placement, conf)
    if problems:  # solver bug, never expected
        for p in problems:
            _err(p)
        return EXIT_INPUT
    total = inst.cluster.initial + placement.alloc
    u = gauss.ucac_rows(inst.means, inst.variances, total, conf.d_alpha)
    machines = int((total.sum(axis=1) > 0).sum())
    doc = {"algo": args.algo, "alpha": args.alpha, "ucac": float(u.sum()), "machines": machines,
           "solve_ms": ms, **placement.to_dict()}
    if "solution" in info:
        doc["csp"] = info["solution"].to_dict()
    try:
        Path(args.output).write_text(json.dumps(doc))
    except OSError as exc:
        _err(f"cannot write {args.output}: {exc}")
        return EXIT_INPUT
    print(f"ucac={u.sum():.4f} machines={machines} solve_ms={ms:.1f}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    if args.scenario not in SCENARIOS:
        _err(f"unknown scenario {args.scenario!r}; choose from {', '.join(SCENARIOS)}")
        return EXIT_INPUT
    if _confidence(args.alpha) is None:
        return EXIT_INPUT
    algos = tuple(args.algos.split(",")) if args.algos else ALGORITHMS
    bad = [a for a in algos if a not in ALGORITHMS]
    if bad:
        _err(f"unknown algorithm(s) {', '.join(bad)}")
        return EXIT_INPUT
    config = ScenarioConfig(seed=args.seed, service_count=args.k, machine_count=args.machines,
                            capacity=args.capacity, alpha=args.alpha, scenario=args.scenario,
                            count_scale=args.count_scale, algorithms=algos,
                            violation_samples=args.samples,
                            csp_budget=Budget(args.time_limit, args.node_limit))
    try:
        if args.multiday:
            rows = []
            for s in range(args.seed, args.seed + args.seeds):
                rows.extend(run_multiday(replace(config, seed=s), args.multiday))
        else:
            rows = run_seeds(config, range(args.seed, args.seed + args.seeds))
    except (ValueError, CapacityExhausted) as exc:
        _err(str(exc))
        return EXIT_INPUT
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"multiday{args.multiday}" if args.multiday else args.scenario
    csv_path = out / f"{stem}-k{args.k}-a{args.alpha}.csv"
    write_metrics_csv(rows, csv_path)
    write_machine_dump(rows, csv_path.with_suffix(".json"))
    for r in rows:
        if r.error:
            print(f"warning: {r.algo} seed {r.seed} {r.scenario}: {r.error}", file=sys.stderr)
    print(f"wrote {len(rows)} rows to {csv_path}")
    return EXIT_OK


def cmd_patterns(args) -> int:
    conf = _confidence(args.alpha)
    if conf is None:
        return EXIT_INPUT
    try:
        inst = load_instance(args.instance, None)
    except OSError as exc:
        _err(f"cannot read {args.instance}: {exc}")
        return EXIT_INPUT
    except InstanceError as exc:
        for p in exc.problems:
            _err(p)
        return EXIT_INPUT
    demands = inst.request.demands + inst.cluster.initial.sum(axis=0)
    demands = np.maximum(demands, 1)
    cache_dir = Path(args.cache_dir) if args.cache_dir else default_cache_dir()
    t0 = time.perf_counter()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            pset, hit = cached_generate(cache_dir, inst.services, conf, inst.cluster.capacity,
                                        demands, max_columns=args.max_columns)
        except PatternError as exc:
            _err(str(exc))
            return EXIT_CAPACITY
        except OSError as exc:
            _err(f"pattern cache: {exc}")
            return EXIT_INPUT
    ms = 1000 * (time.perf_counter() - t0)
    for w in caught:
        print(f"warning: {w.message}")
    source = "cache hit" if hit else "generated"
    print(f"patterns={len(pset)} time_ms={ms:.1f} ({source}, {cache_dir})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sbpp", description="Chance-constrained container placement.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="place a batch request on a cluster")
    s.add_argument("--algo", choices=ALGORITHMS, default="csp-ucac")
    s.add_argument("--alpha", type=float, default=0.999)
    s.add_argument("-i", "--instance", required=True)
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--time-limit", type=float, default=60.0)
    s.add_argument("--node-limit", type=int, default=1_000_000)
    s.add_argument("--break-threshold", type=float, default=None,
                   help="BiHeu stops filling a machine once its slack is at most this")
    s.set_defaults(func=cmd_solve)

    m = sub.add_parser("simulate", help="run synthetic scenarios and write metrics")
    m.add_argument("--scenario", default="scale-down", help=", ".join(SCENARIOS))
    m.add_argument("--k", type=int, default=5)
    m.add_argument("--alpha", type=float, default=0.999)
    m.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds")
    m.add_argument("--seed", type=int, default=0, help="first seed")
    m.add_argument("--multiday", type=int, default=0, metavar="DAYS")
    m.add_argument("--machines", type=int, default=400)
    m.add_argument("--capacity", type=float, default=31.58)
    m.add_argument("--count-scale", type=float, default=0.1)
    m.add_argument("--samples", type=int, default=10_000)
    m.add_argument("--algos", default="", help="comma-separated subset")
    m.add_argument("--time-limit", type=float, default=30.0)
    m.add_argument("--node-limit", type=int, default=20_000)
    m.add_argument("--out-dir", default="results")
    m.set_defaults(func=cmd_simulate)

    c = sub.add_parser("patterns", help="generate and cache the pattern set")
    c.add_argument("-i", "--instance", required=True)
    c.add_argument("--alpha", type=float, default=0.999)
    c.add_argument("--cache-dir", default=None, help=f"default: ${CACHE_ENV} or ~/.cache/sbpp/patterns")
    c.add_argument("--max-columns", type=int, default=DEFAULT_MAX_COLUMNS)
    c.set_defaults(func=cmd_patterns)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
