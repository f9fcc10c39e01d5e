import math
from dataclasses import replace
from statistics import NormalDist

import numpy as np
import pytest
from scipy import stats

from sbpp import gauss
from sbpp.gauss import Confidence
from sbpp.model import BatchRequest, ClusterState, Instance, ServiceSpec
from sbpp.sim import (CSV_COLUMNS, SERVICE_POOL, ScenarioConfig, average_rows, build_scenario,
                      evaluate_violations, gen_nonempty_layout, gen_requests, gen_services,
                      gen_workload_usage, multiday_totals, read_metrics_csv, remove_at_rates,
                      run_multiday, run_scenario, sample_usage, write_machine_dump,
                      write_metrics_csv)

# transcribed column by column: mean, std, containers, remove rate
TABLE = """
6.18 1.73 270 0.5 | 2.47 0.47 55 0.3 | 1.07 0.43 1618 0.8 | 4.12 2.69 904 0.5 |
1.06 0.85 576 0.8 | 0.73 0.19 1085 0.8 | 1.94 0.9 1035 0.5 | 2.48 0.82 118 0.5 |
2.42 0.97 1450 0.5 | 2.49 0.62 313 0.5 | 0.97 0.31 44 0.8 | 2.46 0.62 544 0.3 |
2.52 0.84 697 0.5 | 1.06 0.57 427 0.8 | 2.59 0.7 363 0.3 | 1.96 0.55 360 0.3 |
3.33 0.9 701 0.5
"""
ROWS = [tuple(float(v) for v in cell.split()) for cell in TABLE.replace("\n", " ").split("|")]

FAST = ScenarioConfig(machine_count=60, count_scale=0.02, violation_samples=500,
                      algorithms=("bf-nsigma", "bf-ucac", "biheu", "csp-ucac", "csp-mac"))


def test_pool_matches_table():
    assert len(SERVICE_POOL) == 17
    for rec, (mean, std, count, rate) in zip(SERVICE_POOL, ROWS):
        assert (rec.mean, rec.std, rec.count, rec.remove_rate) == (mean, std, int(count), rate)
        assert rec.limit > rec.mean


def test_gen_services_without_jitter_is_exact():
    svcs = gen_services(SERVICE_POOL, 17, 0, std_jitter=(1.0, 1.0))
    assert [(s.mean, round(s.std, 12)) for s in svcs] == [(r[0], r[1]) for r in ROWS]
    assert all(s.uncertainty == pytest.approx(s.std ** 2) for s in svcs)


def test_gen_services_seeded_and_distinct():
    a = gen_services(SERVICE_POOL, 5, 42)
    b = gen_services(SERVICE_POOL, 5, 42)
    assert a == b
    assert len({s.id for s in a}) == 5
    for s in a:
        base = SERVICE_POOL[int(s.id[3:])]
        assert 0.9 * base.std <= s.std <= 1.1 * base.std
    with pytest.raises(ValueError):
        gen_services(SERVICE_POOL, 0, 1)
    with pytest.raises(ValueError):
        gen_services(SERVICE_POOL, 18, 1)


def test_removal_limits_and_band():
    rng = np.random.default_rng(0)
    c = ClusterState(10, [[1000]])
    assert remove_at_rates(c, [1e-12], rng) == c
    kept = remove_at_rates(c, [0.5], np.random.default_rng(5)).initial[0, 0]
    lo, hi = stats.binom.ppf([0.005, 0.995], 1000, 0.5)
    assert lo <= kept <= hi


def test_nonempty_layout_is_feasible_and_seeded():
    conf = Confidence(0.99)
    svcs = gen_services(SERVICE_POOL, 3, 1)
    empty = ClusterState.empty(31.58, 30, 3)
    a = gen_nonempty_layout(svcs, empty, conf, [0.5] * 3, 7, counts=[20, 20, 20])
    b = gen_nonempty_layout(svcs, empty, conf, [0.5] * 3, 7, counts=[20, 20, 20])
    assert a == b
    u = gauss.ucac_rows(np.array([s.mean for s in svcs]), np.array([s.uncertainty for s in svcs]),
                        a.initial, conf.d_alpha)
    assert (u <= 31.58 + 1e-9).all()
    with pytest.raises(ValueError):
        gen_nonempty_layout(svcs, empty, conf, [0.5] * 3, 7)


def test_gen_requests_examples():
    init = np.array([[10, 20], [30, 40]])
    req, dele = gen_requests(init, init, 1.0)
    assert req.total == 0 and not dele.any()
    rng = np.random.default_rng(3)
    big = ClusterState(1e9, [[5000, 8000]])
    cur = remove_at_rates(big, [0.5, 0.5], rng)
    req, dele = gen_requests(big, cur, 0.7)
    assert np.allclose(req.demands / big.initial.sum(axis=0), 0.2, atol=0.02)
    req, _ = gen_requests(big, cur, 1.2)
    assert np.allclose(req.demands / big.initial.sum(axis=0), 0.7, atol=0.02)


def test_sample_usage():
    s0 = ServiceSpec("z", 3.0, 0.0, 5.0)
    assert (sample_usage(s0, 100, 0) == 3.0).all()
    s = ServiceSpec("n", 2.0, 1.0, 6.0)
    x = sample_usage(s, 1_000_000, 1)
    assert x.max() <= 6.0 and x.min() >= 0.0
    assert 1.99 <= x.mean() <= 2.02
    # mean of N(2,1) clamped to [0, 6]
    nd = NormalDist(2, 1)
    a, b = (0 - 2), (6 - 2)
    phi = lambda t: math.exp(-t * t / 2) / math.sqrt(2 * math.pi)
    Phi = NormalDist().cdf
    clamped = 2 * (Phi(b) - Phi(a)) + (phi(a) - phi(b)) + 6 * (1 - nd.cdf(6))
    assert x.mean() == pytest.approx(clamped, abs=0.005)
    assert (sample_usage(s, 50, 9) == sample_usage(s, 50, 9)).all()
    assert sample_usage(s, (3, 4), 2, clamp=False).shape == (3, 4)


def test_workload_usage_clt():
    c = gen_workload_usage(lambda rng, size: np.full(size, 2.5), 1, 0)
    assert c == 2.5
    expo = stats.expon()
    n, reps = 10_000, 1000
    y = gen_workload_usage(expo, n, 1, reps=reps)
    z = (y - n) / math.sqrt(n)
    assert stats.kstest(z, "norm").pvalue > 0.01
    assert abs(y.mean() - n) <= 3 * math.sqrt(n) / math.sqrt(reps)
    ks_small = np.mean([stats.kstest((gen_workload_usage(expo, 10, s, reps=reps) - 10) / math.sqrt(10),
                                     "norm").statistic for s in range(5)])
    ks_big = np.mean([stats.kstest((gen_workload_usage(expo, n, s, reps=reps) - n) / math.sqrt(n),
                                   "norm").statistic for s in range(5)])
    assert ks_big < ks_small
    with pytest.raises(ValueError):
        gen_workload_usage(expo, 0, 1)


def test_violation_single_machine_tail():
    svc = [ServiceSpec("a", 5.0, 1.0, 100.0)]
    cl = ClusterState(7.0, [[1]])
    expected = NormalDist().cdf(-2)
    for clamp in (True, False):
        rep = evaluate_violations(cl, None, svc, 100_000, 3, clamp=clamp)
        assert abs(rep.rate - expected) <= 0.003
        assert rep.pct == pytest.approx(100 * rep.rate)


def test_violation_deterministic_zero_and_denominator():
    svc = [ServiceSpec("a", 2.0, 0.0, 3.0)]
    cl = ClusterState(7.0, [[3], [0]])
    assert evaluate_violations(cl, None, svc, 1000, 0).rate == 0.0
    risky = ClusterState(5.0, [[1], [0]])
    svc_r = [ServiceSpec("a", 5.0, 1.0, 100.0)]
    used = evaluate_violations(risky, None, svc_r, 20_000, 1, denominator="used").rate
    every = evaluate_violations(risky, None, svc_r, 20_000, 1, denominator="all").rate
    assert every == pytest.approx(used / 2)


def test_violation_rate_bounded_for_feasible_packing():
    conf = Confidence(0.999)
    svcs = gen_services(SERVICE_POOL, 4, 3)
    inst = Instance(tuple(svcs), ClusterState.empty(31.58, 40, 4), BatchRequest([30, 30, 30, 30]))
    from sbpp.heuristics import bf_ucac
    pl = bf_ucac(inst, conf)
    rep = evaluate_violations(inst.cluster, pl, svcs, 100_000, 5, clamp=False)
    assert rep.rate <= 2 * (1 - 0.999)


def test_scenario_is_pure_function_of_seed():
    a = build_scenario(replace(FAST, seed=4))
    b = build_scenario(replace(FAST, seed=4))
    assert a.instance.cluster == b.instance.cluster
    assert a.instance.request.to_list() == b.instance.request.to_list()
    assert a.services == b.services


def test_run_scenario_rows_and_normalization(tmp_path):
    rows = run_scenario(replace(FAST, seed=1, scenario="empty"))
    assert [r.algo for r in rows] == list(FAST.algorithms)
    base = rows[0]
    assert base.ucac_norm == 1.0 and base.machines_norm == 1.0
    by = {r.algo: r for r in rows}
    assert by["csp-ucac"].ucac <= by["csp-mac"].ucac + 1e-9
    again = run_scenario(replace(FAST, seed=1, scenario="empty"))
    assert [(r.ucac, r.machines, r.violation_pct) for r in rows] == \
        [(r.ucac, r.machines, r.violation_pct) for r in again]
    path = tmp_path / "m.csv"
    write_metrics_csv(rows, path)
    back = read_metrics_csv(path)
    assert path.read_text().splitlines()[0].split(",") == list(CSV_COLUMNS)
    assert [(r.algo, r.ucac, r.machines) for r in back] == [(r.algo, r.ucac, r.machines) for r in rows]
    write_machine_dump(rows, tmp_path / "m.json")
    avg = average_rows(rows)
    assert len(avg) == len(rows)


def test_unknown_scenario_rejected():
    with pytest.raises(ValueError):
        build_scenario(replace(FAST, scenario="sideways"))


def test_multiday_single_day_matches_empty_packing():
    cfg = replace(FAST, algorithms=("bf-ucac",), seed=2)
    rows = run_multiday(cfg, 1)
    assert len(rows) == 1 and rows[0].scenario == "multiday-day1"
    with pytest.raises(ValueError):
        run_multiday(cfg, 0)


def test_multiday_flat_after_day_one():
    cfg = replace(FAST, algorithms=("bf-ucac", "biheu"), seed=3)
    rows = run_multiday(cfg, 3, day_scales=(1.0, 1.0, 1.0))
    for algo in cfg.algorithms:
        rs = [r for r in rows if r.algo == algo]
        assert len({r.ucac for r in rs}) == 1 and len({r.machines for r in rs}) == 1


def test_multiday_alternating_scales_feasible():
    cfg = replace(FAST, seed=5)
    rows = run_multiday(cfg, 4, day_scales=(1.0, 0.7, 1.2, 0.8))
    assert not any(r.error for r in rows)
    assert len(rows) == 4 * len(cfg.algorithms)
    for r in rows:
        assert max(r.machine_ucac) <= cfg.capacity + 1e-9
    tot = multiday_totals(rows)
    assert set(tot) == set(cfg.algorithms)
    assert all(t["days"] == 4 for t in tot.values())
