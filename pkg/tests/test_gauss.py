import math
from statistics import NormalDist

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sbpp import gauss
from sbpp.gauss import Confidence, max_fit_count, normal_cdf, normal_quantile
from sbpp.model import ClusterState, MachineLoad, Placement, ServiceSpec

from oracles import max_fit_scan

EXAMPLE_SERVICES = (ServiceSpec("a", 2, 0.5, 10), ServiceSpec("b", 2, 1.0, 10),
                    ServiceSpec("c", 3, 1.5, 10))


def example_load():
    return MachineLoad.of(EXAMPLE_SERVICES, [1, 1, 1])


def test_quantile_median_is_zero():
    assert normal_quantile(0.5) == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("p, expected", [(0.99, 2.326348), (0.995, 2.575829), (0.999, 3.090232)])
def test_quantile_reference_values(p, expected):
    assert abs(normal_quantile(p) - expected) <= 1e-6


def test_quantile_matches_stdlib():
    for p in np.linspace(1e-6, 1 - 1e-6, 501):
        assert normal_quantile(p) == pytest.approx(NormalDist().inv_cdf(p), abs=1e-9)


def test_quantile_extreme_tails():
    for p in (1e-12, 1e-9, 1 - 1e-9):
        assert abs(normal_cdf(normal_quantile(p)) - p) <= 1e-8 * max(p, 1e-3)


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5, float("nan")])
def test_quantile_domain(p):
    with pytest.raises(ValueError):
        normal_quantile(p)


def test_round_trip_grid():
    grid = np.linspace(0.001, 0.999, 997)
    worst = max(abs(normal_cdf(normal_quantile(p)) - p) for p in grid)
    assert worst <= 1e-8


def test_confidence_bounds():
    assert Confidence(0.99).d_alpha == pytest.approx(2.3263478740408, abs=1e-10)
    for bad in (0.5, 1.0, 0.3):
        with pytest.raises(ValueError):
            Confidence(bad)


def test_machine_ucac_example():
    u = gauss.machine_ucac(example_load(), Confidence(0.99))
    assert u == pytest.approx(7 + 2.3263478740408 * math.sqrt(3))


def test_ucac_formula_with_quoted_multiplier():
    # the worked example's 11.46 uses a multiplier of 2.576
    assert abs(gauss.ucac_value(7.0, 3.0, 2.576) - 11.46) <= 0.01
    assert gauss.machine_ucac(example_load(), Confidence(0.995)) == pytest.approx(11.46, abs=0.01)


def test_machine_ucac_trivial_cases():
    conf = Confidence(0.99)
    assert gauss.machine_ucac(MachineLoad(), conf) == 0.0
    assert gauss.machine_ucac(MachineLoad(5.0, 0.0), conf) == 5.0


def test_cluster_ucac_two_example_machines():
    cluster = ClusterState(12.0, [[1, 1, 1], [1, 1, 1]])
    assert abs(gauss.cluster_ucac(EXAMPLE_SERVICES, cluster, Confidence(0.995)) - 22.92) <= 0.02
    single = gauss.machine_ucac(example_load(), Confidence(0.99))
    assert gauss.cluster_ucac(EXAMPLE_SERVICES, cluster, Confidence(0.99)) == pytest.approx(2 * single)


def test_cluster_ucac_empty_and_with_placement():
    conf = Confidence(0.99)
    cluster = ClusterState.empty(12.0, 3, 3)
    assert gauss.cluster_ucac(EXAMPLE_SERVICES, cluster, conf) == 0.0
    pl = Placement([[1, 1, 1], [0, 0, 0], [0, 0, 0]])
    assert gauss.cluster_ucac(EXAMPLE_SERVICES, cluster, conf, pl) == pytest.approx(
        gauss.machine_ucac(example_load(), conf))


def test_pooling_example_numbers():
    # two machines with (mu=6, b=4) each versus both on one machine, D=2
    split = 2 * gauss.ucac_value(6, 4, 2.0)
    merged = gauss.ucac_value(12, 8, 2.0)
    assert split == pytest.approx(20.0)
    assert merged == pytest.approx(12 + 2 * math.sqrt(8))
    assert merged <= split


def test_feasible_examples():
    conf = Confidence(0.99)
    assert gauss.feasible(example_load(), conf, 12.0)
    assert not gauss.feasible(example_load(), conf, 10.0)
    assert gauss.feasible(MachineLoad(), conf, 0.1)


def conf_with_d(d):
    """Confidence whose quantile is ``d`` (up to quantile accuracy)."""
    return Confidence(normal_cdf(d))


def test_max_fit_examples():
    conf = conf_with_d(2.0)
    assert max_fit_count(ServiceSpec("s", 2, 1, 6), MachineLoad(), conf, 10) == 3
    assert max_fit_count(ServiceSpec("s", 3, 0, 6), MachineLoad(), conf, 10) == 3
    full = MachineLoad(10.0, 0.0)
    assert max_fit_count(ServiceSpec("s", 1, 0, 6), full, conf, 10) == 0


def test_max_fit_respects_cap():
    conf = Confidence(0.99)
    assert max_fit_count(ServiceSpec("s", 1, 0, 6), MachineLoad(), conf, 100, cap=7) == 7


def test_ucac_rows_vectorized():
    conf = Confidence(0.999)
    means = np.array([2.0, 2.0, 3.0])
    var = np.array([0.5, 1.0, 1.5])
    counts = np.array([[1, 1, 1], [0, 0, 0], [2, 0, 1]])
    rows = gauss.ucac_rows(means, var, counts, conf.d_alpha)
    for row, u in zip(counts, rows):
        assert u == pytest.approx(gauss.machine_ucac(MachineLoad.of(EXAMPLE_SERVICES, row), conf))


# -- properties ------------------------------------------------------------------

pos = st.floats(min_value=1e-3, max_value=1e3, allow_nan=False)


@settings(max_examples=300, deadline=None)
@given(x1=pos, gap=pos, delta=pos)
def test_sqrt_marginal_decrease(x1, gap, delta):
    x2 = x1 + gap
    assert math.sqrt(x1 + delta) - math.sqrt(x1) > math.sqrt(x2 + delta) - math.sqrt(x2)


@settings(max_examples=200, deadline=None)
@given(a=st.floats(0, 1e4), b=st.floats(0, 1e4))
def test_sqrt_pooling(a, b):
    assert math.sqrt(a) + math.sqrt(b) >= math.sqrt(a + b) - 1e-12


@settings(max_examples=200, deadline=None)
@given(c=st.floats(0, 100), b=st.floats(0, 100), mu=st.floats(0.01, 10), var=st.floats(0, 10),
       alpha=st.sampled_from([0.9, 0.99, 0.999]))
def test_ucac_strictly_increasing(c, b, mu, var, alpha):
    conf = Confidence(alpha)
    before = gauss.machine_ucac(MachineLoad(c, b), conf)
    after = gauss.machine_ucac(MachineLoad(c + mu, b + var), conf)
    assert after > before


@settings(max_examples=200, deadline=None)
@given(c1=st.floats(0, 50), b1=st.floats(0, 50), c2=st.floats(0, 50), b2=st.floats(0, 50),
       alpha=st.sampled_from([0.9, 0.99, 0.999]))
def test_merging_never_increases_ucac(c1, b1, c2, b2, alpha):
    d = Confidence(alpha).d_alpha
    split = gauss.ucac_value(c1, b1, d) + gauss.ucac_value(c2, b2, d)
    assert gauss.ucac_value(c1 + c2, b1 + b2, d) <= split + 1e-9


@settings(max_examples=300, deadline=None)
@given(mu=st.floats(0.05, 8), var=st.floats(0, 6), c=st.floats(0, 30), b=st.floats(0, 20),
       cap=st.floats(1, 60), alpha=st.sampled_from([0.9, 0.99, 0.999]))
def test_max_fit_matches_linear_scan(mu, var, c, b, cap, alpha):
    conf = Confidence(alpha)
    s = ServiceSpec("s", mu, var, mu + 1)
    base = MachineLoad(c, b)
    r = max_fit_count(s, base, conf, cap)
    if gauss.feasible(base, conf, cap):
        assert r == max_fit_scan(mu, var, c, b, conf.d_alpha, cap)
        assert gauss.feasible(base.add(s, r), conf, cap)
        assert not gauss.feasible(base.add(s, r + 1), conf, cap)
    else:
        assert r == 0
