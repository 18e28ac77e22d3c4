import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from bimatch import _pykernels
from bimatch._backend import COMPILED
from bimatch.errors import ConfigError, InvariantError
from bimatch.indices import build_index_table
from bimatch.network import ArrivalProfile, RsService, ServiceCatalog
from bimatch.simulator import (
    CompiledSystem,
    SimulationJob,
    make_rng,
    replicate,
    sample_next_event,
    simulate,
    summarize,
    t_halfwidth,
)

from conftest import single_service_system
from oracles import always_active_service

N = 5
LAM = 5.0
POLICIES = ["bi", "jsq", "jlq", "myopic"]


@pytest.fixture(scope="module")
def fixture_table(fixture_catalog):
    return build_index_table(fixture_catalog, {1: LAM, 2: LAM}, N)


def run(cat, policy, table, horizon=500.0, seed=3, **kw):
    prof = [ArrivalProfile.constant(LAM)] * 2
    return simulate(cat, policy, prof, horizon, seed=seed, index=table, N=N, **kw)


# exponential race


def test_race_frequencies():
    rng = make_rng(1)
    n = 20_000
    hits = sum(sample_next_event({"a": 5.0, "b": 1.0}, 0.0, math.inf, rng).label == "a" for _ in range(n))
    # 5 / 6 within four binomial standard deviations
    assert abs(hits / n - 5 / 6) < 4 * math.sqrt(5 / 36 / n)


def test_race_times_are_exponential():
    rng = make_rng(2)
    dts = [sample_next_event({"a": 2.0, "b": 1.5}, 0.0, math.inf, rng).time for _ in range(5000)]
    assert stats.kstest(dts, "expon", args=(0, 1 / 3.5)).pvalue > 1e-3


def test_race_edge_cases():
    rng = make_rng(0)
    ev = sample_next_event({"a": 0.0}, 4.0, 60.0, rng)
    assert ev.kind == "edge" and ev.time == 60.0
    with pytest.raises(ConfigError):
        sample_next_event({"a": -1.0}, 0.0, 60.0, rng)
    # a draw crossing the interval end stops at the edge
    ev = sample_next_event({"a": 1e-9}, 0.0, 1.0, rng)
    assert ev.kind == "edge" and ev.time == 1.0
    ev = sample_next_event({("renege", 3): 2.0}, 0.0, math.inf, rng)
    assert ev.kind == "renege" and ev.label == ("renege", 3)


def test_rates_switch_at_interval_edges(fixture_catalog):
    prof = [ArrivalProfile((0.0, 60.0), (10.0, 2.0), period=120.0)] * 2
    counts = np.zeros(2)
    for seed in range(20):
        m = simulate(fixture_catalog, "jsq", prof, 120.0, 0.0, seed=seed, N=N, trace_cap=100_000)
        t, code = m.trace
        arr = t[code[:, 0] != 2]
        counts += [np.sum(arr < 60.0), np.sum(arr >= 60.0)]
    # two types at 10 and 2 per minute over 60 minutes and 20 runs
    assert counts[0] / 20 == pytest.approx(1200, rel=0.03)
    assert counts[1] / 20 == pytest.approx(240, rel=0.06)


# backends and determinism


@pytest.mark.skipif(not COMPILED, reason="compiled core not built")
@pytest.mark.parametrize("policy", POLICIES)
def test_compiled_and_python_backends_agree_bit_for_bit(fixture_catalog, fixture_table, policy):
    a = run(fixture_catalog, policy, fixture_table, 300.0, trace_cap=50_000)
    b = run(fixture_catalog, policy, fixture_table, 300.0, trace_cap=50_000, backend=_pykernels)
    assert a.scalars() == b.scalars()
    assert (a.arrivals, a.matches, a.reneges, a.n_events) == (b.arrivals, b.matches, b.reneges, b.n_events)
    assert np.array_equal(a.trace[0], b.trace[0]) and np.array_equal(a.trace[1], b.trace[1])
    assert np.array_equal(a.hourly_reward_rate, b.hourly_reward_rate)


@pytest.mark.parametrize("policy", POLICIES)
def test_same_seed_same_run(fixture_catalog, fixture_table, policy):
    a = run(fixture_catalog, policy, fixture_table, trace_cap=10_000)
    b = run(fixture_catalog, policy, fixture_table, trace_cap=10_000)
    assert a.scalars() == b.scalars()
    assert np.array_equal(a.trace[1], b.trace[1])
    c = run(fixture_catalog, policy, fixture_table, seed=4)
    assert c.n_events != a.n_events or c.scalars() != a.scalars()


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.2, 8.0), st.floats(0.2, 8.0), st.sampled_from(POLICIES[1:]))
def test_conservation_and_state_safety(fixture_catalog, seed, l1, l2, policy):
    prof = [ArrivalProfile.constant(l1), ArrivalProfile.constant(l2)]
    m = simulate(fixture_catalog, policy, prof, 200.0, 0.0, seed=seed, N=N)
    assert m.arrivals == 2 * m.matches + m.reneges + m.waiting
    fc = m.final_counts
    assert fc.min() >= 0 and np.all(fc.prod(axis=1) == 0)
    for j, svc in enumerate(fixture_catalog.services):
        assert fc[j].max() <= (1 if svc.self_shared else N)


# accounting


def test_reward_and_delay_accounting(fixture_catalog, fixture_table):
    m = run(fixture_catalog, "bi", fixture_table, 400.0, warmup=0.0)
    assert m.average_reward == pytest.approx(m.cumulative_reward / 400.0, rel=1e-12)
    # each match records two delays (the arriver waits zero) and each renege one
    assert m.delay_count == 2 * m.matches + m.reneges
    assert m.hourly_reward_rate.sum() * 60.0 == pytest.approx(m.cumulative_reward, rel=1e-9)
    assert len(m.hourly_reward_rate) == math.ceil(400.0 / 60.0)
    no = run(fixture_catalog, "bi", fixture_table, 400.0, warmup=0.0, include_reneged=False)
    assert no.delay_count == 2 * no.matches
    assert no.average_reward == m.average_reward


def test_zero_arrivals_produce_nothing(fixture_catalog):
    prof = [ArrivalProfile.constant(0.0)] * 2
    m = simulate(fixture_catalog, "jsq", prof, 100.0, seed=0, N=N)
    assert (m.arrivals, m.n_events, m.cumulative_reward, m.mean_queue) == (0, 0, 0.0, 0.0)


def test_matches_always_active_ctmc():
    cat, tab = single_service_system(R=10.0, rbar=1.0, C=0.0, mu=1.0, N=3)
    prof = [ArrivalProfile.constant(2.0)] * 2
    m = simulate(cat, "bi", prof, 20_000.0, 1_000.0, seed=5, index=tab, N=3)
    reward, queue = always_active_service(10.0, 1.0, 0.0, 2.0, 1.0, 3)
    assert m.average_reward == pytest.approx(reward, rel=0.03)
    assert m.mean_queue == pytest.approx(queue, rel=0.03)


def test_no_admissible_service_aborts_with_trace():
    pair = RsService(1, (1, 2), False, 1.0, 10.0, (1.0, 1.0), (1e-6, 1e-6), (0.0, 0.0))
    cat = ServiceCatalog([pair], {1: [1], 2: [1]})
    prof = [ArrivalProfile.constant(1.0), ArrivalProfile.constant(0.0)]
    with pytest.raises(InvariantError, match="trace tail"):
        simulate(cat, "jsq", prof, 1000.0, 0.0, seed=0, N=2, trace_cap=100)


def test_config_errors(fixture_catalog, fixture_table):
    prof = [ArrivalProfile.constant(LAM)] * 2
    with pytest.raises(ConfigError):
        simulate(fixture_catalog, "random", prof, 100.0, N=N)
    with pytest.raises(ConfigError):
        simulate(fixture_catalog, "bi", prof, 100.0, N=N)
    with pytest.raises(ConfigError):
        simulate(fixture_catalog, "jsq", prof, 100.0, 100.0, N=N)
    with pytest.raises(ConfigError):
        simulate(fixture_catalog, "jsq", prof[:1], 100.0, N=N)
    with pytest.raises(ConfigError):
        simulate(fixture_catalog, "jsq", prof, 100.0)
    other = [ArrivalProfile.constant(1.0)] * 2
    with pytest.raises(ConfigError):
        simulate(fixture_catalog, "bi", other, 100.0, N=N, index={"nope": fixture_table})


# replications


class _Fixed:
    def __init__(self, **vals):
        self.vals = vals

    def scalars(self):
        return dict(self.vals)


def test_t_halfwidth():
    v = [1.0, 2.0, 4.0, 7.0]
    expect = stats.t.ppf(0.975, 3) * np.std(v, ddof=1) / 2
    assert t_halfwidth(v) == pytest.approx(expect, rel=1e-12)
    assert t_halfwidth([3.0, 3.0, 3.0]) == 0.0
    assert t_halfwidth([1.0]) == math.inf


def test_summary_flags_only_noisy_metrics():
    rows = [_Fixed(a=5.0, b=1.0 + (i % 2) * 9.0) for i in range(10)]
    s = summarize(rows)
    assert s.halfwidths["a"] == 0.0 and not s.flags["a"]
    assert s.flags["b"]


def test_replicate_needs_two_runs(fixture_catalog):
    job = SimulationJob(CompiledSystem.build(fixture_catalog, N), "jsq", (ArrivalProfile.constant(LAM),) * 2, 50.0)
    with pytest.raises(ConfigError):
        replicate(job, 1, 0)


def test_replicate_order_independent_of_workers(fixture_catalog):
    job = SimulationJob(CompiledSystem.build(fixture_catalog, N), "jsq", (ArrivalProfile.constant(LAM),) * 2, 100.0)
    a = replicate(job, 4, 100, workers=1)
    b = replicate(job, 4, 100, workers=2)
    assert [m.scalars() for m in a.metrics] == [m.scalars() for m in b.metrics]
    assert a.means == b.means


def test_uniform_network_bi_reward_is_tight(uniform_catalog, uniform_spec):
    from bimatch.simulator import network_profiles

    prof = network_profiles(uniform_spec)
    rates = {t.id: t.profile(0.0) for t in uniform_spec.types}
    tab = build_index_table(uniform_catalog, rates, N)
    job = SimulationJob(CompiledSystem.build(uniform_catalog, N), "bi", tuple(prof), 3e4, index=tab)
    s = replicate(job, 30, 0)
    assert s.halfwidths["average_reward"] <= 0.03 * s.means["average_reward"]
