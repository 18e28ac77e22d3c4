import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bimatch.errors import ConfigError, UsageError
from bimatch.indices import (
    BoundaryCurve,
    IndexTable,
    boundary_sweep,
    build_index_table,
    rates_key,
    verify_priority_consistency,
    whittle_index_numeric,
    whittle_index_self_shared,
)
from bimatch.mdp import ZERO, SubState, build_model, reachable_states
from bimatch.network import RsService, ServiceCatalog

from oracles import brute_force_index, discounted_terminal_index, self_shared_closed_form

LAM = (5.0, 5.0)
N = 5

# fixture pair service, type 1, states x = n1 - n2 = -5..5
FROZEN_EXACT = [48.57566089336615, 47.28416569875117, 46.38142174433597, 45.83277814786561,
                45.51669973547541, 29.97757527569047, 21.805544125272718, 17.208421765863022,
                14.420314926748688, 12.609384218863852]
FROZEN_VI = [48.579816818237305, 47.29691696166992, 46.404266357421875, 45.86390686035156,
             45.55351257324219, 30.037643432617188, 21.7989501953125, 17.159217834472656,
             14.339073181152344, 12.501594543457031]
FROZEN_TERMINAL = [0.0, 54.3962586671114, 52.35352177731693, 50.9468951523304, 49.936809580773115,
                   42.12730796635151, 36.375827211886644, 31.96788075938821, 28.479654148221016,
                   25.653044894337654]


def by_x(d):
    return [d[SubState(max(x, 0), max(-x, 0))] for x in range(-N, N + 1)]


def svc_pair(R, rbar, mu, C):
    return RsService(3, (1, 2), False, 1.0, R, rbar, mu, C)


def svc_self(R, rbar, mu, C):
    return RsService(1, (1, 1), True, 1.0, R, (rbar, rbar), (mu, mu), (C, C))


# closed form


def test_self_shared_closed_form_examples(fixture_catalog):
    cf = whittle_index_self_shared(fixture_catalog.service(1), 5.0)
    assert cf[ZERO] == pytest.approx(255 / 11, rel=1e-15)
    assert cf[SubState(1, 0)] == pytest.approx(255 / 11, rel=1e-15)
    cf = whittle_index_self_shared(svc_self(1.0, 1.0, 0.5, 0.0), 0.3)
    assert cf[ZERO] == pytest.approx(0.3, rel=1e-15)
    assert cf[SubState(1, 0)] == pytest.approx(0.3 / 1.1 * 0.3, rel=1e-15)
    assert cf[SubState(1, 0)] == pytest.approx(0.0818, abs=5e-5)
    assert whittle_index_self_shared(svc_self(3.0, 2.0, 0.5, 2.0), 0.3)[ZERO] == pytest.approx(
        0.3 / 1.1 * 0.3 * 3.0)


def test_zero_net_renege_reward():
    # C = Rbar leaves only the match term: lam^2 R / (2 lam + mu)
    cf = whittle_index_self_shared(svc_self(1.0, 1.0, 0.5, 1.0), 0.3)
    assert cf[ZERO] == cf[SubState(1, 0)] == pytest.approx(0.09 / 1.1, rel=1e-15)
    cf = whittle_index_self_shared(svc_self(0.0, 1.0, 0.5, 1.0), 0.3)
    assert cf[ZERO] == 0.0


def test_closed_form_rejects_pair(pair_service):
    with pytest.raises(UsageError):
        whittle_index_self_shared(pair_service, 5.0)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.1, 5), st.floats(0.1, 5), st.floats(1, 100), st.floats(0.5, 10), st.floats(0, 1))
def test_numeric_matches_closed_form(lam, mu, R, rbar, cfrac):
    svc = svc_self(R, rbar, mu, cfrac * rbar)
    num = whittle_index_numeric(svc, 1, (lam, lam), N, method="exact", sigma=1e-9)
    e0, e1 = self_shared_closed_form(lam, mu, R, rbar, cfrac * rbar)
    assert num[ZERO] == pytest.approx(e0, rel=1e-6, abs=1e-9)
    assert num[SubState(1, 0)] == pytest.approx(e1, rel=1e-6, abs=1e-9)


# frozen values on the fixture


def test_frozen_exact(pair_service):
    got = by_x(whittle_index_numeric(pair_service, 1, LAM, N, method="exact"))
    assert got[-1] == -math.inf
    np.testing.assert_allclose(got[:-1], FROZEN_EXACT, rtol=1e-9)


def test_frozen_vi(pair_service):
    got = by_x(whittle_index_numeric(pair_service, 1, LAM, N))
    np.testing.assert_allclose(got[:-1], FROZEN_VI, rtol=1e-9)
    # same indifference point as the exact route, up to the damping
    np.testing.assert_allclose(got[:-1], FROZEN_EXACT, rtol=1e-2)


def test_frozen_terminal(pair_service):
    got = by_x(whittle_index_numeric(pair_service, 1, LAM, N, method="terminal", sigma=1e-9))
    np.testing.assert_allclose(got[:-1], FROZEN_TERMINAL, rtol=1e-9)


def test_roles_are_mirror_images(pair_service):
    r1 = whittle_index_numeric(pair_service, 1, LAM, N, method="exact")
    r2 = whittle_index_numeric(pair_service, 2, LAM, N, method="exact")
    for s, v in r1.items():
        assert r2[SubState(s.n2, s.n1)] == v


def test_partner_queue_ordering(pair_service):
    # nested active areas: one total order over states. The index rises with the
    # partner queue and falls with the own queue.
    got = by_x(whittle_index_numeric(pair_service, 1, LAM, N, method="exact"))[:-1]
    assert all(a > b for a, b in zip(got, got[1:]))


def test_unknown_method_and_bad_role(pair_service):
    with pytest.raises(UsageError):
        whittle_index_numeric(pair_service, 1, LAM, N, method="bogus")
    with pytest.raises(UsageError):
        whittle_index_numeric(pair_service, 3, LAM, N)
    with pytest.raises(UsageError):
        whittle_index_numeric(pair_service, 1, LAM, N, sigma=0.0)


# independent oracles


pair_params = st.tuples(
    st.floats(2, 50), st.floats(0.2, 3), st.floats(0.2, 3), st.floats(0.2, 3), st.floats(0.2, 3),
    st.floats(0.2, 4), st.floats(0.2, 4), st.floats(0, 1),
)


def _pair_from(p):
    R, r1, r2, m1, m2, l1, l2, cf = p
    r1, r2 = min(r1, R / 2), min(r2, R / 2)
    return svc_pair(R, (r1, r2), (m1, m2), (cf * r1, cf * r2)), (l1, l2)


@settings(max_examples=8, deadline=None)
@given(pair_params)
def test_exact_route_matches_policy_enumeration(p):
    svc, lam = _pair_from(p)
    n = 3
    got = whittle_index_numeric(svc, 1, lam, n, method="exact", sigma=1e-10)
    m = build_model(svc, lam, n, partner_fixed=True)
    for i, s in enumerate(m.states[:-1]):
        assert got[s] == pytest.approx(brute_force_index(m, i), rel=1e-6, abs=1e-6)


@settings(max_examples=5, deadline=None)
@given(pair_params)
def test_terminal_route_matches_discounted_enumeration(p):
    svc, lam = _pair_from(p)
    n = 3
    got = whittle_index_numeric(svc, 1, lam, n, method="terminal", sigma=1e-10)
    m = build_model(svc, lam, n, partner_fixed=True)
    for i, s in enumerate(m.states[:-1]):
        assert got[s] == pytest.approx(discounted_terminal_index(m, i, 0, 0.999), rel=1e-6, abs=1e-6)


@settings(max_examples=10, deadline=None)
@given(pair_params, st.floats(0.1, 20))
def test_indices_scale_with_rewards(p, c):
    svc, lam = _pair_from(p)
    scaled = svc_pair(c * svc.reward, tuple(c * r for r in svc.ns_rewards), svc.reneging_rates,
                      tuple(c * x for x in svc.penalties))
    a = whittle_index_numeric(svc, 1, lam, 4, method="exact", sigma=1e-10)
    b = whittle_index_numeric(scaled, 1, lam, 4, method="exact", sigma=1e-10)
    for s in a:
        if math.isinf(a[s]):
            assert b[s] == a[s]
        else:
            assert b[s] == pytest.approx(c * a[s], rel=1e-6, abs=1e-6 * c)
    order = lambda d: sorted(d, key=lambda s: (-d[s], s))
    assert order(a) == order(b)


# degenerate rates and rewards


@pytest.mark.parametrize("method,tol", [("exact", 1e-9), ("terminal", 1e-9), ("vi", 1e-4)])
def test_zero_reward_process(method, tol):
    svc = svc_pair(0.0, (0.0, 0.0), (1.0, 1.0), (0.0, 0.0))
    got = whittle_index_numeric(svc, 1, LAM, N, method=method)
    assert all(v == -math.inf if s == SubState(N, 0) else abs(v) < tol for s, v in got.items())


def test_zero_own_rate(pair_service):
    got = whittle_index_numeric(pair_service, 1, (0.0, 5.0), N, method="exact")
    assert all(v == -math.inf if s == SubState(N, 0) else v == 0.0 for s, v in got.items())


def test_zero_partner_rate_matches_enumeration(pair_service):
    n = 3
    got = whittle_index_numeric(pair_service, 1, (5.0, 0.0), n, method="exact", sigma=1e-10)
    m = build_model(pair_service, (5.0, 0.0), n, partner_fixed=True)
    ref = m.index(ZERO)
    for i, s in enumerate(m.states[:-1]):
        if i < ref:
            assert got[s] == 0.0  # a partner never waits
        else:
            assert got[s] == pytest.approx(brute_force_index(m, i, ref=ref), rel=1e-6)


# index tables


def test_fixture_table(fixture_catalog):
    rates = {1: 5.0, 2: 5.0}
    tab = build_index_table(fixture_catalog, rates, N)
    assert tab.value(1, 1, ZERO, fixture_catalog) == pytest.approx(255 / 11)
    assert tab.value(1, 1, SubState(2, 0), fixture_catalog) == -math.inf
    assert tab.value(1, 3, SubState(0, 5), fixture_catalog) == pytest.approx(FROZEN_EXACT[0], rel=1e-9)
    assert tab.value(2, 3, SubState(5, 0), fixture_catalog) == pytest.approx(FROZEN_EXACT[0], rel=1e-9)
    assert tab.value(1, 3, SubState(5, 0), fixture_catalog) == -math.inf
    with pytest.raises(ConfigError):
        tab.value(2, 1, ZERO, fixture_catalog)
    assert tab.dense(fixture_catalog).shape == (4, 2 * N + 1)


def test_self_shared_only_catalog_skips_solver(monkeypatch):
    import bimatch.indices as ix

    def boom(*a, **k):
        raise AssertionError("numeric solve invoked")

    monkeypatch.setattr(ix, "_role_indices", boom)
    cat = ServiceCatalog([svc_self(10.0, 1.0, 1.0, 0.0)], {1: [1]})
    tab = build_index_table(cat, {1: 5.0}, N)
    assert tab.value(1, 1, ZERO, cat) == pytest.approx(255 / 11)


def test_finite_exactly_on_controllable_states(uniform_catalog):
    rates = {ell: 0.3 for ell in uniform_catalog.by_type}
    tab = build_index_table(uniform_catalog, rates, N)
    n_self = sum(s.self_shared for s in uniform_catalog.services)
    n_pair = uniform_catalog.J - n_self
    finite = sum(int(np.isfinite(a).sum()) for a in tab.entries.values())
    assert finite == 2 * n_self + 2 * (2 * N) * n_pair
    again = build_index_table(uniform_catalog, rates, N)
    assert all(np.array_equal(tab.entries[k], again.entries[k]) for k in tab.entries)


def test_save_load_roundtrip_and_stale_cache(tmp_path, fixture_catalog):
    rates = {1: 5.0, 2: 5.0}
    tab = build_index_table(fixture_catalog, rates, N)
    p = tmp_path / "idx.tsv"
    tab.save(p, fixture_catalog)
    back = IndexTable.load(p, fixture_catalog, rates, tab.beta, tab.sigma, "exact")
    assert back.entries.keys() == tab.entries.keys()
    for k in tab.entries:
        assert np.array_equal(back.entries[k], tab.entries[k])
    with pytest.raises(ConfigError, match="rebuild"):
        IndexTable.load(p, fixture_catalog, {1: 5.0, 2: 4.0})
    with pytest.raises(ConfigError, match="method"):
        IndexTable.load(p, fixture_catalog, method="vi")
    other = ServiceCatalog([svc_self(9.0, 1.0, 1.0, 0.0)], {1: [1]})
    with pytest.raises(ConfigError, match="catalog"):
        IndexTable.load(p, other)


def test_rates_key_distinguishes_rates():
    assert rates_key({1: 0.3, 2: 0.3}) == rates_key({2: 0.3, 1: 0.3})
    assert rates_key({1: 0.3, 2: 0.3}) != rates_key({1: 0.3, 2: 0.30000000000000004})


# boundary curves


def test_boundary_sweep_shape(pair_service):
    curves = boundary_sweep(pair_service, LAM, N, [-60.0])
    assert len(curves) == 2 * N
    assert all(len(c.samples) == 1 and c.action_slot == 1 for c in curves)
    assert all(c.both_optimal == [True] for c in curves)
    assert {c.state for c in curves} == set(reachable_states(pair_service, N)) - {SubState(N, 0)}
    slot2 = boundary_sweep(pair_service, LAM, N, [-60.0], slot=2)
    assert {c.state for c in slot2} == set(reachable_states(pair_service, N)) - {SubState(0, N)}


def test_boundary_sweep_degenerate_service():
    svc = svc_pair(2.0, (1.0, 1.0), (1.0, 1.0), (0.0, 0.0))
    curves = boundary_sweep(svc, LAM, N, [-50.0])
    assert all(math.isfinite(c.samples[0][1]) for c in curves)


def test_boundary_sweep_rejects_self_shared(fixture_catalog):
    with pytest.raises(UsageError):
        boundary_sweep(fixture_catalog.service(1), LAM, N, [-20.0])


def _curves(vals, grid=(-100.0, -20.0)):
    return [BoundaryCurve(s, 1, [(g, v) for g in grid]) for s, v in vals.items()]


def test_consistency_of_identical_inputs():
    vals = {SubState(0, 1): 3.0, ZERO: 2.0, SubState(1, 0): 1.0}
    rep = verify_priority_consistency(_curves(vals), vals)
    assert rep.ok and rep.orderings_agree and rep.max_spread == 0.0


def test_consistency_flags_perturbed_state():
    vals = {SubState(0, 1): 30.0, ZERO: 20.0, SubState(1, 0): 10.0}
    bumped = dict(vals)
    bumped[ZERO] += 1.0
    rep = verify_priority_consistency(_curves(vals), bumped)
    assert not rep.ok
    assert len(rep.failures) == 1 and rep.failures[0].startswith("state (0,0)")
