import numpy as np
import pytest

from bimatch import _pykernels
from bimatch._backend import COMPILED
from bimatch.mdp import ZERO, build_model

N = 5
LAM = (5.0, 5.0)

compiled_only = pytest.mark.skipif(not COMPILED, reason="compiled core not built")


@pytest.fixture(scope="module")
def model(pair_service):
    return build_model(pair_service, LAM, N)


@pytest.fixture(scope="module")
def role_model(pair_service):
    return build_model(pair_service, LAM, N, partner_fixed=True)


def arrays(m):
    return m.rew, m.u, m.ndst, m.dst, m.prb, m.mask


@pytest.mark.parametrize("eta", [0.0, 3.0, 40.0])
def test_discounted_policy_iteration_is_the_value_iteration_fixed_point(model, eta):
    ref = model.index(ZERO)
    V_pi = np.zeros(model.S)
    pol = np.full(model.S, 3, dtype=np.int64)
    assert _pykernels.discounted_solve(*arrays(model), eta, 0.9, ref, pol, V_pi, 100) == 0
    V_vi = np.zeros(model.S)
    assert _pykernels.vi_solve(*arrays(model), eta, 0.0, 0.0, 0.9, ref, V_vi, 1e-12, 100_000) > 0
    assert np.allclose(V_pi, V_vi, atol=1e-9)


def test_value_iteration_reports_non_convergence(model):
    V = np.zeros(model.S)
    assert _pykernels.vi_solve(*arrays(model), 0.0, 0.0, 0.0, 0.999, model.index(ZERO), V, 1e-12, 3) == -1


def test_policy_iteration_and_relative_value_iteration_agree(model):
    ref = model.index(ZERO)
    h = np.zeros(model.S)
    pol = np.full(model.S, 3, dtype=np.int64)
    g_pi, st = _pykernels.pi_solve(*arrays(model), 4.0, 2.0, ref, pol, h, 100)
    assert st == 0
    g_vi, st = _pykernels.gain_solve(*arrays(model), 4.0, 2.0, 1.0, ref, np.zeros(model.S), 1e-11, 500_000)
    assert st == 0
    assert g_pi == pytest.approx(g_vi, abs=1e-8)


def test_uncontrollable_state_gets_minus_infinity(role_model):
    full = role_model.S - 1
    assert not (role_model.mask[full, 1] or role_model.mask[full, 3])
    eta, st = _pykernels.whittle_state(*arrays(role_model), full, 0, True, 1.0, 1e-9, 100)
    assert st == 0 and eta == -np.inf
    eta, st = _pykernels.terminal_state(*arrays(role_model), full, 0, 0.999, 1e-9, 100)
    assert st == 0 and eta == -np.inf
    eta, st = _pykernels.terminal_state(*arrays(role_model), 0, 0, 0.999, 1e-9, 100)
    assert (eta, st) == (0.0, 0)


@compiled_only
@pytest.mark.parametrize("exact", [True, False])
def test_whittle_state_backends_agree(role_model, exact):
    from bimatch import _kernels

    # light damping keeps the pure-Python sweeps short
    beta, it = (1.0, 100) if exact else (0.9, 10_000)
    for i in range(role_model.S):
        a = _kernels.whittle_state(*arrays(role_model), i, 0, exact, beta, 1e-6, it)
        b = _pykernels.whittle_state(*arrays(role_model), i, 0, exact, beta, 1e-6, it)
        assert a == b


@compiled_only
def test_terminal_state_backends_agree(role_model):
    from bimatch import _kernels

    for i in range(role_model.S):
        a = _kernels.terminal_state(*arrays(role_model), i, 0, 0.999, 1e-9, 100)
        b = _pykernels.terminal_state(*arrays(role_model), i, 0, 0.999, 1e-9, 100)
        assert a == b


@compiled_only
def test_average_reward_backends_agree(model):
    from bimatch import _kernels

    ref = model.index(ZERO)
    out = []
    for k in (_kernels, _pykernels):
        h = np.zeros(model.S)
        pol = np.full(model.S, 3, dtype=np.int64)
        g, st = k.pi_solve(*arrays(model), 4.0, 2.0, ref, pol, h, 100)
        out.append((g, st, h.tolist(), pol.tolist()))
    assert out[0] == out[1]
