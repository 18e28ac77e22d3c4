"""Dynamics of a single ride-sharing sub-process.

For a two-type service the state is the pair of waiting counts ``(n1, n2)``,
of which at most one is positive, so the reachable states form a line
``x = n1 - n2`` in ``[-N, N]``. A self-shared service holds at most one
waiting customer.

Functions here accept any numeric type, so transition probabilities can be
checked exactly with :class:`fractions.Fraction` inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._backend import kernels
from .errors import ActionError, NumericError, StateError
from .network import RsService

__all__ = [
    "SubState",
    "ActionPair",
    "EtaPair",
    "BellmanSolution",
    "SubProcessModel",
    "reachable_states",
    "admissible_actions",
    "reward_rate",
    "sojourn_rate",
    "transition_probs",
    "build_model",
    "bellman_backup",
    "solve_average_reward",
    "reference_condition",
    "policy_average_reward",
]

DEFAULT_MAX_SWEEPS = 200_000


@dataclass(frozen=True, order=True)
class SubState:
    n1: int
    n2: int


@dataclass(frozen=True, order=True)
class ActionPair:
    a1: int
    a2: int

    @property
    def code(self) -> int:
        return self.a1 + 2 * self.a2


@dataclass(frozen=True)
class EtaPair:
    eta1: float
    eta2: float


ZERO = SubState(0, 0)


@dataclass
class BellmanSolution:
    values: dict
    gain: float
    optimal_actions: dict
    policy: dict = field(default_factory=dict)


def _check_state(svc: RsService, s: SubState, N: int) -> None:
    if s.n1 < 0 or s.n2 < 0 or s.n1 > N or s.n2 > N:
        raise StateError(f"state {s} outside [0, {N}]^2")
    if svc.self_shared:
        if s.n2 != 0:
            raise StateError(f"self-shared service {svc.id} has no second queue: {s}")
    elif s.n1 > 0 and s.n2 > 0:
        raise StateError(f"service {svc.id}: both types waiting in {s}")


def reachable_states(svc: RsService, N: int) -> list:
    """States reachable from empty under admissible control, ordered by ``x``."""
    if svc.self_shared:
        return [SubState(0, 0), SubState(1, 0)]
    return [SubState(max(x, 0), max(-x, 0)) for x in range(-N, N + 1)]


def admissible_actions(svc: RsService, s: SubState, N: int, partner_fixed: bool = False) -> list:
    """Admissible action pairs at ``s``.

    With ``partner_fixed`` the slot-2 action is pinned to 1 wherever it is
    admissible, which gives the single-multiplier process.
    """
    _check_state(svc, s, N)
    if svc.self_shared:
        a1s = (0, 1) if s.n1 < 2 else (0,)
        return [ActionPair(a, 0) for a in a1s]
    a1s = (0, 1) if s.n1 < N else (0,)
    if partner_fixed:
        a2s = (1,) if s.n2 < N else (0,)
    else:
        a2s = (0, 1) if s.n2 < N else (0,)
    return [ActionPair(a1, a2) for a2 in a2s for a1 in a1s]


def _check_action(svc, s, a, N):
    if a not in admissible_actions(svc, s, N):
        raise ActionError(f"action {a} not admissible at {s} for service {svc.id}")


def reward_rate(svc: RsService, s: SubState, a: ActionPair, arrivals) -> float:
    """Expected reward per minute: matches at ``R`` plus reneges at ``Rbar - C``."""
    lam1, lam2 = arrivals
    if svc.self_shared:
        if s.n2 != 0:
            raise StateError(f"self-shared service {svc.id} has no second queue: {s}")
        if s.n1 == 0:
            return 0
        return svc.reward * a.a1 * lam1 + svc.renege_reward(0) * s.n1 * svc.reneging_rates[0]
    if s.n1 > 0 and s.n2 > 0:
        raise StateError(f"service {svc.id}: both types waiting in {s}")
    if s.n2 > 0:
        return svc.reward * a.a1 * lam1 + svc.renege_reward(1) * s.n2 * svc.reneging_rates[1]
    if s.n1 > 0:
        return svc.reward * a.a2 * lam2 + svc.renege_reward(0) * s.n1 * svc.reneging_rates[0]
    return 0


def _events(svc: RsService, s: SubState, a: ActionPair, arrivals, N: int) -> list:
    """(rate, next state) for every event that can fire from ``s``."""
    lam1, lam2 = arrivals
    mu1, mu2 = svc.reneging_rates
    ev = []
    if svc.self_shared:
        n = s.n1
        if a.a1:
            ev.append((lam1, SubState(n - 1, 0) if n > 0 else SubState(1, 0)))
        if n > 0:
            ev.append((n * mu1, SubState(n - 1, 0)))
        return ev
    n1, n2 = s.n1, s.n2
    if a.a1 and n1 < N:
        ev.append((lam1, SubState(0, n2 - 1) if n2 > 0 else SubState(n1 + 1, 0)))
    if a.a2 and n2 < N:
        ev.append((lam2, SubState(n1 - 1, 0) if n1 > 0 else SubState(0, n2 + 1)))
    if n1 > 0:
        ev.append((n1 * mu1, SubState(n1 - 1, 0)))
    if n2 > 0:
        ev.append((n2 * mu2, SubState(0, n2 - 1)))
    return ev


def sojourn_rate(svc: RsService, s: SubState, a: ActionPair, arrivals, N: int):
    """Total event rate out of ``s``; an active stream counts even when it matches."""
    _check_action(svc, s, a, N)
    return sum((r for r, _ in _events(svc, s, a, arrivals, N)), 0)


def transition_probs(svc: RsService, s: SubState, a: ActionPair, arrivals, N: int) -> dict:
    """Jump distribution of the embedded chain. Requires a positive sojourn rate."""
    _check_action(svc, s, a, N)
    ev = _events(svc, s, a, arrivals, N)
    u = sum((r for r, _ in ev), 0)
    if not u > 0:
        raise StateError(f"no event can fire from {s} under {a}")
    out: dict = {}
    for r, nxt in ev:
        if r:
            out[nxt] = out.get(nxt, 0) + r / u
    return out


@dataclass
class SubProcessModel:
    """Dense arrays for the kernels; action code ``c = a1 + 2*a2``."""

    svc: RsService
    N: int
    arrivals: tuple
    states: list
    rew: np.ndarray
    u: np.ndarray
    ndst: np.ndarray
    dst: np.ndarray
    prb: np.ndarray
    mask: np.ndarray

    @property
    def S(self) -> int:
        return len(self.states)

    def index(self, s: SubState) -> int:
        return self.states.index(s)

    def arrays(self, mask=None):
        m = self.mask if mask is None else mask
        return self.rew, self.u, self.ndst, self.dst, self.prb, m

    def restricted(self, restrict: dict) -> np.ndarray:
        """Mask with slot-1 action limited to ``restrict[state]`` (0 or 1)."""
        m = self.mask.copy()
        for s, a1 in restrict.items():
            i = self.index(s)
            for c in range(4):
                if (c & 1) != a1:
                    m[i, c] = 0
        return m


def build_model(svc: RsService, arrivals, N: int, partner_fixed: bool = False) -> SubProcessModel:
    states = reachable_states(svc, N)
    S = len(states)
    pos = {s: i for i, s in enumerate(states)}
    rew = np.zeros((S, 4))
    u = np.zeros((S, 4))
    ndst = np.zeros((S, 4), dtype=np.int64)
    dst = np.zeros((S, 4, 3), dtype=np.int64)
    prb = np.zeros((S, 4, 3))
    mask = np.zeros((S, 4), dtype=np.int8)
    lam = (float(arrivals[0]), float(arrivals[1]))
    for i, s in enumerate(states):
        for a in admissible_actions(svc, s, N, partner_fixed):
            c = a.code
            mask[i, c] = 1
            rew[i, c] = reward_rate(svc, s, a, lam)
            uc = sojourn_rate(svc, s, a, lam, N)
            u[i, c] = uc
            if uc > 0:
                for k, (nxt, p) in enumerate(transition_probs(svc, s, a, lam, N).items()):
                    dst[i, c, k] = pos[nxt]
                    prb[i, c, k] = p
                    ndst[i, c] = k + 1
    return SubProcessModel(svc, N, lam, states, rew, u, ndst, dst, prb, mask)


def _backup_value(svc, s, a, values, eta, g, beta, arrivals, N, ref):
    u = sojourn_rate(svc, s, a, arrivals, N)
    if not u > 0:
        if s == ref:
            return 0
        raise NumericError(f"zero sojourn rate at non-reference state {s}")
    r = reward_rate(svc, s, a, arrivals) - a.a1 * eta.eta1 - a.a2 * eta.eta2 - g
    nxt = transition_probs(svc, s, a, arrivals, N)
    return r / u + beta * sum(p * values[t] for t, p in nxt.items())


def bellman_backup(svc, values: dict, eta: EtaPair, g, beta, arrivals, N: int,
                   ref: SubState = ZERO, partner_fixed: bool = False, slack: float = 0.0):
    """One synchronous sweep with the reference state pinned to 0.

    Returns ``(new_values, argmax)`` where ``argmax[s]`` is the set of action
    pairs within ``slack`` of the best backup. At the reference state the
    argmax is over its own backups, with a zero-rate action worth 0.
    """
    new = {}
    arg = {}
    for s in reachable_states(svc, N):
        q = {a: _backup_value(svc, s, a, values, eta, g, beta, arrivals, N, ref)
             for a in admissible_actions(svc, s, N, partner_fixed)}
        best = max(q.values())
        arg[s] = {a for a, v in q.items() if v >= best - slack}
        new[s] = 0 if s == ref else best
    return new, arg


def reference_condition(svc, eta: EtaPair, g: float, arrivals, N: int, beta: float = 1.0,
                        tol: float = 1e-9) -> float:
    """Best non-null backup at the empty state after value iteration at fixed ``g``.

    Strictly decreasing in ``g``; it vanishes at the optimal gain whenever
    that gain is positive.
    """
    m = build_model(svc, arrivals, N)
    V = np.zeros(m.S)
    ref = m.index(ZERO)
    if kernels.vi_solve(*m.arrays(), eta.eta1, eta.eta2, g, beta, ref, V, tol, DEFAULT_MAX_SWEEPS) < 0:
        raise NumericError(f"value iteration did not converge at g={g}")
    return kernels.h_ref(*m.arrays(), eta.eta1, eta.eta2, g, beta, ref, V, 0)


def solve_average_reward(svc, eta: EtaPair, arrivals, N: int, tol: float = 1e-6,
                         beta: float = 1.0, partner_fixed: bool = False,
                         restrict: dict | None = None, ref: SubState = ZERO,
                         max_sweeps: int = DEFAULT_MAX_SWEEPS) -> BellmanSolution:
    """Optimal gain and relative values by bisection on g around value iteration.

    ``tol`` is the sweep tolerance; optimal actions are those whose backup
    is within ``10*tol`` (relative) of the best. ``restrict`` pins the slot-1
    action at chosen states.
    """
    m = build_model(svc, arrivals, N, partner_fixed)
    mask = m.mask if restrict is None else m.restricted(restrict)
    V = np.zeros(m.S)
    r = m.index(ref)
    g, st = kernels.gain_solve(m.rew, m.u, m.ndst, m.dst, m.prb, mask, float(eta.eta1),
                               float(eta.eta2), beta, r, V, tol, max_sweeps)
    if st != 0:
        raise NumericError(f"service {svc.id}: gain bisection failed near g={g} for eta={eta}")
    values = {s: float(V[i]) for i, s in enumerate(m.states)}
    opt = {}
    policy = {}
    for i, s in enumerate(m.states):
        q = {}
        for c in range(4):
            if not mask[i, c]:
                continue
            a = ActionPair(c & 1, c >> 1)
            if m.u[i, c] > 0:
                val = (m.rew[i, c] - a.a1 * eta.eta1 - a.a2 * eta.eta2 - g) / m.u[i, c]
                val += beta * sum(m.prb[i, c, k] * V[m.dst[i, c, k]] for k in range(m.ndst[i, c]))
            elif g > 0:
                # staying empty earns gain 0 < g
                continue
            else:
                val = 0.0
            q[a] = float(val)
        best = max(q.values())
        slack = 10 * tol * max(1.0, abs(best))
        opt[s] = {a for a, v in q.items() if v >= best - slack}
        policy[s] = max(opt[s], key=lambda a: (q[a], a.code))
    return BellmanSolution(values, float(g), opt, policy)


def policy_average_reward(svc, policy: dict, eta: EtaPair, arrivals, N: int) -> float:
    """Long-run reward rate of a stationary policy from its stationary distribution.

    The chain is started from the empty state; states it cannot reach get
    zero probability.
    """
    states = reachable_states(svc, N)
    pos = {s: i for i, s in enumerate(states)}
    S = len(states)
    Qm = np.zeros((S, S))
    r = np.zeros(S)
    for s in states:
        a = policy[s]
        i = pos[s]
        r[i] = reward_rate(svc, s, a, arrivals) - a.a1 * eta.eta1 - a.a2 * eta.eta2
        for rate, nxt in _events(svc, s, a, arrivals, N):
            Qm[i, pos[nxt]] += rate
            Qm[i, i] -= rate
    # restrict to the class reachable from the empty state
    seen = {pos[ZERO]}
    stack = [pos[ZERO]]
    while stack:
        i = stack.pop()
        for k in np.nonzero(Qm[i] > 0)[0]:
            if k != i and k not in seen:
                seen.add(int(k))
                stack.append(int(k))
    idx = sorted(seen)
    sub = Qm[np.ix_(idx, idx)]
    A = np.vstack([sub.T, np.ones(len(idx))])
    b = np.zeros(len(idx) + 1)
    b[-1] = 1.0
    pi = np.linalg.lstsq(A, b, rcond=None)[0]
    return float(pi @ r[idx])
