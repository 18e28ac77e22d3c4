"""Whittle and bivariate indices for ride-sharing sub-processes.

Indices are computed per customer type ("role") of a service: the role's
own arrival stream is controlled by a multiplier while the partner stream
is held active wherever admissible. Two numeric routes share one bisection
driver. The ``"vi"`` route uses damped value iteration nested in a
bisection on the gain g. The ``"exact"`` route uses average-reward policy
iteration with a direct linear solve. Both find the same indifference point.
"""

from __future__ import annotations

import csv
import hashlib
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._backend import kernels
from .errors import ConfigError, NumericError, UsageError
from .mdp import ZERO, EtaPair, SubState, build_model, reachable_states, solve_average_reward
from .network import RsService, ServiceCatalog

__all__ = [
    "IndexTable",
    "BoundaryCurve",
    "ConsistencyReport",
    "whittle_index_self_shared",
    "whittle_index_numeric",
    "build_index_table",
    "boundary_sweep",
    "verify_priority_consistency",
    "two_type_fixture",
    "rates_key",
]

DEFAULT_BETA = 0.999
DEFAULT_SIGMA = 1e-6
MAX_SWEEPS = 200_000
MAX_PI_ITER = 500
METHODS = ("terminal", "vi", "exact")


def whittle_index_self_shared(svc: RsService, lam: float) -> dict:
    """Closed-form indices of the empty and one-waiting states."""
    if not svc.self_shared:
        raise UsageError(f"service {svc.id} is not self-shared")
    R = svc.reward
    D = svc.renege_reward(0)
    mu = svc.reneging_rates[0]
    if R < 2 * D:
        eta0 = lam * D
        eta1 = lam / (2 * lam + mu) * ((lam + mu) * R - mu * D)
    else:
        eta0 = eta1 = lam / (2 * lam + mu) * (lam * R + mu * D)
    return {SubState(0, 0): eta0, SubState(1, 0): eta1}


def _role_view(svc: RsService, role: int, arrivals) -> tuple:
    """Service and arrival pair reoriented so that ``role`` sits in slot 1."""
    if role not in (1, 2):
        raise UsageError(f"role must be 1 or 2, got {role}")
    lam = (float(arrivals[0]), float(arrivals[1]))
    if role == 2 and not svc.self_shared:
        return svc.swapped(), lam[::-1]
    return svc, lam


def _orient(s: SubState, role: int, self_shared: bool) -> SubState:
    return SubState(s.n2, s.n1) if role == 2 and not self_shared else s


def _role_indices(svc: RsService, role: int, arrivals, N: int, beta: float, sigma: float,
                  method: str) -> np.ndarray:
    """Index per reachable state in role orientation (array ordered like the model states)."""
    if method not in METHODS:
        raise UsageError(f"unknown index method {method!r}; choose from {METHODS}")
    view, lam = _role_view(svc, role, arrivals)
    m = build_model(view, lam, N, partner_fixed=True)
    # reference state: the partner queue full for two-type services, empty for self-shared
    ref = 0
    out = np.empty(m.S)
    exact = method == "exact"
    ctrl = (m.mask[:, 1] | m.mask[:, 3]).astype(bool)
    if lam[0] == 0.0:
        # without own arrivals the action changes nothing: indifferent at eta = 0
        return np.where(ctrl, 0.0, -np.inf)
    first = 0
    if lam[1] == 0.0 and not svc.self_shared:
        # no partner ever arrives: states with a partner waiting never occur,
        # and the empty state is the only one every policy returns to
        ref = first = m.index(ZERO)
        out[:ref] = 0.0
    for i in range(first, m.S):
        if method == "terminal":
            eta, st = kernels.terminal_state(m.rew, m.u, m.ndst, m.dst, m.prb, m.mask, i, ref,
                                             beta, sigma, MAX_PI_ITER)
        else:
            eta, st = kernels.whittle_state(m.rew, m.u, m.ndst, m.dst, m.prb, m.mask, i, ref,
                                            exact, beta, sigma, MAX_SWEEPS if not exact else MAX_PI_ITER)
        if st != 0:
            raise NumericError(
                f"index solve failed: service {svc.id}, role {role}, state {m.states[i]}"
            )
        out[i] = eta
    return out


def whittle_index_numeric(svc: RsService, role: int, arrivals, N: int,
                          beta: float = DEFAULT_BETA, sigma: float = DEFAULT_SIGMA,
                          method: str = "vi") -> dict:
    """Index of every reachable state for the customer type in slot ``role``.

    Keys are states in the service's own orientation; states where the
    role cannot be routed to the service map to ``-inf``.
    """
    if not (sigma > 0 and 0 <= beta <= 1):
        raise UsageError("need sigma > 0 and beta in [0, 1]")
    vals = _role_indices(svc, role, arrivals, N, beta, sigma, method)
    states = reachable_states(_role_view(svc, role, arrivals)[0], N)
    return {_orient(s, role, svc.self_shared): float(v) for s, v in zip(states, vals)}


def rates_key(rates: dict) -> str:
    h = hashlib.sha256()
    for ell in sorted(rates):
        h.update(f"{ell}:{float(rates[ell]).hex()};".encode())
    return h.hexdigest()[:16]


@dataclass
class IndexTable:
    """Index per (type, service, state).

    ``entries[(l, j)]`` is an array over ``x + N`` where ``x`` is the type's
    own waiting count minus its partner's; positions that are not
    controllable states hold ``-inf``.
    """

    N: int
    entries: dict
    beta: float
    sigma: float
    method: str
    catalog_hash: str
    rates_key: str

    def value(self, ell: int, j: int, s: SubState, catalog: ServiceCatalog) -> float:
        svc = catalog.service(j)
        if svc.self_shared:
            x = s.n1
        else:
            own, partner = (s.n1, s.n2) if svc.slot_of(ell) == 0 else (s.n2, s.n1)
            x = own - partner
        try:
            return float(self.entries[(ell, j)][x + self.N])
        except KeyError:
            raise ConfigError(f"index table has no entry for type {ell}, service {j}") from None

    def dense(self, catalog: ServiceCatalog) -> np.ndarray:
        """Rows in per-type service order, as consumed by the simulator."""
        rows = []
        for ell in sorted(catalog.by_type):
            for j in catalog.by_type[ell]:
                if (ell, j) not in self.entries:
                    raise ConfigError(f"index table has no entry for type {ell}, service {j}")
                rows.append(self.entries[(ell, j)])
        return np.array(rows, dtype=float).reshape(len(rows), 2 * self.N + 1)

    def save(self, path, catalog: ServiceCatalog) -> None:
        """Write rows ``(l, j, n1, n2, eta)`` over reachable states, service orientation."""
        with open(path, "w", newline="") as f:
            f.write(f"# catalog_hash={self.catalog_hash}\n")
            f.write(f"# rates_key={self.rates_key}\n")
            f.write(f"# beta={self.beta!r} sigma={self.sigma!r} method={self.method} N={self.N}\n")
            w = csv.writer(f, dialect="excel-tab", lineterminator="\n")
            w.writerow(["l", "j", "n1", "n2", "eta"])
            for (ell, j), arr in sorted(self.entries.items()):
                svc = catalog.service(j)
                for s in reachable_states(svc, self.N):
                    w.writerow([ell, j, s.n1, s.n2, repr(self.value(ell, j, s, catalog))])

    @classmethod
    def load(cls, path, catalog: ServiceCatalog, rates: dict | None = None,
             beta: float | None = None, sigma: float | None = None,
             method: str | None = None) -> "IndexTable":
        """Read a saved table, refusing it if any key input changed."""
        header = {}
        with open(path) as f:
            lines = f.read().splitlines()
        body = []
        for line in lines:
            if line.startswith("#"):
                for tok in line[1:].split():
                    k, _, v = tok.partition("=")
                    header[k] = v
            else:
                body.append(line)
        try:
            N = int(header["N"])
            tab = cls(N, {}, float(header["beta"]), float(header["sigma"]), header["method"],
                      header["catalog_hash"], header["rates_key"])
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"index cache {path} has a malformed header") from exc
        stale = []
        if tab.catalog_hash != catalog.hash():
            stale.append("catalog")
        if rates is not None and tab.rates_key != rates_key(rates):
            stale.append("arrival rates")
        if beta is not None and tab.beta != beta:
            stale.append("beta")
        if sigma is not None and tab.sigma != sigma:
            stale.append("sigma")
        if method is not None and tab.method != method:
            stale.append("method")
        if stale:
            raise ConfigError(
                f"index cache {path} is stale ({', '.join(stale)} changed); rebuild with --rebuild-index"
            )
        for row in csv.reader(body[1:], dialect="excel-tab"):
            ell, j, n1, n2, v = int(row[0]), int(row[1]), int(row[2]), int(row[3]), float(row[4])
            svc = catalog.service(j)
            if svc.self_shared:
                x = n1
            else:
                x = n1 - n2 if svc.slot_of(ell) == 0 else n2 - n1
            tab.entries.setdefault((ell, j), np.full(2 * N + 1, -np.inf))[x + N] = v
        return tab


def _service_entries(args):
    svc, rates, N, beta, sigma, method = args
    out = {}
    if svc.self_shared:
        ell = svc.types[0]
        arr = np.full(2 * N + 1, -np.inf)
        cf = whittle_index_self_shared(svc, rates[ell])
        arr[N] = cf[SubState(0, 0)]
        arr[N + 1] = cf[SubState(1, 0)]
        out[(ell, svc.id)] = arr
        return out
    lam = (rates[svc.types[0]], rates[svc.types[1]])
    for role in (1, 2):
        ell = svc.types[role - 1]
        out[(ell, svc.id)] = _role_indices(svc, role, lam, N, beta, sigma, method)
    return out


def build_index_table(catalog: ServiceCatalog, rates: dict, N: int,
                      beta: float = DEFAULT_BETA, sigma: float = DEFAULT_SIGMA,
                      method: str = "exact", workers: int = 1) -> IndexTable:
    """Indices for every (type, service) pair.

    ``rates`` maps each type to its arrival rate. Self-shared services use
    the closed form; two-type services the numeric solve for each role.
    """
    jobs = [(s, rates, N, beta, sigma, method) for s in catalog.services]
    entries: dict = {}
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            parts = list(ex.map(_service_entries, jobs, chunksize=16))
    else:
        parts = [_service_entries(j) for j in jobs]
    for p in parts:
        entries.update(p)
    return IndexTable(N, entries, beta, sigma, method, catalog.hash(), rates_key(rates))


@dataclass
class BoundaryCurve:
    state: SubState
    action_slot: int
    samples: list  # (other multiplier, crossing) pairs; crossing is None when absent
    both_optimal: list = field(default_factory=list)


def _fold(m, eta_other: float):
    """Reward array with the slot-2 multiplier folded in."""
    rew = m.rew.copy()
    for c in (2, 3):
        rew[:, c] -= eta_other
    return rew


def boundary_sweep(svc: RsService, arrivals, N: int, grid, slot: int = 1,
                   sigma: float = 1e-9, method: str = "vi") -> list:
    """Crossing of the ``slot`` multiplier for each controllable state and grid value.

    The grid holds values of the other slot's multiplier. Each crossing is
    checked for membership: both values of the swept action must be optimal
    there within the solver's slack.
    """
    if svc.self_shared:
        raise UsageError(f"service {svc.id} is self-shared; its boundaries are vertical lines")
    view, lam = _role_view(svc, slot, arrivals)
    m = build_model(view, lam, N)
    ref = m.index(ZERO)
    curves = []
    for i, s in enumerate(m.states):
        if not (m.mask[i, 1] or m.mask[i, 3]):
            continue
        samples = []
        flags = []
        for e2 in grid:
            rew = _fold(m, float(e2))
            eta, st = kernels.whittle_state(rew, m.u, m.ndst, m.dst, m.prb, m.mask, i, ref,
                                            method == "exact", 1.0, sigma,
                                            MAX_SWEEPS if method == "vi" else MAX_PI_ITER)
            if st != 0 or not math.isfinite(eta):
                samples.append((float(e2), None))
                flags.append(False)
                continue
            sol = solve_average_reward(view, EtaPair(eta, float(e2)), lam, N, tol=max(sigma, 1e-9))
            acts = sol.optimal_actions[s]
            flags.append({a.a1 for a in acts} == {0, 1})
            samples.append((float(e2), float(eta)))
        curves.append(BoundaryCurve(_orient(s, slot, False), slot, samples, flags))
    return curves


@dataclass
class ConsistencyReport:
    ok: bool
    max_spread: float
    max_deviation: float
    orderings_agree: bool
    failures: list

    def lines(self) -> list:
        out = [f"max spread {self.max_spread:.4g}, max deviation {self.max_deviation:.4g}, "
               f"orderings agree: {self.orderings_agree}"]
        out += [f"  {f}" for f in self.failures]
        return out


def _ordering(vals: dict) -> list:
    return [s for s, _ in sorted(vals.items(), key=lambda kv: (-kv[1], kv[0]))]


def verify_priority_consistency(curves: list, whittle: dict, tol: float = 1e-2) -> ConsistencyReport:
    """Compare boundary crossings against single-multiplier indices.

    Checks, per state, that crossings do not move across the grid and match
    the index within ``tol`` (relative to ``max(1, |index|)``), and that
    every grid point orders the states as the indices do.
    """
    failures = []
    max_spread = 0.0
    max_dev = 0.0
    grid = [e for e, _ in curves[0].samples] if curves else []
    for c in curves:
        ref = whittle.get(c.state)
        xs = [v for _, v in c.samples]
        if ref is None or any(v is None for v in xs):
            failures.append(f"state {c.state}: missing crossing or index")
            continue
        spread = max(xs) - min(xs)
        dev = max(abs(v - ref) for v in xs) / max(1.0, abs(ref))
        max_spread = max(max_spread, spread)
        max_dev = max(max_dev, dev)
        if spread >= tol or dev >= tol:
            failures.append(
                f"state ({c.state.n1},{c.state.n2}): index {ref:.6g}, crossings "
                f"{min(xs):.6g}..{max(xs):.6g} (spread {spread:.3g}, deviation {dev:.3g})"
            )
    target = _ordering({c.state: whittle[c.state] for c in curves if c.state in whittle})
    agree = True
    for k, e in enumerate(grid):
        vals = {c.state: c.samples[k][1] for c in curves if c.samples[k][1] is not None}
        if _ordering(vals) != target:
            agree = False
            failures.append(f"ordering at grid value {e} differs from index ordering")
    return ConsistencyReport(not failures, max_spread, max_dev, agree, failures)


def two_type_fixture() -> ServiceCatalog:
    """Two customer types, two self-shared services and one shared service.

    Every service has R = 10, Rbar = 1, C = 0 and mu = 1; use arrival rate
    5 for both types and N = 5.
    """
    mk = lambda j, t, ss: RsService(j, t, ss, 1.0, 10.0, (1.0, 1.0), (1.0, 1.0), (0.0, 0.0))
    services = [mk(1, (1, 1), True), mk(2, (2, 2), True), mk(3, (1, 2), False)]
    return ServiceCatalog(services, {1: [1, 3], 2: [2, 3]})
