"""Dispatch rules for an arriving customer.

These are reference implementations over an explicit :class:`SystemState`.
The simulator's event loop applies the same rules inside the kernels, and
the tests replay simulated traces through these functions to confirm it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InvariantError
from .indices import IndexTable
from .mdp import SubState
from .network import ServiceCatalog

__all__ = [
    "SystemState",
    "Decision",
    "POLICIES",
    "admissible_services",
    "bi_decide",
    "jsq_decide",
    "jlq_decide",
    "myopic_decide",
]

POLICIES = {"bi": 0, "jsq": 1, "jlq": 2, "myopic": 3}


@dataclass
class SystemState:
    """Waiting counts per service: ``counts[j-1] = (n1, n2)`` in service orientation."""

    counts: np.ndarray
    time: float = 0.0

    @classmethod
    def empty(cls, catalog: ServiceCatalog) -> "SystemState":
        return cls(np.zeros((catalog.J, 2), dtype=np.int64))

    def sub(self, j: int) -> SubState:
        n1, n2 = self.counts[j - 1]
        return SubState(int(n1), int(n2))


@dataclass(frozen=True)
class Decision:
    ell: int
    j: int


def _own_partner(catalog, state, ell, j):
    svc = catalog.service(j)
    s = state.sub(j)
    if svc.self_shared:
        return s.n1, s.n1
    if svc.slot_of(ell) == 0:
        return s.n1, s.n2
    return s.n2, s.n1


def _N(catalog, N):
    if N is not None:
        return N
    if catalog.econ is None:
        raise ConfigError("queue capacity N unknown: pass N or attach econ to the catalog")
    return catalog.econ.N


def admissible_services(state: SystemState, ell: int, catalog: ServiceCatalog, N: int | None = None) -> list:
    """Services of type ``ell`` whose state lets them accept the customer."""
    N = _N(catalog, N)
    out = []
    for j in catalog.by_type[ell]:
        own, _ = _own_partner(catalog, state, ell, j)
        cap = 2 if catalog.service(j).self_shared else N
        if own < cap:
            out.append(j)
    if not out:
        raise InvariantError(f"no admissible service for type {ell}")
    return out


def _argmax_first(scores: dict) -> int:
    best = None
    for j in sorted(scores):
        if best is None or scores[j] > scores[best]:
            best = j
    return best


def bi_decide(table: IndexTable, state: SystemState, ell: int, catalog: ServiceCatalog,
              N: int | None = None) -> Decision:
    """Highest index of the current state; ties to the smallest id."""
    scores = {j: table.value(ell, j, state.sub(j), catalog)
              for j in admissible_services(state, ell, catalog, N)}
    return Decision(ell, _argmax_first(scores))


def jsq_decide(state: SystemState, ell: int, catalog: ServiceCatalog, N: int | None = None) -> Decision:
    """Fewest waiting customers of the arriving type; ties to the smallest id."""
    scores = {j: -_own_partner(catalog, state, ell, j)[0]
              for j in admissible_services(state, ell, catalog, N)}
    return Decision(ell, _argmax_first(scores))


def jlq_decide(state: SystemState, ell: int, catalog: ServiceCatalog, N: int | None = None) -> Decision:
    """Most waiting partners; ties to the smallest id."""
    scores = {j: _own_partner(catalog, state, ell, j)[1]
              for j in admissible_services(state, ell, catalog, N)}
    return Decision(ell, _argmax_first(scores))


def myopic_decide(state: SystemState, ell: int, catalog: ServiceCatalog, lam: float,
                  rng: np.random.Generator, N: int | None = None) -> Decision:
    """Largest immediate reward-rate gain ``R_j * lam`` if a partner waits, else 0.

    Ties are broken uniformly at random with ``rng``.
    """
    adm = admissible_services(state, ell, catalog, N)
    scores = {}
    for j in adm:
        partner = _own_partner(catalog, state, ell, j)[1]
        scores[j] = catalog.service(j).reward * lam if partner > 0 else 0.0
    best = max(scores.values())
    ties = [j for j in adm if scores[j] == best]
    if len(ties) == 1:
        return Decision(ell, ties[0])
    return Decision(ell, ties[int(rng.random() * len(ties))])
