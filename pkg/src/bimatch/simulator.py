"""Discrete-event simulation of the full matching system.

Events are drawn by an exponential race over all arrival streams and all
waiting customers' patience clocks. Arrival rates are piecewise constant;
when a draw would cross a rate change the clock stops at the change and
the race is redrawn, which is exact by memorylessness.

Rewards are booked at events: ``R_j`` per match, ``Rbar - C`` per renege.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from ._backend import kernels
from .errors import ConfigError, InvariantError
from .indices import IndexTable, rates_key
from .network import ArrivalProfile, NetworkSpec, ServiceCatalog
from .policies import POLICIES

__all__ = [
    "Event",
    "SimulationMetrics",
    "ReplicationSummary",
    "CompiledSystem",
    "SimulationJob",
    "arrival_segments",
    "make_rng",
    "sample_next_event",
    "simulate",
    "replicate",
    "t_halfwidth",
    "summarize",
    "network_profiles",
]

HOUR = 60.0


@dataclass(frozen=True)
class Event:
    kind: str  # "arrival", "renege" or "edge"
    time: float
    label: object = None


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 stream for one replication."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def sample_next_event(rates: dict, t: float, interval_end: float, rng: np.random.Generator) -> Event:
    """One step of the exponential race.

    ``rates`` maps event labels to rates. Returns an ``"edge"`` event at
    ``interval_end`` when the draw crosses it or when all rates are zero.
    """
    items = [(k, r) for k, r in rates.items() if r > 0]
    if any(r < 0 for r in rates.values()):
        raise ConfigError("event rates must be nonnegative")
    total = sum(r for _, r in items)
    x = rng.random()
    dt = -math.log(1.0 - x) / total if total > 0 else math.inf
    if t + dt >= interval_end:
        return Event("edge", interval_end)
    v = rng.random() * total
    acc = 0.0
    for k, r in items:
        acc += r
        if v < acc:
            break
    kind = k[0] if isinstance(k, tuple) else "arrival"
    return Event(kind, t + dt, k)


def arrival_segments(profiles: Sequence[ArrivalProfile], horizon: float):
    """Common rate-change grid: ``edges`` (K+1, last inf) and ``rates`` (K, L)."""
    pts = sorted({0.0, *(e for p in profiles for e in p.breakpoints(horizon))})
    edges = np.array(pts + [math.inf])
    rates = np.array([[p(e) for p in profiles] for e in pts], dtype=float).reshape(len(pts), len(profiles))
    return edges, rates


@dataclass
class CompiledSystem:
    """Catalog flattened into the arrays the event loop reads."""

    catalog: ServiceCatalog
    N: int
    sv_self: np.ndarray
    sv_R: np.ndarray
    sv_mu: np.ndarray
    sv_rnc: np.ndarray
    tp_ptr: np.ndarray
    tp_svc: np.ndarray
    tp_slot: np.ndarray

    @classmethod
    def build(cls, catalog: ServiceCatalog, N: int) -> "CompiledSystem":
        J = catalog.J
        sv_self = np.array([s.self_shared for s in catalog.services], dtype=np.uint8)
        sv_R = np.array([s.reward for s in catalog.services], dtype=float)
        sv_mu = np.array([s.reneging_rates for s in catalog.services], dtype=float).reshape(J, 2)
        sv_rnc = np.array([(s.renege_reward(0), s.renege_reward(1)) for s in catalog.services],
                          dtype=float).reshape(J, 2)
        types = sorted(catalog.by_type)
        if types != list(range(1, len(types) + 1)):
            raise ConfigError("customer types must be numbered 1..L")
        ptr = [0]
        svc, slot = [], []
        for ell in types:
            for j in catalog.by_type[ell]:
                svc.append(j - 1)
                slot.append(catalog.service(j).slot_of(ell))
            ptr.append(len(svc))
        return cls(catalog, N, sv_self, sv_R, sv_mu, sv_rnc, np.array(ptr, dtype=np.int64),
                   np.array(svc, dtype=np.int64), np.array(slot, dtype=np.int64))

    @property
    def L(self) -> int:
        return len(self.tp_ptr) - 1


@dataclass
class SimulationMetrics:
    horizon: float  # length of the measured window, minutes
    cumulative_reward: float
    average_reward: float
    delay_count: int
    delay_mean: float
    delay_var: float
    arrivals: int
    matches: int
    reneges: int
    waiting: int
    mean_queue: float
    hourly_reward_rate: np.ndarray
    n_events: int
    final_counts: np.ndarray = field(repr=False)
    trace: tuple = field(default=(), repr=False)

    def conserved(self) -> bool:
        return self.arrivals == 2 * self.matches + self.reneges + self.waiting

    def scalars(self) -> dict:
        return {
            "average_reward": self.average_reward,
            "mean_delay": self.delay_mean,
            "match_rate": self.matches / self.horizon if self.horizon else 0.0,
            "renege_fraction": self.reneges / self.arrivals if self.arrivals else 0.0,
            "mean_queue": self.mean_queue,
        }


def _tables_for(index, rates, cs: CompiledSystem):
    """Dense index tables and the table used in each interval."""
    K, L = rates.shape
    E = len(cs.tp_svc)
    if index is None:
        return np.zeros((1, max(E, 1), 2 * cs.N + 1)), np.zeros(K, dtype=np.int64)
    if isinstance(index, IndexTable):
        return index.dense(cs.catalog)[None, :, :], np.zeros(K, dtype=np.int64)
    keys, dense, tbl_of = {}, [], []
    for k in range(K):
        key = rates_key({ell: rates[k, ell - 1] for ell in range(1, L + 1)})
        if key not in index:
            raise ConfigError(f"no index table for the arrival rates of interval {k}")
        if key not in keys:
            keys[key] = len(dense)
            dense.append(index[key].dense(cs.catalog))
        tbl_of.append(keys[key])
    return np.stack(dense), np.array(tbl_of, dtype=np.int64)


def simulate(catalog: ServiceCatalog | CompiledSystem, policy: str, profiles: Sequence[ArrivalProfile],
             horizon: float, warmup: float | None = None, seed: int = 0,
             index: IndexTable | dict | None = None, N: int | None = None,
             include_reneged: bool = True, trace_cap: int = 0, bin_width: float = HOUR,
             backend=None) -> SimulationMetrics:
    """Run one replication.

    ``profiles[l-1]`` is type ``l``'s arrival profile. ``index`` is needed for
    ``policy="bi"``: one table, or a dict keyed by :func:`rates_key` with one
    table per distinct set of interval rates. ``warmup`` defaults to 10% of
    the horizon. Setting ``include_reneged=False`` leaves reneged customers
    out of the delay statistics.
    """
    if policy not in POLICIES:
        raise ConfigError(f"unknown policy {policy!r}; choose from {sorted(POLICIES)}")
    if isinstance(catalog, CompiledSystem):
        cs = catalog
    else:
        if N is None:
            if catalog.econ is None:
                raise ConfigError("queue capacity N unknown")
            N = catalog.econ.N
        cs = CompiledSystem.build(catalog, N)
    if warmup is None:
        warmup = 0.1 * horizon
    if not (horizon > warmup >= 0):
        raise ConfigError(f"need horizon > warmup >= 0, got {horizon}, {warmup}")
    if len(profiles) != cs.L:
        raise ConfigError(f"{len(profiles)} arrival profiles for {cs.L} customer types")
    if policy == "bi" and index is None:
        raise ConfigError("policy 'bi' needs an index table")
    edges, rates = arrival_segments(profiles, horizon)
    cum = np.cumsum(rates, axis=1)
    tables, tbl_of = _tables_for(index if policy == "bi" else None, rates, cs)
    k = kernels if backend is None else backend
    raw = k.simulate(cs.sv_self, cs.sv_R, cs.sv_mu, cs.sv_rnc, cs.tp_ptr, cs.tp_svc, cs.tp_slot,
                     edges, cum, tables, tbl_of, POLICIES[policy], cs.N, float(horizon),
                     float(warmup), float(bin_width), bool(include_reneged), make_rng(seed),
                     int(trace_cap))
    window = horizon - warmup
    n = raw["delay_count"]
    m = SimulationMetrics(
        horizon=window,
        cumulative_reward=raw["reward_window"],
        average_reward=raw["reward_window"] / window,
        delay_count=n,
        delay_mean=raw["delay_mean"],
        delay_var=raw["delay_m2"] / (n - 1) if n > 1 else 0.0,
        arrivals=raw["arrivals"],
        matches=raw["matches"],
        reneges=raw["reneges"],
        waiting=raw["waiting"],
        mean_queue=raw["queue_area"] / window,
        hourly_reward_rate=raw["bins"] / bin_width,
        n_events=raw["n_events"],
        final_counts=raw["final_counts"],
        trace=(raw["trace_t"], raw["trace_code"]),
    )
    if raw["status"] != 0:
        tail = list(zip(m.trace[0][-5:].tolist(), m.trace[1][-5:].tolist()))
        raise InvariantError(f"state safety violated at t={raw['time']:.6g}; trace tail {tail}")
    if not m.conserved():
        raise InvariantError(
            f"conservation broken: {m.arrivals} arrivals vs 2*{m.matches} + {m.reneges} + {m.waiting}"
        )
    if int(m.final_counts.sum()) != m.waiting:
        raise InvariantError("final queue counts disagree with the waiting tally")
    return m


@dataclass
class SimulationJob:
    """Picklable ``seed -> SimulationMetrics`` closure for :func:`replicate`."""

    system: CompiledSystem
    policy: str
    profiles: tuple
    horizon: float
    warmup: float | None = None
    index: object = None
    include_reneged: bool = True
    bin_width: float = HOUR

    def __call__(self, seed: int) -> SimulationMetrics:
        return simulate(self.system, self.policy, self.profiles, self.horizon, self.warmup, seed,
                        index=self.index, include_reneged=self.include_reneged,
                        bin_width=self.bin_width)


def t_halfwidth(values, level: float = 0.95) -> float:
    """Student-t confidence half-width of the mean."""
    v = np.asarray(values, dtype=float)
    n = len(v)
    if n < 2:
        return math.inf
    sd = v.std(ddof=1)
    if sd == 0:
        return 0.0
    return float(stats.t.ppf(0.5 + level / 2, n - 1) * sd / math.sqrt(n))


@dataclass
class ReplicationSummary:
    metrics: list
    means: dict
    halfwidths: dict
    flags: dict  # metric -> True when the half-width exceeds the relative target

    def row(self, name: str) -> tuple:
        return self.means[name], self.halfwidths[name]


def summarize(metrics: list, rel_target: float = 0.03) -> ReplicationSummary:
    names = list(metrics[0].scalars())
    means, hws, flags = {}, {}, {}
    for name in names:
        vals = [m.scalars()[name] for m in metrics]
        means[name] = float(np.mean(vals))
        hws[name] = t_halfwidth(vals)
        flags[name] = hws[name] > rel_target * abs(means[name])
    return ReplicationSummary(metrics, means, hws, flags)


def replicate(run: Callable[[int], SimulationMetrics], n_reps: int, base_seed: int,
              workers: int = 1, rel_target: float = 0.03) -> ReplicationSummary:
    """Run ``run(base_seed + i)`` for ``i < n_reps`` and pool the results.

    Results are merged in replication order regardless of ``workers``;
    ``run`` must be picklable when ``workers > 1``.
    """
    if n_reps < 2:
        raise ConfigError("need at least two replications for a confidence interval")
    seeds = [base_seed + i for i in range(n_reps)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            metrics = list(ex.map(run, seeds))
    else:
        metrics = [run(s) for s in seeds]
    return summarize(metrics, rel_target)


def network_profiles(spec: NetworkSpec) -> list:
    return [t.profile for t in spec.types]
