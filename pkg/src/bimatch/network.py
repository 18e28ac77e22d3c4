"""Transportation networks and the ride-sharing service catalog.

A network is a single travel source at the origin plus ``L`` destination
types. Each pair of types that can profitably share a vehicle becomes a
ride-sharing (RS) service; every type also gets a self-shared service.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, GeometryError, ParameterizationError

__all__ = [
    "EconParams",
    "ArrivalProfile",
    "CustomerType",
    "NetworkSpec",
    "HexLayout",
    "RsService",
    "ServiceCatalog",
    "check_share_availability",
    "generate_uniform_network",
    "load_real_network",
    "default_data_files",
    "build_services",
    "reneging_rate",
    "reneging_penalty",
    "export_catalog",
]


@dataclass(frozen=True)
class EconParams:
    """Fare, reward and patience parameters shared by all services.

    ``beta`` here is the distance coefficient of the reneging rate, not the
    value-iteration damping factor.
    """

    b: float
    gamma: float
    Q: float
    upsilon: float
    beta: float
    zeta: float
    N: int

    def __post_init__(self):
        if not 1.0 < self.gamma < 2.0:
            raise ParameterizationError(f"gamma must lie in (1, 2), got {self.gamma}")
        for name in ("b", "Q", "upsilon", "beta", "zeta"):
            if not getattr(self, name) > 0:
                raise ParameterizationError(f"{name} must be positive, got {getattr(self, name)}")
        if int(self.N) != self.N or self.N < 1:
            raise ParameterizationError(f"N must be a positive integer, got {self.N}")
        if not self.beta > self.upsilon * self.gamma * self.b:
            raise ParameterizationError(
                "reneging rate must decrease with distance: need beta > upsilon*gamma*b "
                f"({self.beta} <= {self.upsilon * self.gamma * self.b})"
            )

    def with_zeta(self, zeta: float) -> "EconParams":
        return EconParams(self.b, self.gamma, self.Q, self.upsilon, self.beta, zeta, self.N)


@dataclass(frozen=True)
class ArrivalProfile:
    """Piecewise-constant arrival rate in customers per minute.

    ``rates[i]`` applies on ``[edges[i], edges[i+1])``; the last rate holds
    forever unless ``period`` is set, in which case the profile repeats.
    """

    edges: tuple
    rates: tuple
    period: float | None = None

    def __post_init__(self):
        if len(self.edges) != len(self.rates) or not self.edges:
            raise ConfigError("profile needs one rate per interval start")
        if self.edges[0] != 0.0 or any(b <= a for a, b in zip(self.edges, self.edges[1:])):
            raise ConfigError("profile edges must start at 0 and increase")
        if any(r < 0 for r in self.rates):
            raise ConfigError("arrival rates must be nonnegative")
        if self.period is not None and self.period <= self.edges[-1]:
            raise ConfigError("profile period must exceed the last edge")

    @classmethod
    def constant(cls, rate: float) -> "ArrivalProfile":
        return cls((0.0,), (float(rate),))

    @classmethod
    def hourly(cls, rates: Sequence[float], periodic: bool = True) -> "ArrivalProfile":
        edges = tuple(60.0 * h for h in range(len(rates)))
        return cls(edges, tuple(float(r) for r in rates), 60.0 * len(rates) if periodic else None)

    def scaled(self, factor: float) -> "ArrivalProfile":
        return ArrivalProfile(self.edges, tuple(factor * r for r in self.rates), self.period)

    def __call__(self, t: float) -> float:
        if self.period is not None:
            t = math.fmod(t, self.period)
        i = int(np.searchsorted(self.edges, t, side="right")) - 1
        return self.rates[max(i, 0)]

    def breakpoints(self, horizon: float) -> list[float]:
        """Rate-change times in ``[0, horizon)``, starting with 0."""
        if self.period is None:
            return [e for e in self.edges if e < horizon]
        out = []
        k = 0
        while k * self.period < horizon:
            out.extend(k * self.period + e for e in self.edges if k * self.period + e < horizon)
            k += 1
        return out


@dataclass(frozen=True)
class CustomerType:
    id: int
    center: tuple
    distance: float
    demand_weight: float
    profile: ArrivalProfile
    name: str = ""

    def __post_init__(self):
        if not self.distance > 0:
            raise GeometryError(f"type {self.id}: distance must be positive")
        if self.demand_weight < 0:
            raise ConfigError(f"type {self.id}: negative demand weight")


@dataclass(frozen=True)
class NetworkSpec:
    name: str
    types: tuple

    @property
    def L(self) -> int:
        return len(self.types)

    def centers(self) -> np.ndarray:
        return np.array([t.center for t in self.types], dtype=float)

    def distances(self) -> np.ndarray:
        return np.array([t.distance for t in self.types], dtype=float)

    def total_rate(self, t: float) -> float:
        return sum(ct.profile(t) for ct in self.types)


def check_share_availability(d1: float, d2: float, d12: float, econ: EconParams) -> bool:
    """True when dropping the first customer first beats two solo rides.

    ``d1`` and ``d2`` are the customers' own distances from the source and
    ``d12`` the distance between their destinations.
    """
    if not (d1 > 0 and d2 > 0):
        raise GeometryError(f"distances must be positive, got d1={d1}, d2={d2}")
    if d12 < 0:
        raise GeometryError(f"inter-destination distance must be nonnegative, got {d12}")
    return econ.b * (d1 + d2) > econ.gamma * econ.b * (d1 + d12)


@dataclass(frozen=True)
class HexLayout:
    """Hexagonal tessellation trimmed to the 105 cells nearest the cluster centre.

    ``cell_size`` is the hexagon circumradius; ``offset`` places the cluster
    centre relative to the source at the origin.
    """

    cell_size: float = 1.0
    offset: tuple = (11.5, 0.0)
    rings: int = 12
    n_cells: int = 105

    def centers(self) -> np.ndarray:
        R = self.rings
        q, r = np.meshgrid(np.arange(-R, R + 1), np.arange(-R, R + 1), indexing="ij")
        q, r = q.ravel(), r.ravel()
        keep = (np.abs(q) <= R) & (np.abs(r) <= R) & (np.abs(q + r) <= R)
        q, r = q[keep], r[keep]
        x = self.cell_size * math.sqrt(3.0) * (q + r / 2.0)
        y = self.cell_size * 1.5 * r
        rad = np.round(np.hypot(x, y), 9)
        order = np.lexsort((np.arctan2(y, x), rad))
        if len(order) < self.n_cells:
            raise ConfigError(f"hex layout has only {len(order)} cells, need {self.n_cells}")
        pts = np.column_stack([x[order], y[order]])[: self.n_cells]
        return pts + np.asarray(self.offset, dtype=float)


UNIFORM_L = 105


def generate_uniform_network(layout: HexLayout, econ: EconParams, lam: float) -> NetworkSpec:
    """Uniform-demand network: 105 hexagonal destinations, constant rate ``lam`` each."""
    pts = layout.centers()
    if len(pts) != UNIFORM_L:
        raise ConfigError(f"layout yields {len(pts)} cells, expected {UNIFORM_L}")
    prof = ArrivalProfile.constant(lam)
    types = tuple(
        CustomerType(i + 1, (float(p[0]), float(p[1])), float(math.hypot(*p)), 1.0, prof)
        for i, p in enumerate(pts)
    )
    return NetworkSpec("uniform", types)


def _data_rows(path) -> list[list[str]]:
    text = Path(path).read_text()
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    dialect = "excel-tab" if "\t" in lines[0] else "excel"
    rows = list(csv.reader(lines, dialect=dialect))
    return rows[1:]


def default_data_files() -> dict:
    """Paths of the shipped Melbourne demand, centroid and profile tables."""
    base = resources.files("bimatch") / "data"
    return {
        "demand_table": Path(str(base / "melbourne_demand.tsv")),
        "centroid_table": Path(str(base / "melbourne_centroids.csv")),
        "profile_table": Path(str(base / "melbourne_profile.tsv")),
    }


def load_real_network(
    demand_table,
    centroid_table,
    profile_table,
    econ: EconParams,
    km_per_unit: float = 2.0,
    source_index: int = 0,
) -> NetworkSpec:
    """Build a network from district demand weights, centroids and an hourly profile.

    Centroids are given in kilometres and converted to model distance units
    with ``km_per_unit``. Each type's rate is its share of the total weight
    times the hourly total rate.
    """
    demand = _data_rows(demand_table)
    cent = {}
    for row in _data_rows(centroid_table):
        cent[int(row[0])] = (float(row[1]) / km_per_unit, float(row[2]) / km_per_unit)
    prof_rows = _data_rows(profile_table)
    hours = [int(r[0]) for r in prof_rows]
    if hours != list(range(len(hours))):
        raise ConfigError("profile table hours must run 0, 1, 2, ... in order")
    total = ArrivalProfile.hourly([float(r[1]) for r in prof_rows])
    if source_index not in cent:
        raise ConfigError(f"centroid table lacks the source row {source_index}")
    src = np.asarray(cent[source_index])
    weights = []
    for row in demand:
        w = float(row[2])
        if w < 0:
            raise ConfigError(f"district {row[0]} has negative demand weight")
        if int(row[0]) not in cent:
            raise ConfigError(f"district {row[0]} ({row[1]}) has no centroid")
        weights.append(w)
    if len(cent) - 1 != len(demand):
        raise ConfigError(f"{len(demand)} demand rows but {len(cent) - 1} district centroids")
    wsum = sum(weights)
    if not wsum > 0:
        raise ConfigError("demand weights sum to zero")
    types = []
    for row, w in zip(demand, weights):
        idx = int(row[0])
        c = np.asarray(cent[idx]) - src
        types.append(
            CustomerType(
                idx,
                (float(c[0]), float(c[1])),
                float(math.hypot(*c)),
                w,
                total.scaled(w / wsum),
                name=row[1],
            )
        )
    if [t.id for t in types] != list(range(1, len(types) + 1)):
        raise ConfigError("demand table indices must run 1..L")
    return NetworkSpec("melbourne", tuple(types))


def reneging_rate(R_j: float, d: float, econ: EconParams) -> float:
    """Patience rate ``exp(-upsilon R_j - beta d)`` per minute."""
    expo = econ.upsilon * R_j + econ.beta * d
    if not expo > 0:
        raise ParameterizationError(f"reneging exponent must be positive, got {expo}")
    return math.exp(-expo)


def reneging_penalty(mu: float, zeta: float) -> float:
    """Penalty ``-zeta ln mu`` charged when a customer reneges."""
    if not 0.0 < mu < 1.0:
        raise ParameterizationError(f"reneging rate must lie in (0, 1), got {mu}")
    return -zeta * math.log(mu)


@dataclass(frozen=True)
class RsService:
    """One ride-sharing service, stored with its drop-off order.

    Tuples are indexed by slot: slot 0 is the first-dropped type. For a
    self-shared service both slots describe the same type.
    """

    id: int
    types: tuple
    self_shared: bool
    shared_distance: float
    reward: float
    ns_rewards: tuple
    reneging_rates: tuple
    penalties: tuple

    def slot_of(self, ell: int) -> int:
        if ell == self.types[0]:
            return 0
        if ell == self.types[1]:
            return 1
        raise ConfigError(f"type {ell} is not served by service {self.id}")

    def renege_reward(self, slot: int) -> float:
        """Net reward ``Rbar - C`` when a customer in ``slot`` reneges."""
        return self.ns_rewards[slot] - self.penalties[slot]

    def swapped(self) -> "RsService":
        """Same service with the two slots exchanged."""
        return RsService(
            self.id,
            self.types[::-1],
            self.self_shared,
            self.shared_distance,
            self.reward,
            self.ns_rewards[::-1],
            self.reneging_rates[::-1],
            self.penalties[::-1],
        )


@dataclass
class ServiceCatalog:
    services: list
    by_type: dict
    econ: EconParams | None = None
    _hash: str | None = field(default=None, repr=False, compare=False)

    @property
    def J(self) -> int:
        return len(self.services)

    def service(self, j: int) -> RsService:
        return self.services[j - 1]

    def hash(self) -> str:
        """Content hash over exact float bits; keys the index cache."""
        if self._hash is None:
            h = hashlib.sha256()
            for s in self.services:
                vals = (s.shared_distance, s.reward, *s.ns_rewards, *s.reneging_rates, *s.penalties)
                h.update(f"{s.id}:{s.types}:{int(s.self_shared)}:".encode())
                h.update(":".join(float(v).hex() for v in vals).encode())
                h.update(b";")
            if self.econ is not None:
                h.update(repr(self.econ).encode())
            self._hash = h.hexdigest()[:16]
        return self._hash

    def check(self) -> None:
        """Verify catalog invariants; raise ConfigError on the first failure."""
        for ell, js in self.by_type.items():
            if not any(self.service(j).self_shared for j in js):
                raise ConfigError(f"type {ell} has no self-shared service")
            for j in js:
                if ell not in self.service(j).types:
                    raise ConfigError(f"service {j} listed for type {ell} it does not serve")
        for s in self.services:
            for ell in set(s.types):
                if s.id not in self.by_type.get(ell, ()):
                    raise ConfigError(f"service {s.id} missing from type {ell}'s list")


def _make_service(sid, first, second, shared, d, econ) -> RsService:
    R = 2.0 * econ.Q - econ.gamma * econ.b * shared
    rbar = tuple(econ.Q - econ.b * d[k] for k in (first, second))
    mus = tuple(reneging_rate(R, d[k], econ) for k in (first, second))
    pens = tuple(reneging_penalty(m, econ.zeta) for m in mus)
    return RsService(
        sid, (first + 1, second + 1), first == second, float(shared), R, rbar, mus, pens
    )


def build_services(spec: NetworkSpec, econ: EconParams) -> ServiceCatalog:
    """Enumerate self-shared services, then one service per available pair.

    Self-shared services take ids 1..L in type order; pair services follow
    in lexicographic order of the unordered type pair.
    """
    P = spec.centers()
    d = spec.distances()
    L = spec.L
    cand = [(l, l, float(d[l])) for l in range(L)]
    for a in range(L):
        for c in range(a + 1, L):
            d12 = float(math.hypot(*(P[a] - P[c])))
            opts = []
            for first, second in ((a, c), (c, a)):
                if check_share_availability(d[first], d[second], d12, econ):
                    opts.append((d[first] + d12, first, second))
            if opts:
                shared, first, second = min(opts, key=lambda o: (o[0], o[1]))
                cand.append((first, second, float(shared)))
    bad = []
    for first, second, shared in cand:
        R = 2.0 * econ.Q - econ.gamma * econ.b * shared
        rb = [econ.Q - econ.b * d[k] for k in (first, second)]
        if not (R > 0 and min(rb) > 0):
            bad.append((first + 1, second + 1, R, min(rb)))
    if bad:
        head = ", ".join(f"types {a}-{b} (R={r:.3g}, Rbar={m:.3g})" for a, b, r, m in bad[:5])
        raise ParameterizationError(
            f"Q={econ.Q} leaves {len(bad)} services with nonpositive rewards: {head}"
        )
    services = [_make_service(i + 1, f, s, sh, d, econ) for i, (f, s, sh) in enumerate(cand)]
    by_type = {ell: [] for ell in range(1, L + 1)}
    for s in services:
        for ell in sorted(set(s.types)):
            by_type[ell].append(s.id)
    cat = ServiceCatalog(services, by_type, econ)
    cat.check()
    return cat


def export_catalog(catalog: ServiceCatalog, path) -> None:
    """Write every service parameter as tab-separated text."""
    cols = ["j", "l1", "l2", "self_shared", "shared_distance", "R", "Rbar1", "Rbar2",
            "mu1", "mu2", "C1", "C2"]
    with open(path, "w", newline="") as f:
        w = csv.writer(f, dialect="excel-tab", lineterminator="\n")
        w.writerow(cols)
        for s in catalog.services:
            w.writerow([s.id, *s.types, int(s.self_shared), repr(s.shared_distance), repr(s.reward),
                        *map(repr, s.ns_rewards), *map(repr, s.reneging_rates),
                        *map(repr, s.penalties)])


def iter_pairs(catalog: ServiceCatalog) -> Iterable[RsService]:
    return (s for s in catalog.services if not s.self_shared)
